"""Configuration parsing and all text file formats.

Config files are line-based sectioned text: one ``[simulation]`` block and
one ``[species]`` block per species. Keys match the field names of the
corresponding types; unknown keys are errors, and parse errors carry line
numbers. Snapshots, diagnostics, fits, Cauchy tables and profiles are
columnar text with 17 significant digits so round trips are exact.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import model
from .model import ConfigError, DistributionRecipe, SimulationConfig, SpeciesSpec

SCHEMA_COMMENT = "# vsl-schema v1"

DIAG_COLUMNS = ["t", "sup_E", "sup_rho", "sup_j", "sup_gradE", "mu", "vel_diam",
                "res_E", "res_gradE", "res_rho", "res_j", "M",
                "J1", "J2", "J3", "E_kin", "E_pot", "E_vp"]

FITS_COLUMNS = ["quantity", "model", "p_hat", "m_hat", "amplitude",
                "t_a", "t_b", "rms", "ci"]


class ConfigSyntaxError(ConfigError):
    pass


def _fmt(x):
    return format(float(x), ".17g")


# --------------------------------------------------------------------------
# Config dialect

_SIM_KEYS = {"engine", "force_sign", "softening", "dt_initial", "t_end",
             "snapshot_times", "thread_hint", "z_prefactor"}
_SPECIES_KEYS = {"name", "charge", "mass", "count", "seed", "kind",
                 "center_x", "center_v", "radius_x", "radius_v", "sigma_v",
                 "total_number"}


def _parse_vector(value, lineno):
    try:
        parts = [float(p) for p in value.replace(",", " ").split()]
    except ValueError:
        raise ConfigSyntaxError(f"line {lineno}: cannot parse vector {value!r}")
    return tuple(parts)


def _parse_snapshot_times(value, lineno):
    tokens = [tok.strip() for tok in value.split(",") if tok.strip()]
    dyadic = False
    explicit = []
    for tok in tokens:
        if tok == "dyadic":
            dyadic = True
        else:
            try:
                explicit.append(float(tok))
            except ValueError:
                raise ConfigSyntaxError(f"line {lineno}: bad snapshot time {tok!r}")
    return dyadic, tuple(explicit)


def parse_config(text):
    """Parse the sectioned config dialect into a validated SimulationConfig."""
    sim = {}
    species_blocks = []
    current = None
    current_name = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigSyntaxError(f"line {lineno}: unterminated section header")
            section = line[1:-1].strip()
            if section == "simulation":
                current, current_name = sim, "simulation"
            elif section == "species":
                species_blocks.append({"__line__": lineno})
                current, current_name = species_blocks[-1], "species"
            else:
                raise ConfigSyntaxError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigSyntaxError(f"line {lineno}: expected key = value")
        if current is None:
            raise ConfigSyntaxError(f"line {lineno}: key outside any section")
        key, value = (part.strip() for part in line.split("=", 1))
        allowed = _SIM_KEYS if current_name == "simulation" else _SPECIES_KEYS
        if key not in allowed:
            raise ConfigSyntaxError(
                f"line {lineno}: unknown key {key!r} in [{current_name}]")
        if key in current:
            raise ConfigSyntaxError(f"line {lineno}: duplicate key {key!r}")
        current[key] = (value, lineno)
    return build_config(sim, species_blocks)


def _species_from_block(block):
    lineno = block.pop("__line__", 0)

    def take(key, default=None):
        if key in block:
            return block[key][0]
        return default

    name = take("name")
    if name is None:
        raise ConfigError(f"[species] block at line {lineno}: missing name")
    kind = take("kind")
    if kind is None:
        raise ConfigError(f"species {name!r}: missing kind")
    recipe = DistributionRecipe(
        kind=kind,
        center_x=_parse_vector(take("center_x", "0 0 0"), lineno),
        center_v=_parse_vector(take("center_v", "0 0 0"), lineno),
        radius_x=float(take("radius_x", 1.0)),
        radius_v=float(take("radius_v")) if take("radius_v") is not None else None,
        sigma_v=float(take("sigma_v")) if take("sigma_v") is not None else None,
        total_number=float(take("total_number", 1.0)),
    )
    return SpeciesSpec(
        name=name,
        charge=float(take("charge", 1.0)),
        mass=float(take("mass", 1.0)),
        count=int(take("count", 1000)),
        init=recipe,
        seed=int(take("seed", 0)),
    )


def build_config(sim, species_blocks):
    if not species_blocks:
        raise ConfigError("config declares no [species] block")
    species = tuple(_species_from_block(dict(b)) for b in species_blocks)

    def take(key, default=None):
        if key in sim:
            return sim[key][0]
        return default

    t_end = float(take("t_end", 64.0))
    snap_raw = take("snapshot_times")
    if snap_raw is None:
        snapshot_times = model.dyadic_snapshot_times(t_end)
    else:
        dyadic, explicit = _parse_snapshot_times(snap_raw, sim["snapshot_times"][1])
        snapshot_times = tuple(sorted(
            set(model.dyadic_snapshot_times(t_end) if dyadic else ()) | set(explicit)))
    softening_raw = take("softening", "auto")
    softening = None if str(softening_raw).strip() == "auto" else float(softening_raw)
    config = SimulationConfig(
        species=species,
        engine=take("engine", "direct-3d"),
        force_sign=take("force_sign", "plasma"),
        softening=softening,
        dt_initial=float(take("dt_initial", 0.01)),
        t_end=t_end,
        snapshot_times=snapshot_times,
        thread_hint=int(take("thread_hint", 0)),
        z_prefactor=take("z_prefactor", "charge-over-mass"),
    )
    config.validate()
    return config


def apply_overrides(config, overrides):
    """Apply ``key=value`` overrides after parsing.

    Simulation keys are addressed directly (``t_end=128``); species keys as
    ``species.NAME.key`` (recipe keys included).
    """
    sim_updates = {}
    species_updates = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, value = (p.strip() for p in item.split("=", 1))
        if key.startswith("species."):
            parts = key.split(".")
            if len(parts) != 3:
                raise ConfigError(f"override key {key!r} must be species.NAME.key")
            _, name, skey = parts
            if skey not in _SPECIES_KEYS:
                raise ConfigError(f"unknown species override key {skey!r}")
            species_updates.setdefault(name, {})[skey] = value
        elif key in _SIM_KEYS:
            sim_updates[key] = value
        else:
            raise ConfigError(f"unknown override key {key!r}")

    if species_updates:
        new_species = []
        matched = set()
        for spec in config.species:
            if spec.name in species_updates:
                matched.add(spec.name)
                upd = species_updates[spec.name]
                recipe = spec.init
                recipe_kw = {}
                spec_kw = {}
                for k, v in upd.items():
                    if k in ("kind",):
                        recipe_kw[k] = v
                    elif k in ("center_x", "center_v"):
                        recipe_kw[k] = _parse_vector(v, 0)
                    elif k in ("radius_x", "radius_v", "sigma_v", "total_number"):
                        recipe_kw[k] = float(v)
                    elif k in ("charge", "mass"):
                        spec_kw[k] = float(v)
                    elif k in ("count", "seed"):
                        spec_kw[k] = int(v)
                    elif k == "name":
                        spec_kw[k] = v
                if recipe_kw:
                    recipe = replace(recipe, **recipe_kw)
                new_species.append(replace(spec, init=recipe, **spec_kw))
            else:
                new_species.append(spec)
        missing = set(species_updates) - matched
        if missing:
            raise ConfigError(f"override names no species: {sorted(missing)}")
        config = replace(config, species=tuple(new_species))

    if sim_updates:
        kw = {}
        for k, v in sim_updates.items():
            if k == "snapshot_times":
                dyadic, explicit = _parse_snapshot_times(v, 0)
                t_end = float(sim_updates.get("t_end", config.t_end))
                kw[k] = tuple(sorted(
                    set(model.dyadic_snapshot_times(t_end) if dyadic else ())
                    | set(explicit)))
            elif k in ("dt_initial", "t_end"):
                kw[k] = float(v)
            elif k == "softening":
                kw[k] = None if v == "auto" else float(v)
            elif k == "thread_hint":
                kw[k] = int(v)
            else:
                kw[k] = v
        if "t_end" in kw and "snapshot_times" not in kw:
            kw["snapshot_times"] = model.dyadic_snapshot_times(kw["t_end"])
        config = replace(config, **kw)
    config.validate()
    return config


def read_config(path, overrides=()):
    with open(path, "r", encoding="utf-8") as fh:
        config = parse_config(fh.read())
    if overrides:
        config = apply_overrides(config, overrides)
    return config


def species_seed_override(config, seed):
    return replace(config, species=tuple(
        replace(s, seed=int(seed)) for s in config.species))


def render_config(config):
    """Canonical text rendering; parse_config(render_config(c)) == c."""
    lines = ["[simulation]",
             f"engine = {config.engine}",
             f"force_sign = {config.force_sign}",
             "softening = auto" if config.softening is None
             else f"softening = {_fmt(config.softening)}",
             f"dt_initial = {_fmt(config.dt_initial)}",
             f"t_end = {_fmt(config.t_end)}",
             "snapshot_times = " + ", ".join(_fmt(t) for t in config.snapshot_times),
             f"thread_hint = {config.thread_hint}",
             f"z_prefactor = {config.z_prefactor}"]
    for s in config.species:
        r = s.init
        lines += ["", "[species]",
                  f"name = {s.name}",
                  f"charge = {_fmt(s.charge)}",
                  f"mass = {_fmt(s.mass)}",
                  f"count = {s.count}",
                  f"seed = {s.seed}",
                  f"kind = {r.kind}",
                  "center_x = " + ", ".join(_fmt(c) for c in r.center_x),
                  "center_v = " + ", ".join(_fmt(c) for c in r.center_v),
                  f"radius_x = {_fmt(r.radius_x)}"]
        if r.radius_v is not None:
            lines.append(f"radius_v = {_fmt(r.radius_v)}")
        if r.sigma_v is not None:
            lines.append(f"sigma_v = {_fmt(r.sigma_v)}")
        lines.append(f"total_number = {_fmt(r.total_number)}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Snapshot files


def snapshot_filename(index):
    return f"snapshot_{index:04d}.txt"


def write_snapshot(path, t, ensemble):
    lines = []
    if ensemble.kind == "spherical":
        lines.append("t species id r w ell weight")
        for s in ensemble.species:
            for i in range(s.count):
                lines.append(" ".join([
                    _fmt(t), s.name, str(int(s.ids[i])), _fmt(s.r[i]),
                    _fmt(s.w[i]), _fmt(s.ell[i]), _fmt(s.weight[i])]))
    else:
        lines.append("t species id x1 x2 x3 v1 v2 v3 weight")
        for s in ensemble.species:
            for i in range(s.count):
                lines.append(" ".join(
                    [_fmt(t), s.name, str(int(s.ids[i]))]
                    + [_fmt(c) for c in s.x[i]] + [_fmt(c) for c in s.v[i]]
                    + [_fmt(s.weight[i])]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_snapshot(path, config):
    """Rebuild (t, ParticleEnsemble) from a snapshot file; exact round trip."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        rows = [line.split() for line in fh if line.strip()]
    spherical = "r" in header
    by_species = {}
    t = None
    for row in rows:
        t = float(row[0])
        by_species.setdefault(row[1], []).append(row[2:])
    spec_by_name = {s.name: s for s in config.species}
    species = []
    for spec in config.species:
        if spec.name not in by_species:
            raise ConfigError(f"snapshot {path} lacks species {spec.name!r}")
        data = np.array([[float(v) for v in row] for row in by_species[spec.name]])
        ids = data[:, 0].astype(np.int64)
        if spherical:
            species.append(model.SpeciesShells(
                spec.name, spec.charge, spec.mass, ids,
                data[:, 1], data[:, 2], data[:, 3],
                np.zeros(len(ids)), data[:, 4]))
        else:
            species.append(model.SpeciesParticles(
                spec.name, spec.charge, spec.mass, ids,
                data[:, 1:4], data[:, 4:7], data[:, 7]))
    kind = "spherical" if spherical else "3d"
    return t, model.ParticleEnsemble(kind, species)


# --------------------------------------------------------------------------
# CSV formats (schema v1)


def write_diagnostics_csv(path, series):
    cols = DIAG_COLUMNS + [f"M_{name}" for name in series.species_names]
    lines = [SCHEMA_COMMENT, ",".join(cols)]
    for row in series.rows:
        vals = [row.t, row.sup_E, row.sup_rho, row.sup_j, row.sup_gradE,
                row.mu, row.vel_diam, row.res_E, row.res_gradE, row.res_rho,
                row.res_j, row.M, row.J[0], row.J[1], row.J[2],
                row.e_kin, row.e_pot, row.e_vp]
        vals += [row.species_masses[name] for name in series.species_names]
        lines.append(",".join(_fmt(v) for v in vals))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path):
    """Read a schema-v1 CSV into {column: array}; text columns stay strings."""
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
        if first != SCHEMA_COMMENT:
            raise ConfigError(f"{path}: missing schema comment {SCHEMA_COMMENT!r}")
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    cols = {}
    for k, name in enumerate(header):
        vals = [row[k] for row in rows]
        try:
            cols[name] = np.array([float(v) for v in vals])
        except ValueError:
            cols[name] = np.array(vals, dtype=object)
    return cols


def write_fits_csv(path, fit_rows):
    """fit_rows: list of (quantity, FitResult)."""
    lines = [SCHEMA_COMMENT, ",".join(FITS_COLUMNS)]
    for quantity, fit in fit_rows:
        lines.append(",".join([
            quantity, fit.model, _fmt(fit.exponent), _fmt(fit.log_power),
            _fmt(fit.amplitude), _fmt(fit.window[0]), _fmt(fit.window[1]),
            _fmt(fit.rms), _fmt(fit.ci)]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_cauchy_csv(path, table, scattering=None):
    lines = [SCHEMA_COMMENT, "quantity,t,value"]
    for q, d in table.increments.items():
        for t, v in zip(table.times, d):
            lines.append(f"{q},{_fmt(t)},{_fmt(v)}")
    if scattering is not None:
        times, series = scattering
        for t, v in zip(times, series["combined"]):
            lines.append(f"scatter,{_fmt(t)},{_fmt(v)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_overlay_csv(path, overlay_rows):
    """overlay_rows: iterable of (t, xi, t2E, Einf)."""
    lines = [SCHEMA_COMMENT, "t,xi,t2E,Einf"]
    for t, xi, e_scaled, e_inf in overlay_rows:
        lines.append(",".join(_fmt(v) for v in (t, xi, e_scaled, e_inf)))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# Profile file


def write_profile(path, profile):
    lines = []
    if profile.kind == "spherical":
        lines.append("species id speed weight z1 z2")
        for sp in profile.species:
            speeds = sp.speeds()
            for i in range(len(sp.ids)):
                z = sp.z_inf[i] if sp.z_inf is not None else (0.0, 0.0)
                lines.append(" ".join([
                    sp.name, str(int(sp.ids[i])), _fmt(speeds[i]),
                    _fmt(sp.weight[i]), _fmt(z[0]), _fmt(z[1])]))
    else:
        lines.append("species id u1 u2 u3 weight z1 z2 z3")
        for sp in profile.species:
            for i in range(len(sp.ids)):
                z = sp.z_inf[i] if sp.z_inf is not None else (0.0, 0.0, 0.0)
                lines.append(" ".join(
                    [sp.name, str(int(sp.ids[i]))]
                    + [_fmt(c) for c in sp.v_inf[i]]
                    + [_fmt(sp.weight[i])] + [_fmt(c) for c in z]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# vsl-profile v1 kind={profile.kind} eps_v={_fmt(profile.eps_v)}"
                 f" t={_fmt(profile.t_built)}\n")
        fh.write("\n".join(lines) + "\n")


def read_profile(path, config):
    from . import diagnostics as diag

    with open(path, "r", encoding="utf-8") as fh:
        meta = fh.readline().split()
        kind = next(p.split("=")[1] for p in meta if p.startswith("kind="))
        eps_v = float(next(p.split("=")[1] for p in meta if p.startswith("eps_v=")))
        t_built = float(next(p.split("=")[1] for p in meta if p.startswith("t=")))
        fh.readline()  # column header
        rows = [line.split() for line in fh if line.strip()]
    by_species = {}
    for row in rows:
        by_species.setdefault(row[0], []).append(row[1:])
    species = []
    for spec in config.species:
        data = np.array([[float(v) for v in row] for row in by_species[spec.name]])
        ids = data[:, 0].astype(np.int64)
        if kind == "spherical":
            v_inf = np.stack([data[:, 1], np.zeros(len(ids))], axis=1)
            weight = data[:, 2]
            z_inf = data[:, 3:5]
        else:
            v_inf = data[:, 1:4]
            weight = data[:, 4]
            z_inf = data[:, 5:8]
        species.append(diag.SpeciesProfile(
            spec.name, spec.charge, spec.mass, ids, v_inf, weight, z_inf))
    return diag.AsymptoticProfile(kind, species, eps_v, t_built)
