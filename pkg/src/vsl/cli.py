"""Command-line surface: simulate, diagnose, fit, report.

Exit codes: 0 success, 1 usage error (flags, paths, config validation),
2 runtime failure. Partial outputs of a failed invocation are removed.
Environment: VSL_THREADS overrides thread_hint, VSL_SEED overrides every
species seed (CI smoke runs).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from dataclasses import replace

from . import diagnostics, engine, io, model

META_HEADER = "# vsl-run-meta v1"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="vsl", description="Collisionless plasma laboratory")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p, needs_config=False, needs_in=False):
        if needs_config:
            p.add_argument("--config", required=True, help="config file path")
        if needs_in:
            p.add_argument("--in", dest="indir", required=True, help="input directory")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE", help="config override (repeatable)")
        p.add_argument("--quiet", action="store_true")

    add_common(sub.add_parser("simulate", help="run a simulation"), needs_config=True)
    add_common(sub.add_parser("diagnose", help="recompute diagnostics from snapshots"),
               needs_in=True)
    add_common(sub.add_parser("fit", help="fit decay exponents from diagnostics CSV"),
               needs_in=True)
    add_common(sub.add_parser("report", help="summarize fits against expected rates"),
               needs_in=True)
    return parser


def _apply_env(config):
    threads = os.environ.get("VSL_THREADS")
    if threads:
        config = io.apply_overrides(config, [f"thread_hint={int(threads)}"])
    seed = os.environ.get("VSL_SEED")
    if seed:
        config = io.species_seed_override(config, int(seed))
    return config


class _OutputTracker:
    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.created = []

    def path(self, name):
        p = os.path.join(self.out_dir, name)
        self.created.append(p)
        return p

    def cleanup(self):
        for p in self.created:
            if os.path.exists(p):
                try:
                    os.remove(p)
                except OSError:
                    pass


def _write_meta(path, eps, h0, baseline):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(META_HEADER + "\n")
        fh.write(f"eps={eps!r}\n")
        fh.write(f"h0={h0!r}\n")
        fh.write(f"e_vp0={baseline['e_vp']!r}\n")
        fh.write(f"e_kin0={baseline['e_kin']!r}\n")


def _read_meta(path):
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != META_HEADER:
            raise io.ConfigError(f"{path}: unexpected meta header")
        for line in fh:
            if "=" in line:
                k, v = line.strip().split("=", 1)
                out[k] = float(v)
    return out


def _overlay_rows(result):
    """(t, xi, |t^2 E|, |E_inf|) curves for the profile-overlay figure."""
    rows = []
    profile = result.profile
    lo, hi = profile.omega_v()
    smax = float(np.max(np.abs([lo, hi])))
    xi = np.linspace(smax / 32.0, 1.25 * smax, 48)
    if profile.kind == "spherical":
        xi_vec = np.stack([xi, np.zeros_like(xi)], axis=1)
    else:
        xi_vec = np.stack([xi, np.zeros_like(xi), np.zeros_like(xi)], axis=1)
    einf = np.linalg.norm(profile.einf(xi_vec), axis=1)
    for frame in result.frames:
        t = frame.t
        ens = frame.ensemble
        if ens.kind == "spherical":
            s = ens.species[0]
            order = np.argsort(s.r, kind="stable")
            from .fields import FOUR_PI, enclosed_charge
            E_t = np.abs(enclosed_charge(
                s.r[order], (s.charge * s.weight)[order], xi * t)) / (FOUR_PI * (xi * t) ** 2)
        else:
            from . import fields
            blocks = diagnostics.field_blocks(ens.species)
            E_t = np.linalg.norm(
                fields.species_field_sum(xi_vec * t, blocks, result.softening), axis=1)
        for k in range(xi.size):
            rows.append((t, xi[k], t**2 * E_t[k], einf[k]))
    return rows


def cmd_simulate(args, holder):
    config = io.read_config(args.config, args.override)
    config = _apply_env(config)
    os.makedirs(args.out, exist_ok=True)
    tracker = holder["tracker"] = _OutputTracker(args.out)

    ckpt_path = os.path.join(args.out, "checkpoint.bin")
    state = None
    if os.path.exists(ckpt_path):
        state = engine.checkpoint_load(ckpt_path)
        if io.render_config(state.config) != io.render_config(config):
            raise UsageError(
                f"{args.out} holds a checkpoint for a different config; "
                "remove it or choose another output directory")
        if not args.quiet:
            print(f"resuming from checkpoint at t = {state.t:g}")

    def on_snapshot(st):
        idx = st.next_snapshot_index - 1
        io.write_snapshot(tracker.path(io.snapshot_filename(idx)),
                          st.frames[-1].t, st.frames[-1].ensemble)
        engine.checkpoint_save(st, tracker.path("checkpoint.bin"))

    try:
        result = engine.run_simulation(
            config if state is None else None, state=state,
            on_snapshot=on_snapshot, quiet=args.quiet)
    except engine.BlowUpError as exc:
        dump = os.path.join(args.out, "blowup_dump.txt")
        with open(dump, "w", encoding="utf-8") as fh:
            fh.write(f"{exc}\nconfig:\n{io.render_config(config)}")
        raise

    io.write_diagnostics_csv(tracker.path("diagnostics.csv"), result.series)
    io.write_profile(tracker.path("profile.txt"), result.profile)
    with open(tracker.path("config.cfg"), "w", encoding="utf-8") as fh:
        resolved = replace(result.config, softening=result.softening)
        fh.write(io.render_config(resolved))
    _write_meta(tracker.path("run_meta.txt"), result.softening,
                result.bandwidth0, result.series.reference)
    try:
        table = diagnostics.convergence_probe(
            result.records, result.profile, engine.z_prefactor_of(result.config))
        scat = diagnostics.scattering_residual(
            result.records, result.profile, engine.z_prefactor_of(result.config))
        io.write_cauchy_csv(tracker.path("cauchy.csv"), table, scat)
    except diagnostics.DiagnosticsError:
        pass  # too few dyadic times for a Cauchy table
    io.write_overlay_csv(tracker.path("overlay.csv"), _overlay_rows(result))
    if not args.quiet:
        drift = result.series.energy_drift()
        print(f"done: {len(result.frames)} snapshots, "
              f"final relative energy drift {drift[-1]:.3e}")
    return tracker


def cmd_diagnose(args, holder):
    cfg_path = os.path.join(args.indir, "config.cfg")
    if not os.path.exists(cfg_path):
        raise UsageError(f"{args.indir} has no config.cfg (run simulate first)")
    config = io.read_config(cfg_path, args.override)
    os.makedirs(args.out, exist_ok=True)
    tracker = holder["tracker"] = _OutputTracker(args.out)

    snaps = sorted(f for f in os.listdir(args.indir)
                   if f.startswith("snapshot_") and f.endswith(".txt"))
    if not snaps:
        raise UsageError(f"{args.indir} holds no snapshot files")
    frames = []
    for name in snaps:
        t, ens = io.read_snapshot(os.path.join(args.indir, name), config)
        frames.append(engine.Frame(t, ens))
    profile = io.read_profile(os.path.join(args.indir, "profile.txt"), config)

    meta_path = os.path.join(args.indir, "run_meta.txt")
    if os.path.exists(meta_path):
        meta = _read_meta(meta_path)
        eps, h0 = meta["eps"], meta["h0"]
        reference = {"e_vp": meta["e_vp0"], "e_kin": meta["e_kin0"]}
    else:
        eps = config.softening if config.softening is not None else (
            model.default_softening(frames[0].ensemble))
        h0 = engine._bandwidth0(frames[0].ensemble)
        first = diagnostics.conservation_report(
            frames[0].ensemble, eps, config.force_sigma())
        reference = {"e_vp": first.e_vp, "e_kin": first.kinetic}

    series = diagnostics.DiagnosticsSeries(
        rows=[], species_names=tuple(s.name for s in config.species),
        reference=reference)
    for frame in frames:
        series.rows.append(diagnostics.snapshot_row(
            frame.ensemble, frame.t, config, eps, h0, profile))
    io.write_diagnostics_csv(tracker.path("diagnostics.csv"), series)

    if frames[0].ensemble.kind == "3d":
        records = engine.records_from_frames(frames, "3d")
        try:
            table = diagnostics.convergence_probe(
                records, profile, engine.z_prefactor_of(config))
            scat = diagnostics.scattering_residual(
                records, profile, engine.z_prefactor_of(config))
            io.write_cauchy_csv(tracker.path("cauchy.csv"), table, scat)
        except diagnostics.DiagnosticsError:
            pass
    if not args.quiet:
        print(f"diagnosed {len(frames)} snapshots -> {args.out}")
    return tracker


def _fit_window(args_overrides, times):
    t_a = None
    t_b = None
    for item in args_overrides:
        if item.startswith("t_a="):
            t_a = float(item.split("=", 1)[1])
        elif item.startswith("t_b="):
            t_b = float(item.split("=", 1)[1])
    t_max = float(np.max(times))
    if t_b is None:
        t_b = t_max
    if t_a is None:
        t_a = 50.0 if t_max >= 200.0 else max(4.0, t_max / 16.0)
    return t_a, t_b


def cmd_fit(args, holder):
    diag_path = os.path.join(args.indir, "diagnostics.csv")
    if not os.path.exists(diag_path):
        raise UsageError(f"{args.indir} has no diagnostics.csv")
    cols = io.read_csv(diag_path)
    os.makedirs(args.out, exist_ok=True)
    tracker = holder["tracker"] = _OutputTracker(args.out)
    t = cols["t"]
    t_a, t_b = _fit_window(args.override, t)
    rows = []
    for quantity in ("sup_E", "sup_rho"):
        y = cols[quantity]
        ok = y > 0
        if np.sum(ok & (t >= t_a) & (t <= t_b)) >= 5:
            rows.append((quantity, diagnostics.fit_decay(
                t[ok], y[ok], "power", (t_a, t_b))))
            rows.append((quantity, diagnostics.fit_decay(
                t[ok], y[ok], "power-log", (t_a, t_b))))
    cauchy_path = os.path.join(args.indir, "cauchy.csv")
    if os.path.exists(cauchy_path):
        ctab = io.read_csv(cauchy_path)
        for quantity in ("V", "Y", "Z", "scatter"):
            sel = ctab["quantity"] == quantity
            tc, yc = ctab["t"][sel].astype(float), ctab["value"][sel].astype(float)
            good = yc > 0
            if np.sum(good & (tc >= 8.0)) >= 5:
                rows.append((f"cauchy_{quantity}", diagnostics.fit_decay(
                    tc[good], yc[good], "power", (8.0, float(tc.max())))))
    if not rows:
        raise UsageError("no fittable series in the diagnostics CSV")
    io.write_fits_csv(tracker.path("fits.csv"), rows)
    if not args.quiet:
        for quantity, fit in rows:
            print(f"{quantity:12s} {fit.model:10s} p_hat={fit.exponent:7.3f} "
                  f"m_hat={fit.log_power:6.2f} rms={fit.rms:.3e}")
    return tracker


EXPECTED_BANDS = {
    # quantity -> (expected exponent, band) for the generic (sharp) regime
    # and the fast regime of an identically cancelling neutral plasma
    "sup_E": ((2.0, (1.8, 2.2)), (3.0, (2.5, 3.5))),
    "sup_rho": ((3.0, (2.7, 3.3)), (4.0, (3.5, 4.5))),
    "cauchy_V": ((1.0, (0.7, 1.3)), (2.0, (1.5, 2.5))),
}


def cmd_report(args, holder):
    fits_path = os.path.join(args.indir, "fits.csv")
    if not os.path.exists(fits_path):
        raise UsageError(f"{args.indir} has no fits.csv (run fit first)")
    fits = io.read_csv(fits_path)
    os.makedirs(args.out, exist_ok=True)
    tracker = holder["tracker"] = _OutputTracker(args.out)

    fast_regime = False
    profile_path = os.path.join(args.indir, "profile.txt")
    cfg_path = os.path.join(args.indir, "config.cfg")
    if os.path.exists(profile_path) and os.path.exists(cfg_path):
        config = io.read_config(cfg_path)
        profile = io.read_profile(profile_path, config)
        gross = sum(abs(s.charge) * float(np.sum(s.weight)) for s in profile.species)
        if abs(profile.net_weight()) < 1e-10 * gross and profile.max_einf() < 1e-8:
            fast_regime = True

    lines = ["decay-rate report" + (" (fast neutral regime)" if fast_regime else "")]
    for quantity, (generic, fast) in EXPECTED_BANDS.items():
        sel = (fits["quantity"] == quantity) & (fits["model"] == "power")
        if not np.any(sel):
            continue
        p_hat = float(fits["p_hat"][sel][0])
        expected, band = fast if fast_regime else generic
        verdict = "PASS" if band[0] <= p_hat <= band[1] else "FAIL"
        lines.append(
            f"{quantity}: exponent {p_hat:.3f} (expected ~{expected:g}, "
            f"band {band[0]:g}-{band[1]:g}): {verdict}")
    text = "\n".join(lines) + "\n"
    with open(tracker.path("report.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    if not args.quiet:
        print(text, end="")
    return tracker


def main(argv=None):
    parser = build_parser()
    holder = {}
    try:
        args = parser.parse_args(argv)
        handler = {"simulate": cmd_simulate, "diagnose": cmd_diagnose,
                   "fit": cmd_fit, "report": cmd_report}[args.subcommand]
        handler(args, holder)
        return 0
    except (UsageError, model.ConfigError, FileNotFoundError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        if "tracker" in holder:
            holder["tracker"].cleanup()
        return 1
    except Exception as exc:  # runtime failure: remove partial outputs
        print(f"error: {exc}", file=sys.stderr)
        if "tracker" in holder:
            holder["tracker"].cleanup()
        return 2


if __name__ == "__main__":
    sys.exit(main())
