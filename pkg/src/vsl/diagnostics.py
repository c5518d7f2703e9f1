"""Asymptotic diagnostics: sup-norm series, self-similar residuals, spatial
averages, dyadic Cauchy tables, conservation audits, and decay-exponent fits.

Sup norms are probe-set maxima (particle locations plus a co-moving grid),
which bound the true essential sup from below; all rate estimates are made
on these finite-set proxies. Charge-signed quantities are compared only
after both sides receive identical kernel smoothing, so the discretization
bias cancels at leading order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fields
from .fields import FOUR_PI


class DiagnosticsError(ValueError):
    pass


class FitError(DiagnosticsError):
    pass


# --------------------------------------------------------------------------
# Velocity densities (spatial averages)


@dataclass
class VelocityGrid:
    """Uniform 3D velocity grid: cell (i,j,k) spans origin + h*[i, i+1) etc."""

    origin: np.ndarray
    h: float
    dims: tuple

    def cell_volume(self):
        return self.h**3


@dataclass
class SpeedGrid:
    """Radial speed bins for isotropic (shell) ensembles; cell volumes are the
    exact spherical-annulus volumes so the mass identity stays exact."""

    edges: np.ndarray

    @classmethod
    def equal_volume(cls, s_max, n_bins):
        """Edges s_k = s_max (k/n)^(1/3): every bin holds the same
        velocity-volume, so sup-norm differences are not dominated by the
        nearly empty innermost shells."""
        k = np.arange(n_bins + 1, dtype=float)
        return cls(s_max * np.cbrt(k / n_bins))

    def cell_volume(self):
        e = self.edges
        return (FOUR_PI / 3.0) * (e[1:] ** 3 - e[:-1] ** 3)

    def centers(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])


@dataclass
class VelocityDensity:
    grid: object                     # VelocityGrid or SpeedGrid
    F: dict                          # species name -> number per velocity-volume
    P: np.ndarray                    # charge-signed net density
    totals: dict                     # species name -> binned weight total

    def mass_identity_error(self, name):
        """| sum_cells F h^3 - binned total | ; zero up to summation round-off."""
        vol = self.grid.cell_volume()
        return abs(float(np.sum(self.F[name] * vol)) - self.totals[name])


def grid_covering_velocities(frames_or_vel, h=None, n=24, pad=1.05):
    """A VelocityGrid covering the given velocity arrays with some margin."""
    vs = np.concatenate([np.atleast_2d(v) for v in frames_or_vel], axis=0)
    lo = vs.min(axis=0)
    hi = vs.max(axis=0)
    mid = 0.5 * (lo + hi)
    half = pad * 0.5 * np.maximum(hi - lo, 1e-12)
    if h is None:
        h = float(np.max(2 * half)) / n
    dims = tuple(int(np.ceil(2 * hw / h)) + 1 for hw in half)
    origin = mid - 0.5 * np.array(dims) * h
    return VelocityGrid(origin, h, dims)


def spatial_average(species_list, grid):
    """Bin each particle's weight into its velocity cell; exact mass identity.

    F^alpha(v) = integral of f^alpha over x, estimated as weight per
    velocity-volume on the grid. Raises if any particle falls outside.
    """
    F = {}
    totals = {}
    P = None
    vol = grid.cell_volume()
    for s in species_list:
        idx = np.floor((s.v - grid.origin) / grid.h).astype(int)
        if np.any(idx < 0) or np.any(idx >= np.array(grid.dims)[None, :]):
            bad = s.v[np.any((idx < 0) | (idx >= np.array(grid.dims)[None, :]), axis=1)]
            raise DiagnosticsError(
                f"species {s.name!r}: velocities outside grid, extent "
                f"{bad.min(axis=0)} .. {bad.max(axis=0)}"
            )
        f = np.zeros(grid.dims)
        np.add.at(f, (idx[:, 0], idx[:, 1], idx[:, 2]), s.weight)
        totals[s.name] = float(np.sum(f))
        f /= vol
        F[s.name] = f
        P = s.charge * f if P is None else P + s.charge * f
    return VelocityDensity(grid, F, P, totals)


def speed_average(shell_species, grid):
    """Speed-binned velocity density for isotropic shell ensembles."""
    vol = grid.cell_volume()
    F = {}
    totals = {}
    P = None
    for s in shell_species:
        sp = s.speed()
        idx = np.searchsorted(grid.edges, sp, side="right") - 1
        idx = np.where(sp == grid.edges[-1], len(vol) - 1, idx)
        if np.any(idx < 0) or np.any(idx >= len(vol)):
            raise DiagnosticsError(
                f"species {s.name!r}: speeds outside grid, max {sp.max():g} "
                f"vs edge {grid.edges[-1]:g}"
            )
        f = np.zeros(len(vol))
        np.add.at(f, idx, s.weight)
        totals[s.name] = float(np.sum(f))
        f = f / vol
        F[s.name] = f
        P = s.charge * f if P is None else P + s.charge * f
    return VelocityDensity(grid, F, P, totals)


# --------------------------------------------------------------------------
# Asymptotic profile


@dataclass
class SpeciesProfile:
    name: str
    charge: float
    mass: float
    ids: np.ndarray
    v_inf: np.ndarray           # (n, d): limiting velocities (d=2 in-plane for shells)
    weight: np.ndarray
    z_inf: np.ndarray | None = None

    def charge_weights(self):
        return self.charge * self.weight

    def speeds(self):
        return np.linalg.norm(self.v_inf, axis=1)


@dataclass
class AsymptoticProfile:
    """Empirical limiting measure: weighted limiting velocities per species,
    the induced velocity-space field, and end-of-run modified positions."""

    kind: str                   # '3d' or 'spherical'
    species: list
    eps_v: float
    t_built: float
    _einf_cache: tuple | None = field(default=None, repr=False, compare=False)

    def net_weight(self):
        """Charge-signed total; equals the net charge exactly."""
        return float(sum(s.charge * np.sum(s.weight) for s in self.species))

    def _atoms(self):
        v = np.concatenate([s.v_inf for s in self.species], axis=0)
        cw = np.concatenate([s.charge_weights() for s in self.species])
        return v, cw

    def _atom_blocks(self):
        return [(s.v_inf, s.charge_weights()) for s in self.species]

    def _einf_radial(self):
        """Tabulated softened-shell field magnitude on a fine speed grid.

        The empirical limiting measure is atomic, so the induced field is
        evaluated with Plummer softening eps_v; tabulation keeps repeated
        evaluations cheap (linear interpolation on 2048 nodes)."""
        if self._einf_cache is None:
            v_atoms, cw = self._atoms()
            speeds = np.linalg.norm(v_atoms, axis=1)
            smax = max(float(np.max(speeds)), 1e-300)
            grid = np.linspace(0.0, 1.5 * smax, 2048)
            vals = fields.softened_shell_field_radial(grid, speeds, cw, self.eps_v)
            object.__setattr__(self, "_einf_cache", (grid, vals, smax))
        return self._einf_cache

    def einf(self, v_points):
        """Limiting field E_inf(v) induced by the net limiting density."""
        if self.kind == "spherical":
            v = np.atleast_2d(np.asarray(v_points, dtype=float))
            s = np.linalg.norm(v, axis=1)
            grid, vals, smax = self._einf_radial()
            # beyond the table the measure is fully enclosed: pure 1/s^2 tail
            mag = np.where(
                s <= grid[-1], np.interp(s, grid, vals),
                self.net_weight() / (FOUR_PI * np.maximum(s, 1e-300) ** 2))
            out = np.zeros_like(v)
            ok = s > 0.0
            out[ok] = v[ok] * (mag[ok] / s[ok])[:, None]
            return out
        return fields.species_field_sum(
            np.atleast_2d(np.asarray(v_points, dtype=float)),
            self._atom_blocks(), self.eps_v)

    def grad_einf(self, v_points):
        if self.kind != "3d":
            raise DiagnosticsError("grad_einf tensor available for 3d profiles only")
        return fields.species_gradient_sum(
            np.atleast_2d(np.asarray(v_points, dtype=float)),
            self._atom_blocks(), self.eps_v)

    def max_einf(self, n_probe=64):
        """Max |E_inf| over a probe set spanning the limiting support."""
        v_atoms, cw = self._atoms()
        if self.kind == "spherical":
            smax = float(np.max(np.linalg.norm(v_atoms, axis=1)))
            xi = np.linspace(smax / 32.0, 1.25 * smax, n_probe)
            probes = np.stack([xi, np.zeros_like(xi)], axis=1)
        else:
            probes = v_atoms[:: max(1, v_atoms.shape[0] // n_probe)]
        return float(np.max(np.linalg.norm(self.einf(probes), axis=1)))

    def pinf_smoothed_radial(self, xi, h):
        """Kernel-smoothed net limiting density for isotropic profiles."""
        v_atoms, cw = self._atoms()
        return fields.radial_density(xi, np.linalg.norm(v_atoms, axis=1), cw, h)

    def pinf_smoothed_3d(self, v_points, h):
        return fields.species_density(
            np.atleast_2d(np.asarray(v_points, dtype=float)),
            self._atom_blocks(), h)

    def omega_v(self):
        """Bounding box of the limiting velocities (per the isotropic embedding
        for shells: a cube of half-side max speed)."""
        if self.kind == "spherical":
            smax = max(float(np.max(s.speeds())) for s in self.species)
            return (-smax * np.ones(3), smax * np.ones(3))
        v = np.concatenate([s.v_inf for s in self.species], axis=0)
        return (v.min(axis=0), v.max(axis=0))

    def omega_z(self):
        zs = [s.z_inf for s in self.species if s.z_inf is not None]
        if not zs:
            return None
        if self.kind == "spherical":
            zmax = max(float(np.max(np.linalg.norm(z, axis=1))) for z in zs)
            return (-zmax * np.ones(3), zmax * np.ones(3))
        z = np.concatenate(zs, axis=0)
        return (z.min(axis=0), z.max(axis=0))


def default_velocity_softening(v_atoms):
    """0.05 x the velocity-space spacing estimate of the atom cloud."""
    v = np.atleast_2d(v_atoms)
    span = float(np.max(v.max(axis=0) - v.min(axis=0)))
    span = max(span, 1e-12)
    return 0.05 * span / max(4.0, v.shape[0] ** (1.0 / 3.0))


def build_profile(last_frame_ensemble, t_end, records, prefactor_of, eps_v=None):
    """Freeze the end-of-run profile: V_inf ~ V(t_end), Z_inf = Z(t_end).

    The t^-1 convergence of the velocity characteristics makes the induced
    error in E_inf of order 1/t_end.
    """
    kind = last_frame_ensemble.kind
    species_profiles = []
    for s in last_frame_ensemble.species:
        if kind == "spherical":
            v_inf = s.plane_velocity()
        else:
            v_inf = s.v.copy()
        species_profiles.append(
            SpeciesProfile(s.name, s.charge, s.mass, s.ids.copy(), v_inf, s.weight.copy())
        )
    if eps_v is None:
        all_v = np.concatenate([sp.v_inf for sp in species_profiles], axis=0)
        if kind == "3d":
            eps_v = default_velocity_softening(all_v)
        else:
            # a quarter of the 3D velocity-space spacing of the isotropized
            # atoms: small enough to keep the limiting-field bias below the
            # self-similar residuals, large enough to keep E_inf smooth on
            # the scale that velocity characteristics move per dyadic step
            smax = max(float(np.max(np.linalg.norm(all_v, axis=1))), 1e-300)
            eps_v = 0.25 * smax * (FOUR_PI / 3.0) ** (1.0 / 3.0) / all_v.shape[0] ** (1.0 / 3.0)
    profile = AsymptoticProfile(kind, species_profiles, eps_v, float(t_end))
    if records:
        for sp in profile.species:
            rec = records[sp.name]
            Z = rec.Z(profile.einf, prefactor_of(sp))
            sp.z_inf = Z[-1]
    return profile


# --------------------------------------------------------------------------
# Snapshot-level field evaluations


def shell_probe_radii(r_sorted, n_quantile=256, n_uniform=64):
    take = max(1, r_sorted.size // n_quantile)
    probes = r_sorted[::take]
    rmax = r_sorted[-1]
    grid = np.linspace(rmax / n_uniform, 1.05 * rmax, n_uniform)
    return np.unique(np.concatenate([probes, grid]))


def shell_field_stats(shells, h):
    """Sup-norm proxies for a shell species: exact sup_E, KDE sup_rho / sup_j,
    and the field-gradient scale max(|rho - 2E/r|, E/r)."""
    order = np.argsort(shells.r, kind="stable")
    rs = shells.r[order]
    cw = (shells.charge * shells.weight)[order]
    cwv = (shells.charge * shells.weight * shells.w)[order]
    csum = np.cumsum(cw)
    # right-limit field at each shell: enclosed charge including ties
    take = np.searchsorted(rs, rs, side="right") - 1
    E_right = csum[take] / (FOUR_PI * rs**2)
    sup_E = float(np.max(np.abs(E_right))) if rs.size else 0.0

    probes = shell_probe_radii(rs)
    rho = fields.radial_density(probes, rs, cw, h)
    jr = fields.radial_density(probes, rs, cwv, h)
    q_in = fields.enclosed_charge(rs, cw, probes)
    E_p = q_in / (FOUR_PI * probes**2)
    grad_radial = rho - 2.0 * E_p / probes
    grad_trans = E_p / probes
    sup_grad = float(np.max(np.maximum(np.abs(grad_radial), np.abs(grad_trans))))
    return {
        "sup_E": sup_E,
        "sup_rho": float(np.max(np.abs(rho))),
        "sup_j": float(np.max(np.abs(jr))),
        "sup_gradE": sup_grad,
        "probes": probes,
    }


def probe_grid_3d(positions, n_side=4, pad=1.02):
    lo = positions.min(axis=0)
    hi = positions.max(axis=0)
    mid, half = 0.5 * (lo + hi), pad * 0.5 * (hi - lo) + 1e-9
    axes = [np.linspace(m - hw, m + hw, n_side) for m, hw in zip(mid, half)]
    g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return g


def field_blocks(species_list):
    return [(s.x, s.charge * s.weight) for s in species_list]


def current_blocks(species_list, component):
    return [(s.x, s.charge * s.weight * s.v[:, component]) for s in species_list]


def make_field_snapshot(species_list, t, query_points, eps, h):
    """Evaluate E, gradE, rho and j of a 3D ensemble at the query points."""
    query_points = np.atleast_2d(np.asarray(query_points, dtype=float))
    blocks = field_blocks(species_list)
    E = fields.species_field_sum(query_points, blocks, eps)
    gradE = fields.species_gradient_sum(query_points, blocks, eps)
    rho = fields.species_density(query_points, blocks, h)
    j = np.stack(
        [fields.species_density(query_points, current_blocks(species_list, k), h)
         for k in range(3)], axis=1)
    return fields.FieldSnapshot(float(t), query_points, E, gradE, rho, j, eps, h)


def field_stats_3d(species_list, eps, h):
    pos = np.concatenate([s.x for s in species_list], axis=0)
    blocks = field_blocks(species_list)
    grid = probe_grid_3d(pos, n_side=5)
    targets = np.concatenate([pos, grid], axis=0)
    E = fields.species_field_sum(targets, blocks, eps)
    rho = fields.species_density(targets, blocks, h)
    j = np.stack(
        [fields.species_density(targets, current_blocks(species_list, k), h)
         for k in range(3)], axis=1)
    # gradient probes stay off the particles: the field at a particle drops
    # its own contribution (zero numerator), but the gradient would pick up
    # the particle's own Plummer curvature ~ c / eps^3, a softening artifact
    gE = fields.species_gradient_sum(grid, blocks, eps)
    return {
        "sup_E": float(np.max(np.linalg.norm(E, axis=1))),
        "sup_rho": float(np.max(np.abs(rho))),
        "sup_j": float(np.max(np.linalg.norm(j, axis=1))),
        "sup_gradE": float(np.max(np.abs(gE))),
    }


# --------------------------------------------------------------------------
# Self-similar residuals


def residuals_from_values(t, xi, E_t, gradE_t, rho_t, j_t, Einf, gradEinf, Pinf_s):
    """Core residual computation from already-evaluated field values.

    Returns max-over-probe values of |t^2 E - E_inf|, |t^3 gradE - gradE_inf|,
    |t^3 rho - P_inf-smoothed| and |t^3 j - xi P_inf-smoothed|. Shapes are
    (m,), (m,d), or (m,d,d); norms are max-abs over the trailing axes.
    """
    if np.size(xi) == 0:
        raise DiagnosticsError("empty probe set")

    def supdiff(a, b):
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        return float(np.max(np.abs(d)))

    res_E = supdiff(t**2 * np.asarray(E_t), Einf)
    res_grad = supdiff(t**3 * np.asarray(gradE_t), gradEinf)
    res_rho = supdiff(t**3 * np.asarray(rho_t), Pinf_s)
    xi_arr = np.asarray(xi, dtype=float)
    j_scaled = t**3 * np.asarray(j_t)
    if j_scaled.ndim == 1:
        jinf = xi_arr * np.asarray(Pinf_s)
    else:
        jinf = xi_arr * np.asarray(Pinf_s)[:, None]
    res_j = supdiff(j_scaled, jinf)
    return res_E, res_grad, res_rho, res_j


def self_similar_residuals_spherical(shells, t, profile, h0):
    """Radial residuals of the monocharged run against the frozen profile."""
    v_atoms, cw_atoms = profile._atoms()
    speeds = np.linalg.norm(v_atoms, axis=1)
    smax = float(np.max(speeds))
    xi = np.linspace(smax / 32.0, 1.25 * smax, 64)
    r_probe = xi * t
    h_t = h0 * t

    order = np.argsort(shells.r, kind="stable")
    rs = shells.r[order]
    cw = (shells.charge * shells.weight)[order]
    cwv = (shells.charge * shells.weight * shells.w)[order]
    E_t = fields.enclosed_charge(rs, cw, r_probe) / (FOUR_PI * r_probe**2)
    rho_t = fields.radial_density(r_probe, rs, cw, h_t)
    j_t = fields.radial_density(r_probe, rs, cwv, h_t)
    grad_t = np.stack([rho_t - 2.0 * E_t / r_probe, E_t / r_probe], axis=1)

    xi_vec = np.stack([xi, np.zeros_like(xi)], axis=1)
    Einf = np.linalg.norm(profile.einf(xi_vec), axis=1)
    Pinf = profile.pinf_smoothed_radial(xi, h0)
    # gradient eigenvalues of a radial field: radial rho - 2E/r, transverse E/r;
    # t^3 (E_t / (xi t)) = t^2 E_t / xi matches E_inf / xi on the profile side
    gradinf = np.stack([Pinf - 2.0 * Einf / xi, Einf / xi], axis=1)
    return residuals_from_values(t, xi, E_t, grad_t, rho_t, j_t, Einf, gradinf, Pinf)


def self_similar_residuals_3d(species_list, t, profile, h0, eps, n_side=4):
    """Residuals on a co-moving probe grid over the limiting support."""
    lo, hi = profile.omega_v()
    axes = [np.linspace(l + 0.1 * (h - l), h - 0.1 * (h - l), n_side)
            for l, h in zip(lo, hi)]
    xi = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    x_probe = xi * t
    blocks = field_blocks(species_list)
    h_t = h0 * t
    E_t = fields.species_field_sum(x_probe, blocks, eps)
    grad_t = fields.species_gradient_sum(x_probe, blocks, eps)
    rho_t = fields.species_density(x_probe, blocks, h_t)
    j_t = np.stack(
        [fields.species_density(x_probe, current_blocks(species_list, k), h_t)
         for k in range(3)], axis=1)
    Einf = profile.einf(xi)
    gradinf = profile.grad_einf(xi)
    Pinf = profile.pinf_smoothed_3d(xi, h0)
    return residuals_from_values(t, xi, E_t, grad_t, rho_t, j_t, Einf, gradinf, Pinf)


# --------------------------------------------------------------------------
# Dyadic Cauchy tables


@dataclass
class ConvergenceTable:
    """d_Q(t) = max_i |Q_i(2t) - Q_i(t)| over dyadic pairs, per quantity."""

    times: np.ndarray
    increments: dict            # quantity -> (n_pairs,) array
    slopes: dict                # quantity -> fitted log-log slope


def dyadic_pairs(times, rel_tol=1e-9):
    times = np.asarray(times, dtype=float)
    pairs = []
    for i, t in enumerate(times):
        j = np.argmin(np.abs(times - 2.0 * t))
        if abs(times[j] - 2.0 * t) <= rel_tol * max(1.0, 2.0 * t):
            pairs.append((i, int(j)))
    return pairs


def loglog_slope(t, y):
    good = np.asarray(y) > 0
    if np.sum(good) < 2:
        return float("nan")
    A = np.stack([np.ones(int(np.sum(good))), np.log(np.asarray(t)[good])], axis=1)
    sol, *_ = np.linalg.lstsq(A, np.log(np.asarray(y)[good]), rcond=None)
    return float(sol[1])


def convergence_probe(records, profile=None, prefactor_of=None, t_min_fit=10.0):
    """Cauchy-rate table for V, Y and (when a profile is given) Z.

    Reports increments and fitted slopes; makes no pass/fail decision.
    """
    any_rec = next(iter(records.values()))
    times = np.asarray(any_rec.times, dtype=float)
    pairs = dyadic_pairs(times)
    if len(pairs) < 4:
        raise DiagnosticsError("need at least 4 dyadic times for the Cauchy table")
    quantities = {"V": {}, "Y": {}}
    per_species = {}
    for name, rec in records.items():
        data = {"V": rec.V, "Y": rec.Y()}
        if profile is not None:
            sp = next(s for s in profile.species if s.name == name)
            data["Z"] = rec.Z(profile.einf, prefactor_of(sp))
            quantities.setdefault("Z", {})
        per_species[name] = data
    t_lo = np.array([times[i] for i, _ in pairs])
    increments = {}
    slopes = {}
    for q in quantities:
        d = np.zeros(len(pairs))
        for name, data in per_species.items():
            arr = data[q]
            for k, (i, j) in enumerate(pairs):
                diff = np.linalg.norm(arr[j] - arr[i], axis=-1)
                d[k] = max(d[k], float(np.max(diff)))
        increments[q] = d
        sel = t_lo >= t_min_fit
        slopes[q] = loglog_slope(t_lo[sel], d[sel])
    return ConvergenceTable(t_lo, increments, slopes)


def scattering_residual(records, profile, prefactor_of):
    """s(t) = max_i |(Z_i, V_i)(t) - (Z_i, V_i)(t_end)| per species and combined."""
    if not records:
        raise DiagnosticsError("empty records")
    out = {}
    combined = None
    times = None
    for name, rec in records.items():
        sp = next(s for s in profile.species if s.name == name)
        Z = rec.Z(profile.einf, prefactor_of(sp))
        V = rec.V
        state = np.concatenate([Z, V], axis=-1)
        diff = np.linalg.norm(state - state[-1], axis=-1)   # (n_times, n)
        s_t = diff.max(axis=1)
        out[name] = s_t
        combined = s_t if combined is None else np.maximum(combined, s_t)
        times = np.asarray(rec.times, dtype=float)
    out["combined"] = combined
    return times, out


# --------------------------------------------------------------------------
# Decay fits


@dataclass
class FitResult:
    model: str
    exponent: float            # p in y ~ A t^-p (ln t)^m
    log_power: float           # m (0 for the pure power model)
    amplitude: float
    window: tuple
    rms: float                 # residual RMS in log space
    ci: float                  # ~2 standard errors on the exponent

    def slope(self):
        return -self.exponent


def fit_decay(t, y, model="power", window=None, m_fixed=None):
    """Least squares in log space: ln y = ln A - p ln t (+ m ln ln t).

    The power-log model fits m freely unless ``m_fixed`` is given. Requires
    at least 5 strictly positive samples inside the window.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if window is not None:
        a, b = window
        if not b > a:
            raise FitError("degenerate fit window")
        sel = (t >= a) & (t <= b)
        t, y = t[sel], y[sel]
    else:
        window = (float(t.min()) if t.size else 0.0, float(t.max()) if t.size else 0.0)
    if t.size < 5:
        raise FitError(f"need at least 5 points in the fit window, got {t.size}")
    if np.any(y <= 0.0):
        raise FitError("fit_decay requires positive values inside the window")
    if model == "power-log" and np.any(t <= 1.0):
        raise FitError("power-log model requires t > 1 inside the window")

    ln_t = np.log(t)
    ln_y = np.log(y)
    if model == "power":
        cols = [np.ones_like(ln_t), -ln_t]
    elif model == "power-log":
        if m_fixed is not None:
            ln_y = ln_y - m_fixed * np.log(ln_t)
            cols = [np.ones_like(ln_t), -ln_t]
        else:
            cols = [np.ones_like(ln_t), -ln_t, np.log(ln_t)]
    else:
        raise FitError(f"unknown model {model!r}")
    A = np.stack(cols, axis=1)
    sol, *_ = np.linalg.lstsq(A, ln_y, rcond=None)
    resid = ln_y - A @ sol
    rms = float(np.sqrt(np.mean(resid**2)))
    dof = max(1, t.size - A.shape[1])
    cov = np.linalg.inv(A.T @ A) * (float(np.sum(resid**2)) / dof)
    ci = 2.0 * math.sqrt(max(cov[1, 1], 0.0))
    p_hat = float(sol[1])
    m_hat = float(m_fixed) if (model == "power-log" and m_fixed is not None) else (
        float(sol[2]) if model == "power-log" else 0.0)
    return FitResult(model, p_hat, m_hat, float(np.exp(sol[0])),
                     (float(window[0]), float(window[1])), rms, ci)


# --------------------------------------------------------------------------
# Conservation and supports


@dataclass
class ConservationReport:
    masses: dict               # species name -> carried particle number
    momentum: np.ndarray       # total, sum_alpha m_alpha * sum_i w_i v_i
    kinetic: float
    potential: float

    @property
    def e_vp(self):
        return self.kinetic + self.potential


def conservation_report(ensemble, eps, sigma):
    masses = {}
    momentum = np.zeros(3)
    kinetic = 0.0
    for s in ensemble.species:
        masses[s.name] = s.total_weight()
        if ensemble.kind == "spherical":
            # isotropic shells carry zero net momentum by construction
            kinetic += 0.5 * s.mass * float(
                np.sum(s.weight * (s.w**2 + s.ell / s.r**2)))
        else:
            momentum += s.mass * np.einsum("i,ij->j", s.weight, s.v)
            kinetic += 0.5 * s.mass * float(
                np.sum(s.weight * np.einsum("ij,ij->i", s.v, s.v)))
    if ensemble.kind == "spherical":
        s = ensemble.species[0]
        potential = fields.spherical_pair_potential(s.r, s.charge * s.weight, sigma)
    else:
        pos = np.concatenate([s.x for s in ensemble.species], axis=0)
        cw = np.concatenate([s.charge * s.weight for s in ensemble.species])
        potential = fields.pair_potential(pos, cw, eps, sigma)
    return ConservationReport(masses, momentum, kinetic, potential)


def _pairwise_diameter(points):
    n = points.shape[0]
    if n < 2:
        return 0.0
    best = 0.0
    step = max(1, 2**22 // max(1, n))
    for a in range(0, n, step):
        d = points[a:a + step, None, :] - points[None, :, :]
        d2 = np.einsum("mnk,mnk->mn", d, d)
        best = max(best, float(np.max(d2)))
    return math.sqrt(best)


def support_extents(ensemble, t):
    """Velocity diameter per species (exact on samples) and the Y-cloud
    bounding-box volume mu(t)."""
    diam = {}
    ys = []
    for s in ensemble.species:
        if ensemble.kind == "spherical":
            diam[s.name] = 2.0 * float(np.max(s.speed()))
            X2 = s.plane_position()
            V2 = s.plane_velocity()
            y = X2 - t * V2
            ymax = float(np.max(np.linalg.norm(y, axis=1)))
            ys.append(("iso", ymax))
        else:
            diam[s.name] = _pairwise_diameter(s.v)
            ys.append(("box", s.x - t * s.v))
    if ensemble.kind == "spherical":
        ymax = max(v for _, v in ys)
        mu = (2.0 * ymax) ** 3
    else:
        ally = np.concatenate([y for _, y in ys], axis=0)
        mu = float(np.prod(ally.max(axis=0) - ally.min(axis=0)))
    return diam, mu


# --------------------------------------------------------------------------
# Per-snapshot series assembly


@dataclass
class DiagnosticsRow:
    t: float
    sup_E: float
    sup_rho: float
    sup_j: float
    sup_gradE: float
    mu: float
    vel_diam: float
    res_E: float
    res_gradE: float
    res_rho: float
    res_j: float
    M: float
    J: np.ndarray
    e_kin: float
    e_pot: float
    species_masses: dict

    @property
    def e_vp(self):
        return self.e_kin + self.e_pot


@dataclass
class DiagnosticsSeries:
    rows: list = field(default_factory=list)
    species_names: tuple = ()
    reference: dict = field(default_factory=dict)   # t=0 baselines

    def times(self):
        return np.array([r.t for r in self.rows])

    def column(self, name):
        if name in ("J1", "J2", "J3"):
            k = int(name[1]) - 1
            return np.array([r.J[k] for r in self.rows])
        if name.startswith("M_"):
            sp = name[2:]
            return np.array([r.species_masses[sp] for r in self.rows])
        if name == "E_vp":
            return np.array([r.e_vp for r in self.rows])
        return np.array([getattr(r, name) for r in self.rows])

    def energy_drift(self):
        e0 = self.reference.get("e_vp")
        if e0 is None or e0 == 0.0:
            return np.zeros(len(self.rows))
        return np.array([abs(r.e_vp - e0) / abs(e0) for r in self.rows])


def snapshot_row(ensemble, t, config, eps, h0, profile=None):
    """All per-snapshot diagnostics; pure function of the frame and profile."""
    sigma = config.force_sigma()
    if ensemble.kind == "spherical":
        stats = shell_field_stats(ensemble.species[0], h0 * max(t, 1.0))
    else:
        stats = field_stats_3d(ensemble.species, eps, h0 * max(t, 1.0))
    res = (float("nan"),) * 4
    if profile is not None:
        if ensemble.kind == "spherical":
            res = self_similar_residuals_spherical(ensemble.species[0], t, profile, h0)
        else:
            res = self_similar_residuals_3d(ensemble.species, t, profile, h0, eps)
    cons = conservation_report(ensemble, eps, sigma)
    diam, mu = support_extents(ensemble, t)
    net = float(sum(s.charge * cons.masses[s.name] for s in ensemble.species))
    return DiagnosticsRow(
        t=t, sup_E=stats["sup_E"], sup_rho=stats["sup_rho"], sup_j=stats["sup_j"],
        sup_gradE=stats["sup_gradE"], mu=mu, vel_diam=max(diam.values()),
        res_E=res[0], res_gradE=res[1], res_rho=res[2], res_j=res[3],
        M=net, J=cons.momentum, e_kin=cons.kinetic, e_pot=cons.potential,
        species_masses=dict(cons.masses),
    )
