"""Domain types, run configuration, and deterministic initial sampling.

Each species is a weighted empirical measure in phase space: the sampler
draws ``count`` points from the recipe and assigns every point the same
weight ``total_number / count``, so the species integral is carried exactly
by construction and never changes afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RECIPE_KINDS = ("uniform-ball", "truncated-gaussian", "shifted-beam", "spherical-shellset")
ENGINES = ("spherical-shell", "direct-3d")
FORCE_SIGNS = ("plasma", "gravitational")
Z_PREFACTORS = ("charge-over-mass", "charge")

GAUSSIAN_CUT = 3.0  # truncation radius of gaussian recipes, in units of sigma


class ConfigError(ValueError):
    """A configuration violates a type invariant."""


class SamplingError(ValueError):
    """Initial-condition sampling cannot proceed."""


def _as_vec3(value, name):
    v = np.asarray(value, dtype=float).reshape(-1)
    if v.size != 3:
        raise ConfigError(f"{name} must have exactly 3 components, got {v.size}")
    return tuple(float(c) for c in v)


@dataclass(frozen=True)
class DistributionRecipe:
    """Compactly supported initial phase-space distribution for one species.

    ``radius_v`` applies to the ball-type recipes; ``sigma_v`` to the
    gaussian ones (truncated at GAUSSIAN_CUT sigma, which is the declared
    compact velocity support).
    """

    kind: str
    center_x: tuple = (0.0, 0.0, 0.0)
    center_v: tuple = (0.0, 0.0, 0.0)
    radius_x: float = 1.0
    radius_v: float | None = None
    sigma_v: float | None = None
    total_number: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center_x", _as_vec3(self.center_x, "center_x"))
        object.__setattr__(self, "center_v", _as_vec3(self.center_v, "center_v"))

    def validate(self):
        if self.kind not in RECIPE_KINDS:
            raise ConfigError(f"unknown recipe kind {self.kind!r}; expected one of {RECIPE_KINDS}")
        if not self.radius_x > 0:
            raise ConfigError("radius_x must be positive")
        if not self.total_number > 0:
            raise ConfigError("total_number must be positive")
        needs_ball = self.kind in ("uniform-ball", "spherical-shellset")
        if needs_ball:
            if self.radius_v is None or not self.radius_v > 0:
                raise ConfigError(f"recipe {self.kind!r} requires positive radius_v")
        else:
            if self.sigma_v is None or not self.sigma_v > 0:
                raise ConfigError(f"recipe {self.kind!r} requires positive sigma_v")

    def velocity_extent(self):
        """Radius of the declared compact velocity support about center_v."""
        if self.radius_v is not None:
            return self.radius_v
        return GAUSSIAN_CUT * self.sigma_v

    def support_box(self):
        """Axis-aligned (xlo, xhi, vlo, vhi) bounding the declared support."""
        cx = np.array(self.center_x)
        cv = np.array(self.center_v)
        rv = self.velocity_extent()
        return (cx - self.radius_x, cx + self.radius_x, cv - rv, cv + rv)

    def is_centered(self):
        return all(c == 0.0 for c in self.center_x) and all(c == 0.0 for c in self.center_v)


@dataclass(frozen=True)
class SpeciesSpec:
    name: str
    charge: float
    mass: float
    count: int
    init: DistributionRecipe
    seed: int = 0

    def validate(self):
        if not self.name:
            raise ConfigError("species name must be nonempty")
        if not self.mass > 0:
            raise ConfigError(f"species {self.name!r}: mass must be positive")
        if self.count < 1:
            raise ConfigError(f"species {self.name!r}: count must be at least 1")
        self.init.validate()


@dataclass(frozen=True)
class SimulationConfig:
    species: tuple
    engine: str = "direct-3d"
    force_sign: str = "plasma"
    softening: float | None = None  # None: 0.05 x interparticle-spacing estimate
    dt_initial: float = 0.01
    t_end: float = 64.0
    snapshot_times: tuple = ()
    thread_hint: int = 0
    z_prefactor: str = "charge-over-mass"

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        if not self.snapshot_times:
            object.__setattr__(self, "snapshot_times", dyadic_snapshot_times(self.t_end))
        else:
            object.__setattr__(
                self, "snapshot_times", tuple(sorted(set(float(t) for t in self.snapshot_times)))
            )

    def validate(self):
        if not self.species:
            raise ConfigError("at least one species is required")
        names = [s.name for s in self.species]
        if len(set(names)) != len(names):
            raise ConfigError("species names must be unique")
        for s in self.species:
            s.validate()
        if self.engine not in ENGINES:
            raise ConfigError(f"unknown engine {self.engine!r}; expected one of {ENGINES}")
        if self.force_sign not in FORCE_SIGNS:
            raise ConfigError(f"unknown force_sign {self.force_sign!r}")
        if self.z_prefactor not in Z_PREFACTORS:
            raise ConfigError(f"unknown z_prefactor {self.z_prefactor!r}")
        if self.softening is not None and self.softening < 0:
            raise ConfigError("softening must be nonnegative")
        if not self.dt_initial > 0:
            raise ConfigError("dt_initial must be positive")
        if not self.t_end >= 1.0:
            raise ConfigError("t_end must be at least 1")
        ts = self.snapshot_times
        if any(t < 1.0 or t > self.t_end for t in ts):
            raise ConfigError("snapshot_times must lie in [1, t_end]")
        if self.engine == "spherical-shell":
            if len(self.species) != 1:
                raise ConfigError("spherical-shell requires one species")
            recipe = self.species[0].init
            if not recipe.is_centered():
                raise ConfigError(
                    "spherical-shell requires a spherically symmetric recipe "
                    "(center_x and center_v must be zero)"
                )

    def force_sigma(self):
        return 1.0 if self.force_sign == "plasma" else -1.0


def dyadic_snapshot_times(t_end):
    """Default schedule {1, 2, 4, ...} clipped to t_end, with t_end appended."""
    times = []
    t = 1.0
    while t <= t_end:
        times.append(t)
        t *= 2.0
    if not times or times[-1] != t_end:
        times.append(float(t_end))
    return tuple(times)


# --------------------------------------------------------------------------
# Ensembles


@dataclass
class SpeciesParticles:
    """Per-species phase-space samples for the 3D engine."""

    name: str
    charge: float
    mass: float
    ids: np.ndarray      # (n,) int64
    x: np.ndarray        # (n, 3)
    v: np.ndarray        # (n, 3)
    weight: np.ndarray   # (n,) immutable after sampling

    @property
    def count(self):
        return self.ids.size

    def total_weight(self):
        return float(np.sum(self.weight))

    def copy(self):
        return SpeciesParticles(
            self.name, self.charge, self.mass,
            self.ids.copy(), self.x.copy(), self.v.copy(), self.weight.copy(),
        )


@dataclass
class SpeciesShells:
    """Per-species spherical shells: radius, radial velocity, squared angular
    momentum ell = |x cross v|^2, and the in-plane orbital angle phi used to
    embed each shell's trajectory in its own orbital plane."""

    name: str
    charge: float
    mass: float
    ids: np.ndarray
    r: np.ndarray
    w: np.ndarray
    ell: np.ndarray
    phi: np.ndarray
    weight: np.ndarray

    @property
    def count(self):
        return self.ids.size

    def total_weight(self):
        return float(np.sum(self.weight))

    def tangential_speed(self):
        return np.sqrt(self.ell) / self.r

    def speed(self):
        return np.sqrt(self.w**2 + self.ell / self.r**2)

    def plane_position(self):
        """Shell position in its orbital plane, shape (n, 2)."""
        return np.stack([self.r * np.cos(self.phi), self.r * np.sin(self.phi)], axis=1)

    def plane_velocity(self):
        tau = self.tangential_speed()
        c, s = np.cos(self.phi), np.sin(self.phi)
        return np.stack([self.w * c - tau * s, self.w * s + tau * c], axis=1)

    def copy(self):
        return SpeciesShells(
            self.name, self.charge, self.mass,
            self.ids.copy(), self.r.copy(), self.w.copy(),
            self.ell.copy(), self.phi.copy(), self.weight.copy(),
        )


@dataclass
class ParticleEnsemble:
    """All species of one run; ``kind`` is '3d' or 'spherical'."""

    kind: str
    species: list

    def copy(self):
        return ParticleEnsemble(self.kind, [s.copy() for s in self.species])

    def max_speed(self):
        out = 0.0
        for s in self.species:
            if self.kind == "spherical":
                sp = s.speed()
            else:
                sp = np.linalg.norm(s.v, axis=1)
            if sp.size:
                out = max(out, float(np.max(sp)))
        return out

    def assert_finite(self):
        for s in self.species:
            arrays = (s.r, s.w, s.ell) if self.kind == "spherical" else (s.x, s.v)
            for a in arrays:
                if not np.all(np.isfinite(a)):
                    raise FloatingPointError(f"non-finite coordinates in species {s.name!r}")


def net_charge(ensemble):
    """Net charge: sum over species of charge times carried particle number.

    Exact in the sense that no quadrature enters; the same weight arrays are
    summed every time, so the value is bitwise stable across a run.
    """
    return float(sum(s.charge * s.total_weight() for s in ensemble.species))


# --------------------------------------------------------------------------
# Sampling


def _sample_ball(rng, n, center, radius):
    """Uniform points in a ball: isotropic direction, radius ~ R u^(1/3)."""
    d = rng.standard_normal((n, 3))
    norms = np.linalg.norm(d, axis=1, keepdims=True)
    # resample the (measure zero) degenerate directions
    while np.any(norms == 0.0):
        bad = norms[:, 0] == 0.0
        d[bad] = rng.standard_normal((int(np.sum(bad)), 3))
        norms = np.linalg.norm(d, axis=1, keepdims=True)
    u = rng.random((n, 1))
    return np.asarray(center) + radius * np.cbrt(u) * d / norms


def _sample_truncated_gaussian(rng, n, center, sigma, cut_radius):
    """Isotropic gaussian conditioned on |x - center| <= cut_radius."""
    out = np.empty((n, 3))
    filled = 0
    while filled < n:
        cand = sigma * rng.standard_normal((n - filled, 3))
        keep = np.linalg.norm(cand, axis=1) <= cut_radius
        k = int(np.sum(keep))
        out[filled:filled + k] = cand[keep]
        filled += k
    return np.asarray(center) + out


def _sample_recipe(rng, recipe, n):
    kind = recipe.kind
    if kind == "uniform-ball":
        x = _sample_ball(rng, n, recipe.center_x, recipe.radius_x)
        v = _sample_ball(rng, n, recipe.center_v, recipe.radius_v)
    elif kind == "truncated-gaussian":
        x = _sample_truncated_gaussian(rng, n, recipe.center_x, recipe.radius_x / GAUSSIAN_CUT,
                                       recipe.radius_x)
        v = _sample_truncated_gaussian(rng, n, recipe.center_v, recipe.sigma_v,
                                       GAUSSIAN_CUT * recipe.sigma_v)
    elif kind == "shifted-beam":
        x = _sample_ball(rng, n, recipe.center_x, recipe.radius_x)
        v = _sample_truncated_gaussian(rng, n, recipe.center_v, recipe.sigma_v,
                                       GAUSSIAN_CUT * recipe.sigma_v)
    elif kind == "spherical-shellset":
        # stratified radial quantiles cut sampling variance of the enclosed charge
        u = (np.arange(n) + rng.random(n)) / n
        radii = recipe.radius_x * np.cbrt(u)
        d = rng.standard_normal((n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        x = np.asarray(recipe.center_x) + radii[:, None] * d
        v = _sample_ball(rng, n, recipe.center_v, recipe.radius_v)
    else:
        raise SamplingError(f"unsupported recipe kind {kind!r}")
    return x, v


def shell_coordinates(x, v):
    """Reduce 3D samples to (r, w, ell): r=|x|, w = x.v/r, ell = |x cross v|^2."""
    r = np.linalg.norm(x, axis=1)
    if np.any(r == 0.0):
        raise SamplingError("sample at the origin cannot be reduced to a shell")
    w = np.einsum("ij,ij->i", x, v) / r
    cross = np.cross(x, v)
    ell = np.einsum("ij,ij->i", cross, cross)
    return r, w, ell


def sample_initial(config):
    """Draw the initial ensemble. Deterministic given each species' seed."""
    config.validate()
    spherical = config.engine == "spherical-shell"
    species = []
    for spec in config.species:
        rng = np.random.default_rng(spec.seed)
        x, v = _sample_recipe(rng, spec.init, spec.count)
        ids = np.arange(spec.count, dtype=np.int64)
        weight = np.full(spec.count, spec.init.total_number / spec.count)
        if spherical:
            r, w, ell = shell_coordinates(x, v)
            species.append(SpeciesShells(spec.name, spec.charge, spec.mass,
                                         ids, r, w, ell, np.zeros(spec.count), weight))
        else:
            species.append(SpeciesParticles(spec.name, spec.charge, spec.mass,
                                            ids, x, v, weight))
    ensemble = ParticleEnsemble("spherical" if spherical else "3d", species)
    ensemble.assert_finite()
    return ensemble


def interparticle_spacing(ensemble):
    """Crude initial spacing estimate: (occupied volume / total count)^(1/3)."""
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    n = 0
    for s in ensemble.species:
        if ensemble.kind == "spherical":
            rmax = float(np.max(s.r))
            lo = np.minimum(lo, -rmax)
            hi = np.maximum(hi, rmax)
        else:
            lo = np.minimum(lo, s.x.min(axis=0))
            hi = np.maximum(hi, s.x.max(axis=0))
        n += s.count
    vol = float(np.prod(np.maximum(hi - lo, 1e-300)))
    return (vol / max(n, 1)) ** (1.0 / 3.0)


def default_softening(ensemble):
    return 0.05 * interparticle_spacing(ensemble)
