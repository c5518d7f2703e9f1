"""Run orchestration: sampling, the adaptive time loop, snapshot emission,
checkpoint/resume, and construction of the end-of-run asymptotic profile.

The timestep is chosen once per snapshot interval from the state at the
interval start, then clipped so the loop lands on each snapshot time
exactly. That makes a resumed run reproduce an uninterrupted one bitwise:
every decision is a function of checkpointed state.
"""

from __future__ import annotations

import pickle
import time as _time
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics, dynamics, fields, model

CHECKPOINT_MAGIC = b"VSL1CKPT"
CHECKPOINT_VERSION = 1

BLOWUP_FACTOR = 1e3
DT_SAFETY = 0.2          # fraction of the local dynamical time



class EngineError(RuntimeError):
    pass


class BlowUpError(EngineError):
    """A velocity exceeded the guard threshold; numerics, not physics."""


class CheckpointError(EngineError):
    pass


@dataclass
class Frame:
    t: float
    ensemble: model.ParticleEnsemble


@dataclass
class RunState:
    config: model.SimulationConfig
    t: float
    ensemble: model.ParticleEnsemble
    frames: list
    rng_state: dict
    wall_seconds: float
    softening: float
    bandwidth0: float
    vmax_initial: float
    baseline: dict
    next_snapshot_index: int
    dt_scale: float = 1.0


@dataclass
class RunResult:
    config: model.SimulationConfig
    frames: list
    series: diagnostics.DiagnosticsSeries
    profile: diagnostics.AsymptoticProfile
    records: dict
    softening: float
    bandwidth0: float


def _bandwidth0(ensemble):
    """Initial smoothing bandwidth, scaled by t later (co-moving resolution)."""
    if ensemble.kind == "spherical":
        s = ensemble.species[0]
        return 0.05 * float(np.sqrt(np.mean(s.r**2)))
    return 2.0 * model.interparticle_spacing(ensemble)


def z_prefactor_of(config):
    def prefactor(species_like):
        if config.z_prefactor == "charge":
            return species_like.charge
        return species_like.charge / species_like.mass
    return prefactor


def init_state(config, dt_scale=1.0):
    config.validate()
    ensemble = model.sample_initial(config)
    rng = np.random.default_rng(config.species[0].seed)
    eps = config.softening
    if eps is None:
        eps = model.default_softening(ensemble)
    if config.engine == "direct-3d" and eps <= 0.0:
        raise model.ConfigError("direct-3d engine requires positive softening")
    sigma = config.force_sigma()
    base_cons = diagnostics.conservation_report(ensemble, eps, sigma)
    baseline = {
        "e_vp": base_cons.e_vp,
        "e_kin": base_cons.kinetic,
        "masses": dict(base_cons.masses),
        "momentum": base_cons.momentum.copy(),
    }
    return RunState(
        config=config, t=0.0, ensemble=ensemble, frames=[],
        rng_state=rng.bit_generator.state, wall_seconds=0.0,
        softening=eps, bandwidth0=_bandwidth0(ensemble),
        vmax_initial=ensemble.max_speed(), baseline=baseline,
        next_snapshot_index=0, dt_scale=dt_scale,
    )


# --------------------------------------------------------------------------
# Timestep control


def _gradient_scale_spherical(shells, h):
    stats = diagnostics.shell_field_stats(shells, h)
    qm = abs(shells.charge / shells.mass)
    field_part = qm * stats["sup_gradE"]
    cent = float(np.max(3.0 * shells.ell / shells.r**4)) if shells.ell.size else 0.0
    return field_part + cent


def _gradient_scale_3d(species_list, eps):
    """Bulk field-gradient scale on the co-moving probe grid.

    Probing off the particles keeps each particle's own Plummer curvature
    (a c eps^-3 softening artifact, not a dynamical stiffness) out of the
    timestep; rare close encounters are already softened and must not
    throttle the global step. The blow-up guard covers pathologies."""
    pos = np.concatenate([s.x for s in species_list], axis=0)
    blocks = diagnostics.field_blocks(species_list)
    g = fields.species_gradient_sum(diagnostics.probe_grid_3d(pos), blocks, eps)
    qm = max(abs(s.charge / s.mass) for s in species_list)
    per_target = np.max(np.abs(g.reshape(g.shape[0], -1)), axis=1)
    return qm * float(np.median(per_target))


def choose_dt(state, t_a, t_b):
    """dt for the interval [t_a, t_b], from the interval-start state only.

    Bounded by the local dynamical time (field-gradient scale), grown
    proportionally to t at late times when the forces have decayed, and
    clipped so the interval is an integer number of steps.
    """
    cfg = state.config
    ens = state.ensemble
    if ens.kind == "spherical":
        s = ens.species[0]
        omega2 = _gradient_scale_spherical(s, state.bandwidth0 * max(t_a, 1.0))
        dt = min(cfg.dt_initial * max(1.0, t_a), DT_SAFETY / np.sqrt(max(omega2, 1e-300)))
        inbound = s.w < 0.0
        if np.any(inbound):
            dt = min(dt, 0.5 * float(np.min(s.r[inbound] / -s.w[inbound])))
    else:
        omega2 = _gradient_scale_3d(ens.species, state.softening)
        dt = min(cfg.dt_initial * max(1.0, t_a), DT_SAFETY / np.sqrt(max(omega2, 1e-300)))
    dt = min(dt, 0.25 * (t_b - t_a))
    dt *= state.dt_scale
    n_steps = max(1, int(np.ceil((t_b - t_a) / dt - 1e-12)))
    return (t_b - t_a) / n_steps, n_steps


# --------------------------------------------------------------------------
# The time loop


def _advance_interval(state, t_a, t_b, probe=None):
    cfg = state.config
    sigma = cfg.force_sigma()
    dt, n_steps = choose_dt(state, t_a, t_b)
    ens = state.ensemble
    if ens.kind == "spherical":
        shells = ens.species[0]
        a_cache = None
        t = t_a
        for _ in range(n_steps):
            shells, a_cache = dynamics.step_spherical(shells, t, dt, sigma, a0=a_cache)
            if probe is not None:
                probe.step(t, dt, shells)
            t += dt
            _guard(state, shells.speed())
        ens.species[0] = shells
    else:
        positions = np.concatenate([s.x for s in ens.species], axis=0)
        velocities = np.concatenate([s.v for s in ens.species], axis=0)

        def accel_of(t_now, pos):
            return dynamics.ensemble_accel_3d(ens.species, pos, state.softening, sigma)

        a_cache = None
        t = t_a
        for _ in range(n_steps):
            positions, velocities, a_cache = dynamics.step_characteristics_3d(
                positions, velocities, accel_of, t, dt, a0=a_cache)
            if probe is not None:
                probe.step_3d(t, dt, ens.species, positions, state.softening)
            t += dt
            _guard(state, np.linalg.norm(velocities, axis=1))
        a = 0
        for s in ens.species:
            b = a + s.count
            s.x = positions[a:b].copy()
            s.v = velocities[a:b].copy()
            a = b
    state.t = t_b


def _guard(state, speeds):
    if state.vmax_initial > 0.0 and speeds.size:
        if float(np.max(speeds)) > BLOWUP_FACTOR * state.vmax_initial:
            raise BlowUpError(
                f"velocity exceeded {BLOWUP_FACTOR:g} x initial max "
                f"({state.vmax_initial:g}) at t ~ {state.t:g}; aborting"
            )


def run_simulation(config=None, state=None, dt_scale=1.0, on_snapshot=None,
                   quiet=True, probe=None):
    """Advance to t_end, emitting a frame at every snapshot time, then build
    the asymptotic profile and the full diagnostics series.

    Either a config (fresh run) or a checkpointed RunState may be given.
    ``on_snapshot(state)`` runs after each snapshot frame is appended (the
    checkpoint hook). Returns a RunResult.
    """
    wall0 = _time.monotonic()
    if state is None:
        state = init_state(config, dt_scale=dt_scale)
    cfg = state.config
    times = cfg.snapshot_times
    while state.next_snapshot_index < len(times):
        t_b = times[state.next_snapshot_index]
        t_a = state.t
        _advance_interval(state, t_a, t_b, probe=probe)
        state.frames.append(Frame(t_b, state.ensemble.copy()))
        state.next_snapshot_index += 1
        state.wall_seconds += _time.monotonic() - wall0
        wall0 = _time.monotonic()
        if not quiet:
            print(f"  t = {t_b:g}  ({state.next_snapshot_index}/{len(times)})")
        if on_snapshot is not None:
            on_snapshot(state)
    return finalize_run(state)


def records_from_frames(frames, ensemble_kind):
    """Stack per-species trajectory frames into TrajectoryRecords."""
    records = {}
    first = frames[0].ensemble
    times = np.array([f.t for f in frames])
    for k, s in enumerate(first.species):
        if ensemble_kind == "spherical":
            X = np.stack([f.ensemble.species[k].plane_position() for f in frames])
            V = np.stack([f.ensemble.species[k].plane_velocity() for f in frames])
        else:
            X = np.stack([f.ensemble.species[k].x for f in frames])
            V = np.stack([f.ensemble.species[k].v for f in frames])
        records[s.name] = dynamics.TrajectoryRecord(
            s.name, s.charge, s.mass, s.ids.copy(), times, X, V)
    return records


def finalize_run(state):
    cfg = state.config
    records = records_from_frames(state.frames, state.ensemble.kind)
    profile = diagnostics.build_profile(
        state.frames[-1].ensemble, state.frames[-1].t, records, z_prefactor_of(cfg))
    series = diagnostics.DiagnosticsSeries(
        rows=[], species_names=tuple(s.name for s in cfg.species),
        reference=dict(state.baseline))
    for frame in state.frames:
        series.rows.append(diagnostics.snapshot_row(
            frame.ensemble, frame.t, cfg, state.softening, state.bandwidth0, profile))
    return RunResult(cfg, state.frames, series, profile, records,
                     state.softening, state.bandwidth0)


# --------------------------------------------------------------------------
# Checkpointing


def checkpoint_save(state, path):
    payload = {
        "config": state.config,
        "t": state.t,
        "ensemble": state.ensemble,
        "frames": state.frames,
        "rng_state": state.rng_state,
        "wall_seconds": state.wall_seconds,
        "softening": state.softening,
        "bandwidth0": state.bandwidth0,
        "vmax_initial": state.vmax_initial,
        "baseline": state.baseline,
        "next_snapshot_index": state.next_snapshot_index,
        "dt_scale": state.dt_scale,
    }
    blob = pickle.dumps(payload, protocol=4)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(CHECKPOINT_VERSION.to_bytes(2, "little"))
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)


def checkpoint_load(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic header)")
        version = int.from_bytes(fh.read(2), "little")
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"checkpoint version {version} unsupported")
        size = int.from_bytes(fh.read(8), "little")
        blob = fh.read(size)
        if len(blob) != size:
            raise CheckpointError("truncated checkpoint file")
    payload = pickle.loads(blob)
    return RunState(**payload)


def _arrays_equal(a, b):
    return a.shape == b.shape and bool(np.all(a == b))


def states_equal(s1, s2):
    """Field-by-field equality, arrays compared bitwise."""
    if s1.config != s2.config or s1.t != s2.t:
        return False
    if (s1.next_snapshot_index != s2.next_snapshot_index
            or s1.softening != s2.softening or s1.bandwidth0 != s2.bandwidth0
            or s1.vmax_initial != s2.vmax_initial or s1.dt_scale != s2.dt_scale):
        return False
    if s1.rng_state != s2.rng_state:
        return False

    def ens_equal(e1, e2):
        if e1.kind != e2.kind or len(e1.species) != len(e2.species):
            return False
        for a, b in zip(e1.species, e2.species):
            if (a.name, a.charge, a.mass) != (b.name, b.charge, b.mass):
                return False
            arrays = (("ids", "r", "w", "ell", "phi", "weight")
                      if e1.kind == "spherical" else ("ids", "x", "v", "weight"))
            for attr in arrays:
                if not _arrays_equal(getattr(a, attr), getattr(b, attr)):
                    return False
        return True

    if not ens_equal(s1.ensemble, s2.ensemble):
        return False
    if len(s1.frames) != len(s2.frames):
        return False
    for f1, f2 in zip(s1.frames, s2.frames):
        if f1.t != f2.t or not ens_equal(f1.ensemble, f2.ensemble):
            return False
    return True


# --------------------------------------------------------------------------
# Measure-preservation probe rider


class ShellFieldProbe:
    """Co-integrates a batch of 3D test points through the smoothed radial
    field of a running shell ensemble, for the flow-Jacobian probe.

    Central-difference stencils for several offsets delta share one batch and
    one dt schedule, so determinant errors reflect finite differencing only.
    """

    def __init__(self, x0, v0, deltas, t_target, q_over_m, sigma, smooth_frac=0.1):
        self.deltas = list(deltas)
        self.t_target = t_target
        self.qm = q_over_m
        self.sigma = sigma
        self.smooth_frac = smooth_frac
        base = np.concatenate([np.asarray(x0, float), np.asarray(v0, float)])
        states = []
        for d in self.deltas:
            if d <= 0.0:
                raise dynamics.DynamicsError("degenerate parallelepiped: delta must be positive")
            block = np.tile(base, (12, 1))
            for j in range(6):
                block[2 * j, j] += d
                block[2 * j + 1, j] -= d
            states.append(block)
        self.states = np.concatenate(states, axis=0)
        self.done = False

    def _accel(self, shells, pos):
        r = np.linalg.norm(pos, axis=1)
        h = self.smooth_frac * float(np.sqrt(np.mean(shells.r**2)))
        order = np.argsort(shells.r, kind="stable")
        q = fields.smoothed_enclosed_charge(
            r, shells.r[order], (shells.charge * shells.weight)[order], h)
        mag = self.sigma * self.qm * q / (fields.FOUR_PI * r**2)
        return pos * (mag / r)[:, None]

    def step(self, t, dt, shells):
        if self.done or t >= self.t_target:
            self.done = True
            return
        dt_eff = min(dt, self.t_target - t)
        X = self.states[:, :3]
        V = self.states[:, 3:]
        a0 = self._accel(shells, X)
        Vh = V + 0.5 * dt_eff * a0
        X1 = X + dt_eff * Vh
        a1 = self._accel(shells, X1)
        V1 = Vh + 0.5 * dt_eff * a1
        self.states = np.concatenate([X1, V1], axis=1)
        if t + dt >= self.t_target - 1e-12:
            self.done = True

    def determinants(self):
        out = {}
        for i, d in enumerate(self.deltas):
            block = self.states[12 * i:12 * (i + 1)]
            F = np.concatenate(
                [block[:, :3] - self.t_target * block[:, 3:], block[:, 3:]], axis=1)
            J = np.empty((6, 6))
            for j in range(6):
                J[:, j] = (F[2 * j] - F[2 * j + 1]) / (2.0 * d)
            out[d] = float(np.linalg.det(J))
        return out


class DirectFieldProbe(ShellFieldProbe):
    """Central-difference stencil co-integrated through the softened field of
    a running 3D ensemble (test particles, no back reaction)."""

    def step_3d(self, t, dt, species_list, positions, eps):
        if self.done or t >= self.t_target:
            self.done = True
            return
        dt_eff = min(dt, self.t_target - t)
        blocks = []
        a = 0
        for s in species_list:
            b = a + s.count
            blocks.append((positions[a:b], s.charge * s.weight))
            a = b

        def accel(pos):
            return (self.sigma * self.qm) * fields.species_field_sum(pos, blocks, eps)

        X = self.states[:, :3]
        V = self.states[:, 3:]
        a0 = accel(X)
        Vh = V + 0.5 * dt_eff * a0
        X1 = X + dt_eff * Vh
        V1 = Vh + 0.5 * dt_eff * accel(X1)
        self.states = np.concatenate([X1, V1], axis=1)
        if t + dt >= self.t_target - 1e-12:
            self.done = True


def jacobian_probe_on_run(config, x0, v0, t_target, deltas):
    """Run a shipped scenario to t_target and return {delta: det(J)} for the
    (Y, V) flow of a test point, probed by central differences."""
    import dataclasses

    times = tuple(sorted({t for t in config.snapshot_times if t < t_target}
                         | {float(t_target)}))
    config = dataclasses.replace(config, t_end=float(t_target), snapshot_times=times)
    spec = config.species[0]
    cls = ShellFieldProbe if config.engine == "spherical-shell" else DirectFieldProbe
    probe = cls(x0, v0, deltas, t_target, spec.charge / spec.mass,
                config.force_sigma())
    run_simulation(config, probe=probe)
    return probe.determinants()
