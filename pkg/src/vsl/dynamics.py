"""Characteristic-flow integration and derived trajectories.

The stepping scheme is kick-drift-kick throughout: time reversible, second
order, and volume preserving in phase space. Translated trajectories
Y = X - t V are always recomputed from (X, V, t), never integrated, and the
modified trajectories add the logarithmic correction built from the limiting
velocity-space field.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fields
from .fields import FOUR_PI


class DynamicsError(RuntimeError):
    pass


@dataclass
class TrajectoryRecord:
    """Per-run trajectory frames at the snapshot times.

    X and V have shape (n_times, n_particles, d) with d = 3 for the direct
    engine and d = 2 for shells embedded in their orbital planes.
    """

    species: str
    charge: float
    mass: float
    ids: np.ndarray
    times: np.ndarray
    X: np.ndarray
    V: np.ndarray

    def Y(self):
        return compute_Y(self.times, self.X, self.V)

    def Z(self, einf_eval, prefactor):
        return compute_Z(self.times, self.Y(), self.V, einf_eval, prefactor)


def compute_Y(times, X, V):
    """Translated positions Y = X - t V, pointwise over the time axis."""
    times = np.asarray(times, dtype=float)
    X = np.asarray(X, dtype=float)
    V = np.asarray(V, dtype=float)
    if X.shape != V.shape or times.shape[0] != X.shape[0]:
        raise DynamicsError("times, X, V lengths do not match")
    return X - times.reshape((-1,) + (1,) * (X.ndim - 1)) * V


def compute_Z(times, Y, V, einf_eval, prefactor):
    """Modified trajectories Z = Y + prefactor * ln(t) * E_inf(V), t >= 1.

    ``prefactor`` is q/m by default (config override: q alone); ``einf_eval``
    maps velocity vectors to the frozen end-of-run limiting field.
    """
    times = np.asarray(times, dtype=float)
    if np.any(times < 1.0):
        raise DynamicsError("compute_Z requires t >= 1")
    Z = np.empty_like(np.asarray(Y, dtype=float))
    for k, t in enumerate(times):
        Z[k] = Y[k] + prefactor * np.log(t) * einf_eval(V[k])
    return Z


# --------------------------------------------------------------------------
# Direct 3D stepping


def step_characteristics_3d(x, v, accel_of, t, dt, a0=None):
    """One KDK step of x' = v, v' = a(t, x).

    ``accel_of(t, x)`` returns accelerations; passing the cached end-of-step
    acceleration ``a0`` avoids re-evaluating the force at the step start.
    Returns (x1, v1, a1) with a1 the acceleration at the new positions.
    """
    if dt == 0.0:
        raise DynamicsError("dt must be nonzero")
    if a0 is None:
        a0 = accel_of(t, x)
    if not np.all(np.isfinite(a0)):
        raise DynamicsError("non-finite field values")
    vh = v + 0.5 * dt * a0
    x1 = x + dt * vh
    a1 = accel_of(t + dt, x1)
    if not np.all(np.isfinite(a1)):
        raise DynamicsError("non-finite field values")
    v1 = vh + 0.5 * dt * a1
    return x1, v1, a1


def ensemble_accel_3d(species_list, positions, eps, sigma):
    """Self-consistent accelerations for stacked per-species positions.

    positions is the concatenation of species position blocks; returns the
    matching stacked acceleration array a = sigma (q/m) E. The field is
    accumulated species block by species block so oppositely charged twins
    with shared sampling cancel exactly.
    """
    blocks = []
    a = 0
    for s in species_list:
        b = a + s.count
        blocks.append((positions[a:b], s.charge * s.weight))
        a = b
    E = fields.species_field_sum(positions, blocks, eps)
    out = np.empty_like(E)
    a = 0
    for s in species_list:
        b = a + s.count
        out[a:b] = (sigma * s.charge / s.mass) * E[a:b]
        a = b
    return out


# --------------------------------------------------------------------------
# Spherical stepping


def shell_accel(r, ell, q_over_m, sigma, radii_sorted, cw_sorted, cw_cumsum):
    """Radial acceleration ell/r^3 + sigma (q/m) Q_in / (4 pi r^2).

    Q_in is the charge strictly inside each shell (self excluded), which is
    the convention consistent with the exact shell-shell pair energy.
    """
    idx = np.searchsorted(radii_sorted, r, side="left")
    q_in = cw_cumsum[idx]
    return ell / r**3 + (sigma * q_over_m) * q_in / (FOUR_PI * r**2)


def step_spherical(shells, t, dt, sigma, a0=None):
    """One KDK step of the spherical reduction.

    r' = w, w' = ell/r^3 + sigma (q/m) Q(t,r)/(4 pi r^2), ell constant.
    The in-plane angle advances by sqrt(ell) dt / (r0 r1), the exact integral
    of sqrt(ell)/r^2 along the linear drift, which keeps the embedding time
    reversible. ell = 0 shells pass through the origin with (r, w) -> (|r|, -w)
    and phi -> phi + pi.
    Returns (shells', a1).
    """
    if dt == 0.0:
        raise DynamicsError("dt must be nonzero")
    r, w, ell = shells.r, shells.w, shells.ell
    qm = shells.charge / shells.mass

    def accel(radii):
        order = np.argsort(radii, kind="stable")
        rs = radii[order]
        cw = (shells.charge * shells.weight)[order]
        csum = np.concatenate([[0.0], np.cumsum(cw)])
        return shell_accel(radii, ell, qm, sigma, rs, cw, csum)

    if a0 is None:
        a0 = accel(r)
    wh = w + 0.5 * dt * a0
    r1 = r + dt * wh

    crossed = r1 < 0.0
    if np.any(crossed & (ell > 0.0)):
        raise DynamicsError("shell with ell > 0 crossed the origin; dt too large")
    # exact angular drift for the linear radial path; zero for radial orbits
    phi1 = shells.phi.copy()
    ang = ell > 0.0
    phi1[ang] = shells.phi[ang] + np.sqrt(ell[ang]) * dt / (r[ang] * r1[ang])
    if np.any(crossed):
        r1 = np.abs(r1)
        wh = np.where(crossed, -wh, wh)
        phi1 = np.where(crossed, phi1 + np.pi, phi1)
    if np.any(r1 == 0.0):
        raise DynamicsError("shell landed exactly on the origin")

    a1 = accel(r1)
    if not np.all(np.isfinite(a1)):
        raise DynamicsError("non-finite field values")
    w1 = wh + 0.5 * dt * a1

    out = shells.copy()
    out.r, out.w, out.phi = r1, w1, phi1
    return out, a1


# --------------------------------------------------------------------------
# Measure-preservation probe


def flow_jacobian_probe(field_eval, x0, v0, t_target, delta, q_over_m=1.0,
                        sigma=1.0, dt_of=None, t_start=0.0):
    """Finite-difference determinant of the (Y, V) flow Jacobian.

    Evolves a central-difference stencil (12 satellite points, central
    differences are needed for the O(delta^2) convergence this probe is
    specified to exhibit) through x' = v, v' = sigma (q/m) E(t, x), then
    differentiates (Y, V) = (X - tV, V) with respect to the initial (x, v).
    The exact flow has determinant 1.
    """
    if delta <= 0.0:
        raise DynamicsError("degenerate parallelepiped: delta must be positive")
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    states = np.tile(np.concatenate([x0, v0]), (12, 1))
    for j in range(6):
        states[2 * j, j] += delta
        states[2 * j + 1, j] -= delta
    X = states[:, :3].copy()
    V = states[:, 3:].copy()

    if dt_of is None:
        dt_of = lambda t: min(0.01 * max(t, 1.0), 0.5)

    def accel(t, pos):
        return (sigma * q_over_m) * field_eval(t, pos)

    t = t_start
    a = accel(t, X)
    while t < t_target - 1e-12:
        dt = min(dt_of(t), t_target - t)
        X, V, a = step_characteristics_3d(X, V, accel, t, dt, a0=a)
        t += dt

    F = np.concatenate([X - t_target * V, V], axis=1)   # (12, 6)
    J = np.empty((6, 6))
    for j in range(6):
        J[:, j] = (F[2 * j] - F[2 * j + 1]) / (2.0 * delta)
    return float(np.linalg.det(J))
