"""Poisson-kernel field evaluations.

All fields use the normalization E = grad (Laplacian)^{-1} rho, i.e. a unit
point charge at the origin induces E(x) = x / (4 pi |x|^3), pointing outward.
The 3D route is a Plummer-softened direct sum; the spherical route is the
exact enclosed-charge reduction. The same two routes evaluate the limiting
velocity-space field induced by a weighted set of limiting velocities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FOUR_PI = 4.0 * np.pi

# fixed chunk size keeps temporaries bounded and the reduction order
# independent of thread settings
_CHUNK_ELEMS = 2**21


class FieldError(ValueError):
    pass


class SingularityError(FieldError):
    """Unsoftened kernel evaluated at a source location."""


@dataclass
class FieldSnapshot:
    """Field quantities at a fixed time over a set of query points."""

    t: float
    query_points: np.ndarray   # (m, 3)
    E: np.ndarray              # (m, 3)
    gradE: np.ndarray          # (m, 3, 3)
    rho: np.ndarray            # (m,)
    j: np.ndarray              # (m, 3)
    softening: float
    bandwidth: float


# --------------------------------------------------------------------------
# Exact spherical reduction


def enclosed_charge(radii, charge_weights, r):
    """Charge at radius <= r for shells sorted by radius (ties included).

    ``radii`` must be sorted ascending; ``charge_weights`` are q * weight per
    shell aligned with ``radii``. Vectorized over ``r``.
    """
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0.0):
        raise FieldError("enclosed_charge requires r > 0")
    radii = np.asarray(radii, dtype=float)
    cw = np.asarray(charge_weights, dtype=float)
    if radii.size == 0:
        return np.zeros_like(r_arr) if r_arr.shape else 0.0
    csum = np.concatenate([[0.0], np.cumsum(cw)])
    idx = np.searchsorted(radii, r_arr, side="right")
    out = csum[idx]
    return out if r_arr.shape else float(out)


def spherical_field(Q, r):
    """Radial field of enclosed charge Q at radius r: Q / (4 pi r^2).

    Positive values point outward; the caller applies (q/m) and force sign.
    """
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0.0):
        raise FieldError("spherical_field requires r > 0")
    out = np.asarray(Q, dtype=float) / (FOUR_PI * r_arr**2)
    return out if (r_arr.shape or np.shape(Q)) else float(out)


# --------------------------------------------------------------------------
# Softened direct sums


def _target_chunks(n_targets, n_sources):
    step = max(1, _CHUNK_ELEMS // max(1, n_sources))
    for a in range(0, n_targets, step):
        yield a, min(a + step, n_targets)


def softened_field_sum(targets, src_pos, src_charge_weights, eps):
    """E(x) = (1/4pi) sum_s c_s (x - y_s) / (|x - y_s|^2 + eps^2)^(3/2).

    With eps = 0 a coincident target/source raises SingularityError. A
    coincident pair with eps > 0 contributes exactly zero (the numerator
    vanishes), so self-contributions drop out automatically.

    The softened path expands |x - y|^2 = |x|^2 - 2 x.y + |y|^2 so the inner
    loops run as matrix products; the expansion's rounding is negligible
    against eps^2 for any sane configuration. The eps = 0 path keeps exact
    coordinate differences so the singularity check stays reliable.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    src_pos = np.atleast_2d(np.asarray(src_pos, dtype=float))
    cw = np.asarray(src_charge_weights, dtype=float)
    if eps < 0:
        raise FieldError("softening must be nonnegative")
    out = np.zeros((targets.shape[0], 3))
    if src_pos.shape[0] == 0:
        return out
    if eps == 0.0:
        for a, b in _target_chunks(targets.shape[0], src_pos.shape[0]):
            d = targets[a:b, None, :] - src_pos[None, :, :]   # (m, n, 3)
            d2 = np.einsum("mnk,mnk->mn", d, d)
            if np.any(d2 == 0.0):
                raise SingularityError("target coincides with a source and eps = 0")
            inv = 1.0 / d2
            inv *= np.sqrt(inv)
            np.multiply(inv, cw[None, :], out=inv)
            out[a:b] = np.einsum("mn,mnk->mk", inv, d) / FOUR_PI
        return out
    eps2 = eps * eps
    s2 = np.einsum("nk,nk->n", src_pos, src_pos)
    t2 = np.einsum("mk,mk->m", targets, targets)
    for a, b in _target_chunks(targets.shape[0], src_pos.shape[0]):
        d2 = targets[a:b] @ src_pos.T
        d2 *= -2.0
        d2 += t2[a:b, None]
        d2 += s2[None, :]
        d2 += eps2
        np.maximum(d2, 0.25 * eps2, out=d2)   # rounding guard near coincidence
        inv = 1.0 / d2
        inv *= np.sqrt(inv)
        np.multiply(inv, cw[None, :], out=inv)
        out[a:b] = (targets[a:b] * np.sum(inv, axis=1)[:, None]
                    - inv @ src_pos) / FOUR_PI
    return out


def softened_gradient_sum(targets, src_pos, src_charge_weights, eps):
    """Analytic gradient of the softened kernel, shape (m, 3, 3).

    grad E = (1/4pi) sum_s c_s [ I/(d^2+eps^2)^(3/2) - 3 d x d /(d^2+eps^2)^(5/2) ].
    At eps = 0 the matrix is trace-free away from sources (harmonic kernel);
    with eps > 0 the trace equals the Plummer smoothing density.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    src_pos = np.atleast_2d(np.asarray(src_pos, dtype=float))
    cw = np.asarray(src_charge_weights, dtype=float)
    if eps < 0:
        raise FieldError("softening must be nonnegative")
    out = np.zeros((targets.shape[0], 3, 3))
    if src_pos.shape[0] == 0:
        return out
    eps2 = eps * eps
    eye = np.eye(3)
    if eps == 0.0:
        for a, b in _target_chunks(targets.shape[0], max(1, src_pos.shape[0] // 3)):
            d = targets[a:b, None, :] - src_pos[None, :, :]
            d2 = np.einsum("mnk,mnk->mn", d, d)
            if np.any(d2 == 0.0):
                raise SingularityError("target coincides with a source and eps = 0")
            inv = 1.0 / d2
            inv3 = inv * np.sqrt(inv)
            inv5 = inv3 * inv
            iso = np.einsum("n,mn->m", cw, inv3)
            aniso = np.einsum("mn,mnj,mnk->mjk", cw[None, :] * inv5, d, d)
            out[a:b] = (iso[:, None, None] * eye[None, :, :] - 3.0 * aniso) / FOUR_PI
        return out
    s2 = np.einsum("nk,nk->n", src_pos, src_pos)
    t2 = np.einsum("mk,mk->m", targets, targets)
    # second moments of the sources, for sum_n w_n d_j d_k expanded in x and y
    jj, kk = np.triu_indices(3)
    src_mom = src_pos[:, jj] * src_pos[:, kk]          # (n, 6)
    for a, b in _target_chunks(targets.shape[0], max(1, src_pos.shape[0] // 2)):
        tg = targets[a:b]
        d2 = tg @ src_pos.T
        d2 *= -2.0
        d2 += t2[a:b, None]
        d2 += s2[None, :]
        d2 += eps2
        np.maximum(d2, 0.25 * eps2, out=d2)
        inv = 1.0 / d2
        inv3 = inv * np.sqrt(inv)
        inv5 = inv3 * inv
        np.multiply(inv3, cw[None, :], out=inv3)
        np.multiply(inv5, cw[None, :], out=inv5)
        iso = np.sum(inv3, axis=1)
        s5 = np.sum(inv5, axis=1)                      # sum w5
        first = inv5 @ src_pos                          # sum w5 y
        second = inv5 @ src_mom                         # sum w5 y_j y_k (triu)
        m = tg.shape[0]
        aniso = np.empty((m, 3, 3))
        for idx in range(6):
            j, k = jj[idx], kk[idx]
            vals = (tg[:, j] * tg[:, k] * s5 - tg[:, j] * first[:, k]
                    - tg[:, k] * first[:, j] + second[:, idx])
            aniso[:, j, k] = vals
            aniso[:, k, j] = vals
        out[a:b] = (iso[:, None, None] * eye[None, :, :] - 3.0 * aniso) / FOUR_PI
    return out


def pair_potential(positions, charge_weights, eps, sigma=1.0):
    """Total pair interaction energy sigma/(4pi) sum_{i<j} c_i c_j / sqrt(d^2+eps^2).

    Consistent with the softened force, so energy drift measures integrator
    error only.
    """
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    cw = np.asarray(charge_weights, dtype=float)
    n = pos.shape[0]
    if n < 2:
        return 0.0
    eps2 = eps * eps
    p2 = np.einsum("nk,nk->n", pos, pos)
    total = 0.0
    for a, b in _target_chunks(n, n):
        d2 = pos[a:b] @ pos.T
        d2 *= -2.0
        d2 += p2[a:b, None]
        d2 += p2[None, :]
        d2 += eps2
        np.maximum(d2, 0.25 * eps2, out=d2)
        inv = 1.0 / np.sqrt(d2)
        # zero the self terms (and exact-coincident pairs are fine: finite inv)
        rows = np.arange(a, b)
        inv[rows - a, rows] = 0.0
        total += float(np.einsum("m,mn,n->", cw[a:b], inv, cw))
    return sigma * 0.5 * total / FOUR_PI


def spherical_pair_potential(radii, charge_weights, sigma=1.0):
    """Exact shell-shell energy sigma sum_{i<j} c_i c_j / (4 pi max(r_i, r_j))."""
    order = np.argsort(radii, kind="stable")
    r = np.asarray(radii, dtype=float)[order]
    cw = np.asarray(charge_weights, dtype=float)[order]
    inner = np.concatenate([[0.0], np.cumsum(cw)])[:-1]   # charge strictly before i
    return sigma * float(np.sum(cw * inner / r)) / FOUR_PI


# --------------------------------------------------------------------------
# Smoothing kernels and densities


def bump1d(q):
    """Normalized compactly supported cubic B-spline bump on |q| < 2."""
    q = np.abs(np.asarray(q, dtype=float))
    out = np.zeros_like(q)
    near = q < 1.0
    mid = (q >= 1.0) & (q < 2.0)
    qn = q[near]
    out[near] = 2.0 / 3.0 - qn**2 + 0.5 * qn**3
    qm = q[mid]
    out[mid] = (2.0 - qm) ** 3 / 6.0
    return out


def bump1d_cdf(q):
    """Cumulative integral of bump1d from -inf; smooth monotone 0 -> 1."""
    q = np.asarray(q, dtype=float)
    a = np.abs(q)
    half = np.zeros_like(a)
    near = a < 1.0
    mid = (a >= 1.0) & (a < 2.0)
    an = a[near]
    half[near] = 2.0 * an / 3.0 - an**3 / 3.0 + an**4 / 8.0
    am = a[mid]
    half[mid] = 0.5 - (2.0 - am) ** 4 / 24.0
    half[a >= 2.0] = 0.5
    return 0.5 + np.sign(q) * half


def _bump3d_profile(q):
    q = np.abs(np.asarray(q, dtype=float))
    out = np.zeros_like(q)
    near = q < 1.0
    mid = (q >= 1.0) & (q < 2.0)
    qn = q[near]
    out[near] = 1.0 - 1.5 * qn**2 + 0.75 * qn**3
    qm = q[mid]
    out[mid] = 0.25 * (2.0 - qm) ** 3
    return out


def bump3d(r, h):
    """3D radial cubic-spline kernel with support 2h; integrates to 1."""
    return _bump3d_profile(r / h) / (np.pi * h**3)


def density_estimate(targets, src_pos, src_charge_weights, h):
    """Kernel-density estimate of the charge density at the targets.

    rho_h(x) = sum_s c_s K_h(x - y_s) with the normalized 3D cubic-spline
    kernel. Linear in the weights; current density is obtained by passing
    velocity-weighted charges componentwise.
    """
    if not h > 0:
        raise FieldError("bandwidth must be positive")
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    src_pos = np.atleast_2d(np.asarray(src_pos, dtype=float))
    cw = np.asarray(src_charge_weights, dtype=float)
    out = np.zeros(targets.shape[0])
    if src_pos.shape[0] == 0:
        return out
    s2 = np.einsum("nk,nk->n", src_pos, src_pos)
    t2 = np.einsum("mk,mk->m", targets, targets)
    for a, b in _target_chunks(targets.shape[0], src_pos.shape[0]):
        d2 = targets[a:b] @ src_pos.T
        d2 *= -2.0
        d2 += t2[a:b, None]
        d2 += s2[None, :]
        np.maximum(d2, 0.0, out=d2)
        out[a:b] = bump3d(np.sqrt(d2), h) @ cw
    return out


def radial_density(probe_r, radii, charge_weights, h):
    """Charge density of a shell set: rho(r) = sum c_i B_h(r - r_i) / (4 pi r^2)."""
    if not h > 0:
        raise FieldError("bandwidth must be positive")
    probe_r = np.asarray(probe_r, dtype=float)
    if np.any(probe_r <= 0.0):
        raise FieldError("radial_density requires r > 0")
    radii = np.asarray(radii, dtype=float)
    cw = np.asarray(charge_weights, dtype=float)
    if radii.size == 0:
        return np.zeros_like(probe_r)
    diff = (probe_r[:, None] - radii[None, :]) / h
    dens = (bump1d(diff) / h) @ cw
    return dens / (FOUR_PI * probe_r**2)


def smoothed_enclosed_charge(probe_r, radii, charge_weights, h):
    """Kernel-smoothed cumulative charge; the C^2 counterpart of enclosed_charge."""
    probe_r = np.asarray(probe_r, dtype=float)
    radii = np.asarray(radii, dtype=float)
    cw = np.asarray(charge_weights, dtype=float)
    if radii.size == 0:
        return np.zeros_like(probe_r)
    return bump1d_cdf((probe_r[:, None] - radii[None, :]) / h) @ cw


# --------------------------------------------------------------------------
# Per-species-block accumulation
#
# Fields of a multispecies ensemble are summed one species block at a time.
# For charge-mirrored species with shared sampling the blocks are exact IEEE
# negations of each other, so the net field cancels to exactly zero instead
# of leaving a round-off residue that seeds the stiff coincident-pair
# instability.


def species_field_sum(targets, blocks, eps):
    """Sum softened_field_sum over (positions, charge_weights) blocks."""
    out = None
    for pos, cw in blocks:
        part = softened_field_sum(targets, pos, cw, eps)
        out = part if out is None else out + part
    return out


def species_gradient_sum(targets, blocks, eps):
    out = None
    for pos, cw in blocks:
        part = softened_gradient_sum(targets, pos, cw, eps)
        out = part if out is None else out + part
    return out


def species_density(targets, blocks, h):
    out = None
    for pos, cw in blocks:
        part = density_estimate(targets, pos, cw, h)
        out = part if out is None else out + part
    return out


# --------------------------------------------------------------------------
# Limiting velocity-space field


def limiting_field(v_targets, v_atoms, charge_weights, eps):
    """Velocity-space field induced by weighted limiting velocities.

    Identical kernel to the position-space field; the empirical limiting
    measure is atomic, so eps > 0 is recommended.
    """
    return softened_field_sum(v_targets, v_atoms, charge_weights, eps)


def isotropic_limiting_field(v_targets, atom_speeds, charge_weights):
    """Exact limiting field for an isotropic limiting-speed measure.

    For a spherically symmetric profile the induced field at velocity v is
    radial in velocity space with magnitude Q(<=|v|) / (4 pi |v|^2), the
    enclosed-charge reduction applied in velocity coordinates. Works for
    in-plane (m, 2) targets as well as (m, 3).
    """
    v = np.atleast_2d(np.asarray(v_targets, dtype=float))
    s = np.linalg.norm(v, axis=1)
    order = np.argsort(atom_speeds, kind="stable")
    speeds = np.asarray(atom_speeds, dtype=float)[order]
    cw = np.asarray(charge_weights, dtype=float)[order]
    out = np.zeros_like(v)
    ok = s > 0.0
    if np.any(ok):
        q_in = enclosed_charge(speeds, cw, s[ok])
        mag = spherical_field(q_in, s[ok])
        out[ok] = v[ok] * (mag / s[ok])[:, None]
    return out


def softened_shell_field_radial(s_targets, shell_radii, charge_weights, eps):
    """Radial field of Plummer-softened concentric shells, closed form.

    A shell of charge c and radius u contributes
        E(s) = c / (8 pi u s^2) * [ (A+ - A-) - s ((s+u)/A+ - (s-u)/A-) ]
    with A+- = sqrt((s -++ u)^2 + eps^2); this is the spherical average of
    the Plummer kernel, so it reduces to the shell theorem as eps -> 0 and
    stays C^1 through the shell. Used for the isotropic limiting field,
    where the atomic measure needs eps > 0.
    """
    s = np.asarray(s_targets, dtype=float)
    u = np.asarray(shell_radii, dtype=float)
    cw = np.asarray(charge_weights, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0.0
    if not np.any(pos) or u.size == 0:
        return out
    sp = s[pos]
    eps2 = eps * eps
    acc = np.zeros_like(sp)
    step = max(1, _CHUNK_ELEMS // max(1, u.size))
    for a in range(0, sp.size, step):
        ss = sp[a:a + step, None]
        plus = ss + u[None, :]
        minus = ss - u[None, :]
        ap = np.sqrt(plus**2 + eps2)
        am = np.sqrt(minus**2 + eps2)
        bracket = (ap - am) - ss * (plus / ap - minus / am)
        acc[a:a + step] = (bracket / u[None, :]) @ cw
    out[pos] = acc / (8.0 * np.pi * sp**2)
    return out
