import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from vsl import dynamics, fields, model
from vsl.dynamics import (DynamicsError, compute_Y, compute_Z,
                          flow_jacobian_probe, step_characteristics_3d,
                          step_spherical)
from vsl.fields import FOUR_PI


def zero_accel(t, x):
    return np.zeros_like(x)


def central_field(mass_c, sign=-1.0):
    def accel(t, x):
        r = np.linalg.norm(x, axis=1, keepdims=True)
        return sign * mass_c * x / (FOUR_PI * r**3)
    return accel


def test_free_streaming_exact():
    rng = np.random.default_rng(2)
    x0 = rng.standard_normal((30, 3))
    v0 = rng.standard_normal((30, 3))
    x, v = x0.copy(), v0.copy()
    a = None
    t, dt = 0.0, 0.05
    for _ in range(200):
        x, v, a = step_characteristics_3d(x, v, zero_accel, t, dt, a0=a)
        t += dt
    assert_array_equal(v, v0)                      # kicks add exactly zero
    assert_allclose(x, x0 + t * v0, rtol=1e-12, atol=1e-13)


def test_reversibility_3d():
    rng = np.random.default_rng(7)
    src = rng.standard_normal((40, 3))
    cw = rng.random(40)

    def accel(t, x):
        return fields.softened_field_sum(x, src, cw, 0.1)

    x0 = rng.standard_normal((10, 3)) + 3.0
    v0 = 0.1 * rng.standard_normal((10, 3))
    x, v, _ = step_characteristics_3d(x0, v0, accel, 0.0, 0.05)
    xb, vb, _ = step_characteristics_3d(x, v, accel, 0.05, -0.05)
    assert np.max(np.abs(xb - x0)) < 1e-12
    assert np.max(np.abs(vb - v0)) < 1e-12


def test_circular_orbit_gravitational():
    # closed-form balance: v = sqrt(M_c / (4 pi r)) on a circular orbit
    mc, r0 = 4 * np.pi, 1.0
    v_circ = np.sqrt(mc / (FOUR_PI * r0))
    accel = central_field(mc, sign=-1.0)
    x = np.array([[r0, 0.0, 0.0]])
    v = np.array([[0.0, v_circ, 0.0]])
    period = 2 * np.pi * r0 / v_circ
    n = 4000
    dt = period / n
    a = None
    t = 0.0
    for _ in range(n):
        x, v, a = step_characteristics_3d(x, v, accel, t, dt, a0=a)
        t += dt
    assert abs(np.linalg.norm(x[0]) - r0) < 1e-3
    assert_allclose(x[0], [r0, 0, 0], atol=5e-3)   # back to the start


def make_shells(r, w, ell, charge=0.0, weight=None):
    n = len(r)
    return model.SpeciesShells(
        "s", charge, 1.0, np.arange(n), np.asarray(r, float),
        np.asarray(w, float), np.asarray(ell, float), np.zeros(n),
        np.full(n, 1.0 / n) if weight is None else np.asarray(weight, float))


def test_spherical_free_radial_motion():
    # ell = 0, no charge: r(t) = |r0 + w0 t| with pass-through at the origin
    shells = make_shells([1.0], [-0.5], [0.0])
    t, dt = 0.0, 0.01
    a = None
    for _ in range(400):
        shells, a = step_spherical(shells, t, dt, 1.0, a0=a)
        t += dt
    assert shells.r[0] == pytest.approx(abs(1.0 - 0.5 * t), rel=1e-10)
    assert shells.w[0] == pytest.approx(0.5, rel=1e-10)   # flipped at crossing
    assert shells.phi[0] == pytest.approx(np.pi)


def test_spherical_centrifugal_energy():
    # single shell, ell > 0, no charge: w^2/2 + ell/(2 r^2) conserved to 1e-6
    shells = make_shells([1.0], [0.0], [1.0])
    e0 = 0.5 * shells.w[0] ** 2 + shells.ell[0] / (2 * shells.r[0] ** 2)
    t, dt = 0.0, 5e-4
    a = None
    for _ in range(10_000):
        shells, a = step_spherical(shells, t, dt, 1.0, a0=a)
        t += dt
    e1 = 0.5 * shells.w[0] ** 2 + shells.ell[0] / (2 * shells.r[0] ** 2)
    assert abs(e1 - e0) / e0 < 1e-6


def test_spherical_ell_and_weights_untouched():
    rng = np.random.default_rng(3)
    shells = make_shells(1 + rng.random(50), rng.standard_normal(50) * 0.1,
                         rng.random(50), charge=1.0)
    ell0 = shells.ell.copy()
    w0 = shells.weight.copy()
    a = None
    t = 0.0
    for _ in range(100):
        shells, a = step_spherical(shells, t, 0.01, 1.0, a0=a)
        t += 0.01
    assert_array_equal(shells.ell, ell0)
    assert_array_equal(shells.weight, w0)


def test_spherical_reversibility():
    rng = np.random.default_rng(9)
    shells = make_shells(1 + rng.random(30), 0.2 * rng.standard_normal(30),
                         0.5 * rng.random(30), charge=1.0)
    r0, w0 = shells.r.copy(), shells.w.copy()
    fwd, _ = step_spherical(shells, 0.0, 0.02, 1.0)
    back, _ = step_spherical(fwd, 0.02, -0.02, 1.0)
    assert np.max(np.abs(back.r - r0)) < 1e-14
    assert np.max(np.abs(back.w - w0)) < 1e-14


def test_monocharged_ball_eventually_outgoing(mini_mono):
    last = mini_mono.frames[-1].ensemble.species[0]
    assert np.all(last.w > 0.0)


def test_spherical_matches_3d_histogram():
    # same initial ball integrated by both engines: radius quantiles agree
    from vsl import engine, io
    text = """
[simulation]
engine = ENGINE
softening = SOFT
dt_initial = 0.02
t_end = 16

[species]
name = ions
charge = 1.0
mass = 1.0
count = 500
seed = 42
kind = uniform-ball
radius_x = 1.0
radius_v = 0.5
total_number = 1.0
"""
    cfg_s = io.parse_config(text.replace("ENGINE", "spherical-shell").replace("SOFT", "0"))
    cfg_3 = io.parse_config(text.replace("ENGINE", "direct-3d").replace("SOFT", "0.02"))
    res_s = engine.run_simulation(cfg_s)
    res_3 = engine.run_simulation(cfg_3)
    r_s = np.sort(res_s.frames[-1].ensemble.species[0].r)
    r_3 = np.sort(np.linalg.norm(res_3.frames[-1].ensemble.species[0].x, axis=1))
    qs = np.quantile(r_s, [0.1, 0.3, 0.5, 0.7, 0.9])
    q3 = np.quantile(r_3, [0.1, 0.3, 0.5, 0.7, 0.9])
    assert np.all(np.abs(qs - q3) / q3 < 0.05)


# --------------------------------------------------------------------------
# Y and Z


def test_compute_Y_zero_field_constant():
    times = np.array([0.0, 1.0, 2.0, 4.0])
    x0 = np.array([[1.0, -2.0, 0.5]])
    v0 = np.array([[0.3, 0.1, -0.2]])
    X = np.stack([x0[0] + t * v0[0] for t in times])[:, None, :]
    V = np.tile(v0, (4, 1))[:, None, :]
    Y = compute_Y(times, X, V)
    for k in range(4):
        assert_allclose(Y[k, 0], x0[0], rtol=1e-14)
    # t = 0 gives Y = X exactly
    assert_array_equal(Y[0], X[0])


def test_compute_Y_shape_mismatch():
    with pytest.raises(DynamicsError):
        compute_Y(np.array([1.0, 2.0]), np.zeros((3, 2, 3)), np.zeros((3, 2, 3)))


def test_compute_Z_basics():
    times = np.array([1.0, 2.0, 4.0])
    Y = np.zeros((3, 2, 3))
    V = np.ones((3, 2, 3))

    Z = compute_Z(times, Y, V, lambda v: np.zeros_like(v), 1.0)
    assert_array_equal(Z, Y)                      # E_inf == 0 keeps Z = Y

    Z = compute_Z(times, Y, V, lambda v: v, 2.0)
    assert_array_equal(Z[0], Y[0])                # ln(1) = 0
    assert_allclose(Z[1], Y[1] + 2.0 * np.log(2.0) * V[1], rtol=1e-14)

    with pytest.raises(DynamicsError):
        compute_Z(np.array([0.5]), Y[:1], V[:1], lambda v: v, 1.0)


def test_dyadic_Y_increment_matches_limiting_field(mini_mono):
    # |Y(2t) - Y(t)| -> (q/m) |E_inf(V_inf)| ln 2 particlewise at large t
    from vsl import engine
    rec = mini_mono.records["ions"]
    profile = mini_mono.profile
    times = list(rec.times)
    i1, i2 = times.index(125.0), times.index(250.0)
    Y = rec.Y()
    dY = np.linalg.norm(Y[i2] - Y[i1], axis=1)
    einf = np.linalg.norm(profile.einf(rec.V[i2]), axis=1)
    expect = einf * np.log(2.0)
    bulk = einf > 0.3 * einf.max()      # away from the field's zero crossing
    ratio = dY[bulk] / expect[bulk]
    assert 0.6 < np.median(ratio) < 1.4


# --------------------------------------------------------------------------
# measure-preservation probe


def test_jacobian_probe_zero_field_exact():
    det = flow_jacobian_probe(lambda t, x: np.zeros_like(x),
                              (0.1, 0.2, 0.3), (0.4, 0.5, 0.6), 4.0, 1e-4)
    # free streaming maps (Y, V) identically; only time-sum round-off remains
    assert abs(det - 1.0) < 1e-11


def test_jacobian_probe_degenerate_delta():
    with pytest.raises(DynamicsError):
        flow_jacobian_probe(lambda t, x: np.zeros_like(x),
                            (0, 0, 0), (0, 0, 0), 1.0, 0.0)


def test_jacobian_probe_second_order_on_smooth_field():
    def accel_field(t, x):
        return 0.3 * np.sin(x)

    dets = {}
    for delta in (2e-3, 1e-3):
        dets[delta] = flow_jacobian_probe(
            accel_field, (0.3, -0.2, 0.5), (0.1, 0.0, -0.1), 6.0, delta,
            dt_of=lambda t: 0.02)
    e1 = abs(dets[2e-3] - 1.0)
    e2 = abs(dets[1e-3] - 1.0)
    assert e2 < 5e-3
    assert e1 / max(e2, 1e-16) == pytest.approx(4.0, rel=0.25)


def test_jacobian_probe_on_3d_scenario():
    # measure preservation holds on the direct engine's softened flow too
    from vsl import engine, scenarios
    cfg = scenarios.scenario_config(
        "separated-beams",
        ["species.right.count=200", "species.left.count=200", "t_end=16"])
    dets = engine.jacobian_probe_on_run(
        cfg, x0=(6.2, 0.1, -0.1), v0=(1.05, 0.02, 0.0),
        t_target=16.0, deltas=(1e-4,))
    assert abs(dets[1e-4] - 1.0) < 1e-2
