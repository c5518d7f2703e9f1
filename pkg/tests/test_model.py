import numpy as np
import pytest
from numpy.testing import assert_array_equal

from vsl import model
from vsl.model import (ConfigError, DistributionRecipe, ParticleEnsemble,
                       SimulationConfig, SpeciesSpec, net_charge, sample_initial)


def ball_recipe(**kw):
    base = dict(kind="uniform-ball", radius_x=1.0, radius_v=0.5, total_number=1.0)
    base.update(kw)
    return DistributionRecipe(**base)


def one_species_config(recipe=None, count=100, seed=3, charge=1.0, engine="direct-3d"):
    spec = SpeciesSpec("a", charge, 1.0, count, recipe or ball_recipe(), seed)
    return SimulationConfig(species=(spec,), engine=engine, softening=0.01,
                            dt_initial=0.1, t_end=4.0)


def test_same_seed_reproduces_bitwise():
    cfg = one_species_config(count=500, seed=42)
    e1 = sample_initial(cfg)
    e2 = sample_initial(cfg)
    assert_array_equal(e1.species[0].x, e2.species[0].x)
    assert_array_equal(e1.species[0].v, e2.species[0].v)
    assert_array_equal(e1.species[0].weight, e2.species[0].weight)


def test_different_seed_differs():
    e1 = sample_initial(one_species_config(seed=1))
    e2 = sample_initial(one_species_config(seed=2))
    assert not np.array_equal(e1.species[0].x, e2.species[0].x)


@pytest.mark.parametrize("kind,vel_key", [
    ("uniform-ball", "radius_v"),
    ("truncated-gaussian", "sigma_v"),
    ("shifted-beam", "sigma_v"),
    ("spherical-shellset", "radius_v"),
])
def test_support_containment(kind, vel_key):
    kw = dict(kind=kind, center_x=(1.0, -2.0, 0.5), center_v=(0.3, 0.0, -0.1),
              radius_x=2.0, total_number=3.0)
    if kind == "spherical-shellset":
        kw["center_x"] = kw["center_v"] = (0.0, 0.0, 0.0)
    kw[vel_key] = 0.4
    recipe = DistributionRecipe(**kw)
    cfg = one_species_config(recipe, count=2000, seed=9)
    ens = sample_initial(cfg)
    s = ens.species[0]
    assert np.all(np.linalg.norm(s.x - np.array(recipe.center_x), axis=1)
                  <= recipe.radius_x + 1e-12)
    assert np.all(np.linalg.norm(s.v - np.array(recipe.center_v), axis=1)
                  <= recipe.velocity_extent() + 1e-12)


def test_single_sample_in_ball_weight_one():
    cfg = one_species_config(ball_recipe(total_number=1.0), count=1)
    ens = sample_initial(cfg)
    s = ens.species[0]
    assert s.count == 1
    assert s.weight[0] == 1.0
    assert np.linalg.norm(s.x[0]) <= 1.0


def test_weights_equal_and_sum_to_total():
    cfg = one_species_config(ball_recipe(total_number=2.5), count=300)
    s = sample_initial(cfg).species[0]
    assert np.all(s.weight == 2.5 / 300)
    assert s.total_weight() == pytest.approx(2.5, rel=1e-14)


def test_uniform_ball_half_radius_fraction():
    # binomial counting oracle: P(|x| <= R/2) = 1/8
    n = 100_000
    cfg = one_species_config(ball_recipe(), count=n, seed=77)
    s = sample_initial(cfg).species[0]
    frac = np.mean(np.linalg.norm(s.x, axis=1) <= 0.5)
    sigma = np.sqrt(0.125 * 0.875 / n)
    assert abs(frac - 0.125) <= 3 * sigma


def test_net_charge_cases():
    assert net_charge(ParticleEnsemble("3d", [])) == 0.0
    cfg = one_species_config(ball_recipe(total_number=2.5), count=50)
    assert net_charge(sample_initial(cfg)) == pytest.approx(2.5, rel=1e-14)

    twin = SimulationConfig(
        species=(SpeciesSpec("p", 1.0, 1.0, 50, ball_recipe(), 5),
                 SpeciesSpec("n", -1.0, 1.0, 50, ball_recipe(), 5)),
        engine="direct-3d", softening=0.01, dt_initial=0.1, t_end=4.0)
    assert net_charge(sample_initial(twin)) == 0.0


def test_shell_coordinates_identities():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((200, 3))
    v = rng.standard_normal((200, 3))
    r, w, ell = model.shell_coordinates(x, v)
    assert np.allclose(r, np.linalg.norm(x, axis=1))
    assert np.allclose(w, np.einsum("ij,ij->i", x, v) / r)
    # |x cross v|^2 = |x|^2 |v|^2 - (x.v)^2
    v2 = np.einsum("ij,ij->i", v, v)
    assert np.allclose(ell, r**2 * v2 - (w * r) ** 2, rtol=1e-10)


def test_spherical_engine_derives_shells():
    cfg = one_species_config(ball_recipe(), count=400, engine="spherical-shell")
    ens = sample_initial(cfg)
    assert ens.kind == "spherical"
    s = ens.species[0]
    assert np.all(s.r > 0) and np.all(s.ell >= 0)
    assert np.all(s.phi == 0.0)


def test_invariant_violations():
    with pytest.raises(ConfigError):
        SpeciesSpec("a", 1.0, -1.0, 10, ball_recipe()).validate()
    with pytest.raises(ConfigError):
        SpeciesSpec("a", 1.0, 1.0, 0, ball_recipe()).validate()
    with pytest.raises(ConfigError):
        DistributionRecipe(kind="uniform-ball", radius_x=1.0).validate()  # no radius_v
    with pytest.raises(ConfigError):
        DistributionRecipe(kind="nope", radius_x=1.0, radius_v=1.0).validate()


def test_spherical_engine_config_rules():
    spec = SpeciesSpec("a", 1.0, 1.0, 10, ball_recipe())
    two = SimulationConfig(species=(spec, SpeciesSpec("b", -1.0, 1.0, 10, ball_recipe(), 1)),
                           engine="spherical-shell", dt_initial=0.1, t_end=4.0)
    with pytest.raises(ConfigError, match="one species"):
        two.validate()
    off_center = SimulationConfig(
        species=(SpeciesSpec("a", 1.0, 1.0, 10, ball_recipe(center_x=(1, 0, 0))),),
        engine="spherical-shell", dt_initial=0.1, t_end=4.0)
    with pytest.raises(ConfigError, match="symmetric"):
        off_center.validate()


def test_snapshot_times_validated():
    spec = SpeciesSpec("a", 1.0, 1.0, 10, ball_recipe())
    with pytest.raises(ConfigError, match="snapshot"):
        SimulationConfig(species=(spec,), dt_initial=0.1, t_end=4.0,
                         snapshot_times=(0.5, 2.0)).validate()
    with pytest.raises(ConfigError, match="snapshot"):
        SimulationConfig(species=(spec,), dt_initial=0.1, t_end=4.0,
                         snapshot_times=(2.0, 8.0)).validate()


def test_dyadic_default_schedule():
    cfg = SimulationConfig(
        species=(SpeciesSpec("a", 1.0, 1.0, 10, ball_recipe()),),
        softening=0.01, dt_initial=0.1, t_end=10.0)
    assert cfg.snapshot_times == (1.0, 2.0, 4.0, 8.0, 10.0)
