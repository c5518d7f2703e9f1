import pytest

from vsl import engine, io, scenarios


@pytest.fixture(scope="session")
def mini_mono():
    """Small monocharged spherical run shared by unit tests."""
    cfg = scenarios.scenario_config(
        "monocharged-ball",
        ["species.ions.count=1500", "t_end=256", "snapshot_times=dyadic,125,250",
         "dt_initial=0.01"])
    return engine.run_simulation(cfg)


@pytest.fixture(scope="session")
def mini_twin():
    cfg = scenarios.scenario_config(
        "twin-neutral",
        ["species.positive.count=250", "species.negative.count=250", "t_end=16"])
    return engine.run_simulation(cfg)


def free_stream_config(count=40, t_end=16.0, seed=11):
    """Zero-charge species: the exact free-streaming reference."""
    text = f"""
[simulation]
engine = direct-3d
softening = 0.01
dt_initial = 0.1
t_end = {t_end}

[species]
name = neutral
charge = 0.0
mass = 1.0
count = {count}
seed = {seed}
kind = uniform-ball
radius_x = 1.0
radius_v = 0.5
"""
    return io.parse_config(text)


@pytest.fixture(scope="session")
def free_stream_run():
    return engine.run_simulation(free_stream_config())
