"""Shipped scenario configurations.

Three canonical setups exercise the contrasting asymptotic regimes:

* ``monocharged-ball``: one repulsive species, spherically symmetric, run on
  the exact shell engine. Non-neutral, so the t^-2 field and t^-3 density
  rates are sharp and the limiting field drives the logarithmic trajectory
  correction.
* ``twin-neutral``: two species with opposite charges sharing the same
  samples. The charge density vanishes identically, fields stay at the
  round-off floor, and every charge-signed diagnostic cancels.
* ``separated-beams``: opposite charges, widely separated and flying apart.
  Net charge is zero but the limiting velocity density is not, so each beam
  decays like an isolated monocharged cloud.
"""

MONOCHARGED_BALL = """\
# Monocharged spherical ball on the exact shell engine.
[simulation]
engine = spherical-shell
force_sign = plasma
softening = 0
dt_initial = 0.005
t_end = 1024
snapshot_times = dyadic, 125, 250, 500, 1000
thread_hint = 0

[species]
name = ions
charge = 1.0
mass = 1.0
count = 10000
seed = 7041
kind = uniform-ball
center_x = 0, 0, 0
center_v = 0, 0, 0
radius_x = 1.0
radius_v = 0.5
total_number = 1.0
"""

TWIN_NEUTRAL = """\
# Identical-twin neutral pair: shared sampling, opposite charges.
[simulation]
engine = direct-3d
force_sign = plasma
softening = 0.001
dt_initial = 0.05
t_end = 64
snapshot_times = dyadic
thread_hint = 0

[species]
name = positive
charge = 1.0
mass = 1.0
count = 700
seed = 9131
kind = uniform-ball
center_x = 0, 0, 0
center_v = 0, 0, 0
radius_x = 1.0
radius_v = 0.5
total_number = 1.0

[species]
name = negative
charge = -1.0
mass = 1.0
count = 700
seed = 9131
kind = uniform-ball
center_x = 0, 0, 0
center_v = 0, 0, 0
radius_x = 1.0
radius_v = 0.5
total_number = 1.0
"""

SEPARATED_BEAMS = """\
# Widely separated opposite beams with opposing bulk velocities.
[simulation]
engine = direct-3d
force_sign = plasma
softening = auto
dt_initial = 0.02
t_end = 512
snapshot_times = dyadic, 48, 96, 192, 384
thread_hint = 0

[species]
name = right
charge = 1.0
mass = 1.0
count = 900
seed = 2203
kind = shifted-beam
center_x = 6, 0, 0
center_v = 1, 0, 0
radius_x = 1.0
sigma_v = 0.25
total_number = 1.0

[species]
name = left
charge = -1.0
mass = 1.0
count = 900
seed = 5507
kind = shifted-beam
center_x = -6, 0, 0
center_v = -1, 0, 0
radius_x = 1.0
sigma_v = 0.25
total_number = 1.0
"""

SCENARIOS = {
    "monocharged-ball": MONOCHARGED_BALL,
    "twin-neutral": TWIN_NEUTRAL,
    "separated-beams": SEPARATED_BEAMS,
}


def scenario_config(name, overrides=()):
    from . import io

    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; have {sorted(SCENARIOS)}")
    config = io.parse_config(SCENARIOS[name])
    if overrides:
        config = io.apply_overrides(config, overrides)
    return config
