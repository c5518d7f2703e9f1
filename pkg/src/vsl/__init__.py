"""Collisionless multispecies plasma laboratory.

Integrates the characteristic flow of the Vlasov-Poisson system at desk
scale and measures its large-time asymptotics: field and density decay
rates, convergence of velocity characteristics and spatial averages,
self-similar field profiles, and convergence along logarithmically
corrected trajectories.
"""

from .dynamics import TrajectoryRecord, compute_Y, compute_Z, flow_jacobian_probe
from .engine import RunResult, checkpoint_load, checkpoint_save, run_simulation
from .fields import (FieldSnapshot, density_estimate, enclosed_charge,
                     limiting_field, softened_field_sum, softened_gradient_sum,
                     spherical_field)
from .diagnostics import (AsymptoticProfile, DiagnosticsSeries, FitResult,
                          VelocityDensity, conservation_report, convergence_probe,
                          fit_decay, scattering_residual, spatial_average,
                          support_extents)
from .model import (DistributionRecipe, ParticleEnsemble, SimulationConfig,
                    SpeciesSpec, net_charge, sample_initial)

__version__ = "0.1.0"
