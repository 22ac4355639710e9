"""Simulation and exact moment computations for the lineage-counting
processes of the Kingman coalescent, the coalescent with mutation and the
ancestral selection graph, with Monte Carlo checks of their small-time
limit theorems."""

__version__ = "0.1.0"

from .engine import (COORDINATES, CountPath, CoupledTrajectory, EntranceLaw, ModelParams,
                     simulate_birth_death, simulate_coupled)
from .analytics import (absorption_moment_oracle, asg_step_moments, cdi_table,
                        hitting_moments, kingman_step_moment, nu_speed)
from .stats import McReport, stream_for

__all__ = [
    "__version__",
    "COORDINATES",
    "CountPath",
    "CoupledTrajectory",
    "EntranceLaw",
    "ModelParams",
    "simulate_birth_death",
    "simulate_coupled",
    "absorption_moment_oracle",
    "asg_step_moments",
    "cdi_table",
    "hitting_moments",
    "kingman_step_moment",
    "nu_speed",
    "McReport",
    "stream_for",
]
