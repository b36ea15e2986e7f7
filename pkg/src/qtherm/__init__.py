"""Repeated quantum interactions with indirect measurement, at zero and positive temperature.

Discrete trajectories, the GNS picture of a Gibbs bath, and the stochastic
master equations obtained in the continuous limit.
"""

__version__ = "0.1.0"

from .discrete import KrausFamily, Observable, kraus_family, run_trajectory, unconditioned_channel
from .gns import build_gns_basis, thermal_limit_blocks, transport_operator, transport_projector
from .model import InteractionModel, build_unitary, thermal_state
from .sde import integrate_sde, integrate_thermal, integrate_zero_temp, solve_master_ode

__all__ = [
    "InteractionModel", "KrausFamily", "Observable", "build_gns_basis", "build_unitary",
    "integrate_sde", "integrate_thermal", "integrate_zero_temp", "kraus_family",
    "run_trajectory", "solve_master_ode", "thermal_limit_blocks", "thermal_state",
    "transport_operator", "transport_projector", "unconditioned_channel",
]
