"""Queue-aware downlink MU-MIMO beamforming under imperfect CSIT.

The package couples a per-flow fluid value function (closed form, built on
the exponential integral) with a Bernstein-type conservative packet-error
constraint, solves the per-slot beam design as a small semidefinite
relaxation on an in-repo conic solver, and ships a seeded closed-loop
simulator plus brute-force oracles for every nontrivial claim.
"""

__version__ = "0.1.0"

from .model import FlowParams, SystemConfig

__all__ = ["FlowParams", "SystemConfig", "__version__"]
