"""Dual convex solver and weak-solution certificates for degenerate mean field games on the torus."""

__version__ = "0.1.0"

from .grid import LambdaOperator, SpaceTimeGrid, opnorm_Lambda  # noqa: E402
from .model import (  # noqa: E402
    CouplingSpec,
    DiffusionSpec,
    HamiltonianSpec,
    HypothesisError,
    ModelSpec,
    estimate_exponents,
)
from .solver import SolverConfig, solve  # noqa: E402

__all__ = [
    "CouplingSpec",
    "DiffusionSpec",
    "HamiltonianSpec",
    "HypothesisError",
    "LambdaOperator",
    "ModelSpec",
    "SolverConfig",
    "SpaceTimeGrid",
    "estimate_exponents",
    "opnorm_Lambda",
    "solve",
]
