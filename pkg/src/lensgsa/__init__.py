"""Surrogate-based global sensitivity and uncertainty analysis of a multistep lens assembly."""
from .assembly import (
    INPUT_LABELS,
    OUTPUT_LABELS,
    AssemblyModel,
    AssemblyParams,
    NonConvergence,
    deformations,
    solve_assembly,
)
from .propagate import MonteCarloPropagation, propagate
from .sobol import SobolAnalysis, run_convergence
from .surrogate import NetworkConfig, SurrogateRegressor

__version__ = "0.1.0"

__all__ = [
    "INPUT_LABELS",
    "OUTPUT_LABELS",
    "AssemblyModel",
    "AssemblyParams",
    "MonteCarloPropagation",
    "NetworkConfig",
    "NonConvergence",
    "SobolAnalysis",
    "SurrogateRegressor",
    "deformations",
    "propagate",
    "run_convergence",
    "solve_assembly",
]
