"""Divide-and-conquer sensor network localization by semidefinite patch registration."""

from .netgen import NetworkConfig, NetworkInstance, generate_instance, load_instance, rmsd, save_instance
from .pipeline import PipelineError, SolverConfig, run, solve_instance
from .register import register

__all__ = [
    "NetworkConfig",
    "NetworkInstance",
    "PipelineError",
    "SolverConfig",
    "generate_instance",
    "load_instance",
    "register",
    "rmsd",
    "run",
    "save_instance",
    "solve_instance",
]
