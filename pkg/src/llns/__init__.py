"""Galerkin-truncated fluctuating Navier-Stokes on the torus, with Besov, Euler-residual and shell-model diagnostics."""
from llns.config import ExperimentConfig, load_config
from llns.integrator import SolverParams, TrajectoryStore, energy_audit, make_params, run, step
from llns.noise import RngStream
from llns.spectral import SpectralField, TorusGrid

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig", "load_config", "SolverParams", "TrajectoryStore", "energy_audit", "make_params",
    "run", "step", "RngStream", "SpectralField", "TorusGrid", "__version__",
]
