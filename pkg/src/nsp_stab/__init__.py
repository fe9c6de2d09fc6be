"""Steady states and exponential stability of a viscous charged fluid
(compressible Navier-Stokes-Poisson system) on bounded domains: solvers,
perturbation dynamics, energy diagnostics and a verification CLI."""

from .domain import DomainSpec, Grid, build_grid
from .steady import BackgroundProfile, SteadyState, solve_steady, steady_residual
from .evolve import PerturbationState, SchemeParams, imex_step, run_trajectory
from .energy import decay_fit, energy_functionals

__all__ = [
    "DomainSpec", "Grid", "build_grid",
    "BackgroundProfile", "SteadyState", "solve_steady", "steady_residual",
    "PerturbationState", "SchemeParams", "imex_step", "run_trajectory",
    "decay_fit", "energy_functionals",
]

__version__ = "0.1.0"
