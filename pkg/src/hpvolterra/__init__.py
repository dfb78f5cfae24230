"""hp-version Legendre-Gauss collocation for nonlinear first-kind Volterra equations."""
from __future__ import annotations

from .mesh import Mesh, split_degree_mesh, uniform_mesh
from .problem import REGISTRY, ProblemSpec, make_problem
from .solver import PiecewiseLegendreSolution, SolveOptions, SolverError, solve_global

__all__ = [
    "Mesh",
    "PiecewiseLegendreSolution",
    "ProblemSpec",
    "REGISTRY",
    "SolveOptions",
    "SolverError",
    "make_problem",
    "solve_global",
    "split_degree_mesh",
    "uniform_mesh",
]

__version__ = "0.1.0"
