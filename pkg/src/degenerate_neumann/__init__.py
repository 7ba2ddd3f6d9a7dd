"""Numerical checks for parabolic problems with an interior degeneracy and Neumann boundary conditions."""

from .coefficients import OutOfTheoryError, classify, custom, power_law
from .evolution import make_problem, solve_adjoint, solve_forward
from .mesh import assemble_operator, build_grid

__all__ = [
    "OutOfTheoryError", "classify", "custom", "power_law",
    "make_problem", "solve_adjoint", "solve_forward",
    "assemble_operator", "build_grid",
]
__version__ = "0.1.0"
