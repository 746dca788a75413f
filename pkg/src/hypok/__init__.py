"""Numerical calculus for degenerate Kolmogorov-type diffusion operators.

Explicit heat kernels, semigroups, Balakrishnan fractional powers, Besov
seminorms and nonlocal perimeters, Poincare / Bakry-Emery / Li-Yau / Harnack
inequality verification, and the Bessel extension operator, for generators
A u = tr(Q D^2 u) + <B X, grad u>.
"""

from hypok.operator_core import (
    OperatorSpec,
    GramianBundle,
    KernelConstants,
    gramians,
    heat,
    hypoellipticity_check,
    kolmogorov,
    matrix_exponential,
    ornstein_uhlenbeck,
)

__all__ = [
    "OperatorSpec",
    "GramianBundle",
    "KernelConstants",
    "gramians",
    "heat",
    "hypoellipticity_check",
    "kolmogorov",
    "matrix_exponential",
    "ornstein_uhlenbeck",
]

__version__ = "0.1.0"
