"""Wick-renormalized nonlinear wave equations on the two-dimensional torus.

Spectral fields, exact Gaussian stochastic convolutions, Picard and Strang
solvers for the remainder equation, modified-energy monitoring and truncated
Gibbs measure sampling, plus a command-line harness that runs the numerical
experiments deterministically.
"""

__version__ = "0.1.0"

from .torus import FieldPair, LatticeSpec, SpectralField
from .ioperator import IOperatorSpec
from .noise import NoiseStream

__all__ = ["FieldPair", "LatticeSpec", "SpectralField", "IOperatorSpec", "NoiseStream", "__version__"]
