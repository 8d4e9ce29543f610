"""Intersection measures of killed Brownian motions: kernels, Monte Carlo,
moment quadrature, super-exponential constants and rate functions."""

from .errors import (AccuracyError, AdmissibilityError, IMLError, InputError, PreconditionError,
                     ResolutionError, ResourceError, SolverError)
from .geometry import DomainSpec, GridField, Lattice, make_lattice
from .heat_kernel import KernelEval, killed_kernel, resolvent_r1

__all__ = [
    "AccuracyError", "AdmissibilityError", "IMLError", "InputError", "PreconditionError",
    "ResolutionError", "ResourceError", "SolverError", "DomainSpec", "GridField", "Lattice",
    "make_lattice", "KernelEval", "killed_kernel", "resolvent_r1",
]
__version__ = "0.1.0"
