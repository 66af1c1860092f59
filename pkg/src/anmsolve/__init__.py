"""Asymptotic Numerical Method continuation over batched computing graphs."""
from . import operators as _operators  # noqa: F401  registers the built-in operators
from .anm import (BorderedSystem, ContinuationOptions, ContinuationTrace, Homotopy,
                  SeriesState, bordered_solve, continuation, equational_continuation, rms,
                  rov_taylor, solve_coefficients)
from .errors import (ANMError, ConfigError, FactorizationError, GraphBuildError,
                     InvalidStartError, InvertedElementError, MaxIterationsError, MeshError,
                     NoProgressError, NumericalDomainError, SolverError)
from .graph import ComputeGraph, Expansion, SparseAffineMap, Var, build_op, evaluate, jacobian
from .pade import PadeApproximant, pade_construct, rov_pade

__version__ = "0.1.0"
