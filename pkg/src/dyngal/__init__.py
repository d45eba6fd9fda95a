"""Adaptive spectral Galerkin methods with dynamic Dorfler marking."""
from .adapt import ConvergenceTrace, IterationRecord, dyn_gal, plain_dorfler_gal, static_e_dorfler_gal
from .basis import BasisDescriptor, CoeffVector, DualVector, dual_norm, phi_norm, project, weight
from .galerkin import error_sandwich, residual, solve
from .index import IndexSet, Window, WindowSaturationError, ball, union_of_balls
from .marking import MarkingParams, compute_J, dorfler, dynamic_theta, e_dorfler
from .operator import (
    DecayEstimate,
    EllipticProblem,
    StiffnessWindow,
    assemble_entry,
    assemble_window,
    fit_decay,
    fit_inverse_decay,
    restrict,
)
from .sparsity import GevreyClass, best_n_term, cardinality_bound, fit_decay_model, gevrey_norm, rearrange

__version__ = "0.1.0"
