"""Gradient Ascent Pulse Engineering for piecewise-constant quantum control."""

from .core import (
    ControlSet,
    CouplingTerm,
    Generator,
    TimeGrid,
    Trajectory,
    inner_product,
    linear_coupling,
    liouville_generator,
    quadratic_coupling,
)
from .engine import (
    ControlProblem,
    GrapeResult,
    IterationRecord,
    compute_gradient,
    evaluate_objective,
    finite_difference_gradient,
    optimize,
)
from .functionals import FunctionalKind, FunctionalSpec
from .optimizer import Method, OptimizerOptions
from .propagators import expm, forward_propagate, backward_propagate

__version__ = "0.1.0"

__all__ = [
    "ControlProblem",
    "ControlSet",
    "CouplingTerm",
    "FunctionalKind",
    "FunctionalSpec",
    "Generator",
    "GrapeResult",
    "IterationRecord",
    "Method",
    "OptimizerOptions",
    "TimeGrid",
    "Trajectory",
    "backward_propagate",
    "compute_gradient",
    "evaluate_objective",
    "expm",
    "finite_difference_gradient",
    "forward_propagate",
    "inner_product",
    "linear_coupling",
    "liouville_generator",
    "optimize",
    "quadratic_coupling",
]
