"""Truncated hierarchical B-splines with multi-level Bézier extraction."""

from .bezier import ExtractionOperator, decompose, insert_knot, tensor_extraction
from .fem_poisson import (
    GaussianPeak,
    LinearSystem,
    PoissonCase,
    PolynomialSolution,
    apply_bcs,
    assemble,
    gauss_rule,
    l2_error,
    newton_cotes_rule,
    solve,
    solve_case,
)
from .hierarchy import HierarchicalSpace, dyadic_refine, eval_thb, refine, subdivision_matrix, truncation
from .multilevel import ElementRecord, element_operator, global_extraction, local_extraction
from .splines_core import KnotVector, TensorSpace, bernstein, eval_basis, find_span, uniform_knots

__version__ = "0.1.0"

__all__ = [
    "apply_bcs",
    "assemble",
    "bernstein",
    "decompose",
    "dyadic_refine",
    "element_operator",
    "ElementRecord",
    "eval_basis",
    "eval_thb",
    "ExtractionOperator",
    "find_span",
    "gauss_rule",
    "GaussianPeak",
    "global_extraction",
    "HierarchicalSpace",
    "insert_knot",
    "KnotVector",
    "l2_error",
    "LinearSystem",
    "local_extraction",
    "newton_cotes_rule",
    "PoissonCase",
    "PolynomialSolution",
    "refine",
    "solve",
    "solve_case",
    "subdivision_matrix",
    "tensor_extraction",
    "TensorSpace",
    "truncation",
    "uniform_knots",
]
