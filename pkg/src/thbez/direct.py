"""Reference discretization that integrates THB functions directly.

Every quantity here is computed from per-level Cox-de Boor evaluation and
truncation coefficients by Gauss quadrature, without Bézier or multi-level
extraction operators. It exists to cross-check the extraction-based solver.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import norm as sparse_norm

from .fem_poisson import (
    LinearSystem,
    PoissonCase,
    QuadratureRule,
    SolveResult,
    _sparse,
    assemble,
    boundary_terms,
    default_rules,
    edge_points,
    gauss_rule,
    solve,
)
from .hierarchy import HierarchicalSpace, thb_on_element


class _Cell(NamedTuple):
    level: int
    index: int
    multi_index: tuple[int, ...]
    box: tuple[tuple[float, float], ...]


def _cells(h: HierarchicalSpace):
    for level, flat in h.elements():
        space = h.levels[level]
        multi = space.multi_element(flat)
        yield _Cell(level, flat, multi, space.element_box(multi))


def _tensor_points(box, rule: QuadratureRule):
    (x0, x1), (y0, y1) = box
    ref, w = rule.tensor()
    pts = np.column_stack([x0 + ref[:, 0] * (x1 - x0), y0 + ref[:, 1] * (y1 - y0)])
    return pts, w * (x1 - x0) * (y1 - y0)


def assemble_direct(
    case: PoissonCase, rule: QuadratureRule | None = None, load_rule: QuadratureRule | None = None
) -> LinearSystem:
    """Stiffness and load by quadrature of the THB functions on every active element."""
    h = case.hierarchy
    d_rule, d_load = default_rules(h.degrees)
    rule = rule or d_rule
    load_rule = load_rule or d_load
    n = h.n_functions
    F = np.zeros(n)
    rows, cols, vals = [], [], []
    for cell in _cells(h):
        pts, w = _tensor_points(cell.box, rule)
        ids, _, grads = thb_on_element(h, cell.level, cell.index, pts, derivs=True)
        Ke = np.einsum("aqd,bqd,q->ab", grads, grads, w)
        rows.append(np.repeat(ids, ids.size))
        cols.append(np.tile(ids, ids.size))
        vals.append(Ke.ravel())
        pts, w = _tensor_points(cell.box, load_rule)
        ids, phi = thb_on_element(h, cell.level, cell.index, pts)
        F[ids] -= phi @ (case.solution.laplacian(pts[:, 0], pts[:, 1]) * w)
    return LinearSystem(_sparse(rows, cols, vals, n), F)


def direct_edge_evaluator(h: HierarchicalSpace):
    def evaluate(cell, edge: str, s: np.ndarray):
        x, y, _ = edge_points(cell.box, edge, s)
        ids, phi = thb_on_element(h, cell.level, cell.index, np.column_stack([x, y]))
        keep = np.any(phi != 0.0, axis=1)
        return ids[keep], phi[keep]

    return evaluate


def apply_bcs_direct(sys: LinearSystem, case: PoissonCase, rule: QuadratureRule | None = None) -> LinearSystem:
    rule = rule or gauss_rule(max(case.hierarchy.degrees) + 2)
    h = case.hierarchy
    dofs, values, neumann = boundary_terms(case, direct_edge_evaluator(h), rule, records=_cells(h))
    return LinearSystem(sys.K, sys.F + neumann, dofs, values)


def l2_error_direct(case: PoissonCase, coefficients: np.ndarray, rule: QuadratureRule | None = None) -> float:
    h = case.hierarchy
    rule = rule or gauss_rule(max(h.degrees) + 3)
    total = 0.0
    for cell in _cells(h):
        pts, w = _tensor_points(cell.box, rule)
        ids, phi = thb_on_element(h, cell.level, cell.index, pts)
        diff = coefficients[ids] @ phi - case.solution.value(pts[:, 0], pts[:, 1])
        total += np.dot(diff * diff, w)
    return float(np.sqrt(total))


def solve_case_direct(case: PoissonCase) -> SolveResult:
    sys = apply_bcs_direct(assemble_direct(case), case)
    u = solve(sys)
    return SolveResult(u, sys, l2_error_direct(case, u))


def relative_frobenius(A: sp.spmatrix, B: sp.spmatrix) -> float:
    """``||A - B||_F / ||B||_F``."""
    ref = sparse_norm(B)
    return float(sparse_norm(A - B) / ref) if ref else float(sparse_norm(A - B))


def equivalence_residual(case: PoissonCase, K_extraction: sp.spmatrix | None = None) -> float:
    """Relative Frobenius gap between extraction-assembled and directly integrated stiffness."""
    K = K_extraction if K_extraction is not None else assemble(case).K
    return relative_frobenius(K, assemble_direct(case).K)
