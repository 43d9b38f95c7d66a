"""Knot insertion and Bézier extraction operators.

The extraction operator of an element maps the Bernstein polynomials on the
reference interval [0, 1] to the B-spline functions supported on the element,
``N_local = E @ B``. Operators are produced by repeated single-knot
insertion; the same transfer matrices build the subdivision matrices of the
hierarchy module.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import RefinementError
from .splines_core import KNOT_TOL, KnotVector, find_span


@dataclass(frozen=True)
class KnotInsertionResult:
    """Refined knot vector and the coefficient transfer ``P_fine = T @ P_coarse``.

    The basis relation is the transpose, ``N_coarse = T.T @ N_fine``.
    """

    knots: KnotVector
    transfer: np.ndarray


@dataclass(frozen=True, eq=False)
class ExtractionOperator:
    """Element extraction operator.

    Attributes
    ----------
    element : tuple of int
        Element index per direction.
    matrix : ndarray
        ``E`` with one row per supported function and one column per
        Bernstein polynomial, both flattened first-direction-fastest.
    functions : ndarray
        Flat indices of the supported functions, ascending.
    function_shape : tuple of int
        Function count per direction, used for flattening.
    """

    element: tuple[int, ...]
    matrix: np.ndarray
    functions: np.ndarray
    function_shape: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "element": list(self.element),
            "functions": [int(f) for f in self.functions],
            "function_shape": list(self.function_shape),
            "matrix": self.matrix.tolist(),
        }


def insert_knot(kv: KnotVector, xi_hat: float) -> KnotInsertionResult:
    """Insert ``xi_hat`` once (Boehm's algorithm)."""
    p = kv.degree
    U = kv.array
    xi_hat = float(xi_hat)
    if not (KNOT_TOL < xi_hat < 1.0 - KNOT_TOL):
        raise RefinementError(f"cannot insert {xi_hat}: must lie strictly inside (0, 1)")
    existing = U[np.abs(U - xi_hat) <= KNOT_TOL]
    if existing.size:
        if existing.size >= p:
            raise RefinementError(f"inserting {xi_hat} would raise its multiplicity above {p}")
        xi_hat = float(existing[0])
    s = find_span(kv, xi_hat)
    n = kv.n_functions
    T = np.zeros((n + 1, n))
    for i in range(n + 1):
        if i <= s - p:
            T[i, i] = 1.0
        elif i <= s:
            alpha = (xi_hat - U[i]) / (U[i + p] - U[i])
            T[i, i] = alpha
            T[i, i - 1] = 1.0 - alpha
        else:
            T[i, i - 1] = 1.0
    new_vals = np.insert(U, s + 1, xi_hat)
    return KnotInsertionResult(KnotVector(tuple(new_vals), p), T)


def refine_knots(kv: KnotVector, new_knots) -> KnotInsertionResult:
    """Insert several knots one at a time and compose the transfer matrices."""
    T = np.eye(kv.n_functions)
    current = kv
    for x in sorted(float(v) for v in new_knots):
        res = insert_knot(current, x)
        T = res.transfer @ T
        current = res.knots
    return KnotInsertionResult(current, T)


def _decomposition_knots(kv: KnotVector) -> list[float]:
    p = kv.degree
    extra = []
    for x in kv.breakpoints[1:-1]:
        extra.extend([float(x)] * (p - kv.multiplicity(x)))
    return extra


@lru_cache(maxsize=256)
def _decompose_cached(kv: KnotVector) -> tuple[ExtractionOperator, ...]:
    p = kv.degree
    T = refine_knots(kv, _decomposition_knots(kv)).transfer
    ops = []
    for e in range(kv.n_elements):
        funcs = kv.element_functions(e)
        # Bézier functions on element e are p*e .. p*e + p
        E = T[p * e : p * e + p + 1][:, funcs].T.copy()
        E.setflags(write=False)
        funcs.setflags(write=False)
        ops.append(ExtractionOperator((e,), E, funcs, (kv.n_functions,)))
    return tuple(ops)


def decompose(kv: KnotVector) -> list[ExtractionOperator]:
    """Bézier extraction operator of every element of ``kv``.

    Every interior knot is raised to multiplicity ``p``; the composed
    transfer matrix restricted to an element gives its operator.
    """
    return list(_decompose_cached(kv))


def tensor_extraction(E_xi: ExtractionOperator, E_eta: ExtractionOperator) -> ExtractionOperator:
    """Two-direction operator ``E[(i,j),(k,l)] = E_xi[i,k] * E_eta[j,l]``, xi fastest."""
    nx = E_xi.function_shape[0]
    ny = E_eta.function_shape[0]
    matrix = np.kron(E_eta.matrix, E_xi.matrix)
    funcs = (E_xi.functions[None, :] + nx * E_eta.functions[:, None]).ravel()
    return ExtractionOperator(E_xi.element + E_eta.element, matrix, funcs, (nx, ny))
