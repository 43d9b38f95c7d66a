"""Poisson problem on the unit square through multi-level Bézier extraction.

The problem is ``Δu = f`` in ``[0,1]^2`` with ``u = g`` on the Dirichlet
edges and ``∇u·n = h`` on the Neumann edges. Element stiffness matrices are
never integrated in the hierarchical basis: a single reference Bernstein
stiffness is mapped through ``C^e`` of every element and scattered by global
function id. Loads, boundary projections and errors go through ``C^e`` as
well.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.integrate
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bezier import decompose
from .errors import NumericalError
from .hierarchy import HierarchicalSpace
from .multilevel import ElementRecord, element_records
from .splines_core import KnotVector, basis_funs, bernstein, bernstein_matrix, eval_basis

log = logging.getLogger(__name__)

EDGES = ("left", "right", "bottom", "top")


# quadrature -----------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the unit interval; weights sum to 1."""

    points: np.ndarray
    weights: np.ndarray
    kind: str

    @property
    def n(self) -> int:
        return self.points.size

    def tensor(self) -> tuple[np.ndarray, np.ndarray]:
        """Points ``(n*n, 2)`` (first coordinate fastest) and weights of the square rule."""
        t, s = np.meshgrid(self.points, self.points, indexing="xy")
        w = np.outer(self.weights, self.weights)
        return np.column_stack([t.ravel(), s.ravel()]), w.ravel()


def gauss_rule(n: int) -> QuadratureRule:
    """``n``-point Gauss-Legendre rule mapped to [0, 1]."""
    if not 1 <= n <= 10:
        raise ValueError(f"Gauss rule needs 1 <= n <= 10, got {n}")
    x, w = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(0.5 * (x + 1.0), 0.5 * w, "gauss")


def newton_cotes_rule(n: int) -> QuadratureRule:
    """Closed ``n``-point Newton-Cotes rule on [0, 1] (endpoints included)."""
    if not 2 <= n <= 7:
        raise ValueError(f"closed Newton-Cotes rule needs 2 <= n <= 7, got {n}")
    an, _ = scipy.integrate.newton_cotes(n - 1, 1)
    return QuadratureRule(np.linspace(0.0, 1.0, n), an / (n - 1), "newton-cotes-closed")


def parse_rule(spec: str) -> QuadratureRule:
    """Parse ``gauss:N`` or ``nc:N``."""
    kind, _, num = spec.partition(":")
    try:
        n = int(num)
    except ValueError:
        raise ValueError(f"bad quadrature spec {spec!r}; expected gauss:N or nc:N") from None
    if kind == "gauss":
        return gauss_rule(n)
    if kind == "nc":
        return newton_cotes_rule(n)
    raise ValueError(f"bad quadrature spec {spec!r}; expected gauss:N or nc:N")


# Newton-Cotes pathology -------------------------------------------------------


@dataclass(frozen=True)
class BoundaryComparison:
    """Basis values at the right end of ``left_element`` obtained three ways."""

    xi: float
    left_element: int
    left_functions: np.ndarray
    left_limit: np.ndarray
    naive_span: int
    naive_functions: np.ndarray
    naive_values: np.ndarray
    extracted: np.ndarray

    @property
    def naive_agrees(self) -> bool:
        return bool(
            np.array_equal(self.naive_functions, self.left_functions)
            and np.allclose(self.naive_values, self.left_limit, atol=1e-14)
        )

    @property
    def extraction_error(self) -> float:
        return float(np.max(np.abs(self.extracted - self.left_limit)))


@dataclass(frozen=True)
class NCPathologyReport:
    knots: KnotVector
    rule: QuadratureRule
    boundaries: list[BoundaryComparison]
    exact_integrals: np.ndarray
    extracted_integrals: np.ndarray
    naive_integrals: np.ndarray

    def format(self) -> str:
        p = self.knots.degree
        lines = [
            f"knots: {list(self.knots.values)}  degree: {p}  rule: {self.rule.kind} n={self.rule.n}",
            "",
            "interior boundaries (values at the right end of the left element)",
        ]
        fmt = lambda v: "[" + ", ".join(f"{x:.6g}" for x in v) + "]"  # noqa: E731
        for b in self.boundaries:
            lines.append(
                f"  xi={b.xi:.6g}  element {b.left_element} functions {list(map(int, b.left_functions))}"
            )
            lines.append(f"    left limit        {fmt(b.left_limit)}")
            lines.append(
                f"    naive Cox-de Boor {fmt(b.naive_values)} on functions {list(map(int, b.naive_functions))}"
                f"  -> {'agrees' if b.naive_agrees else 'MISATTRIBUTED'}"
            )
            lines.append(f"    Bezier extraction {fmt(b.extracted)}  max error {b.extraction_error:.2e}")
        if not self.boundaries:
            lines.append("  none")
        lines += ["", "element-wise integrals of each basis function", "  i  exact  extraction  naive"]
        for i, (a, b, c) in enumerate(zip(self.exact_integrals, self.extracted_integrals, self.naive_integrals)):
            lines.append(f"  {i}  {a:.12g}  {b:.12g}  {c:.12g}")
        return "\n".join(lines)


def demo_newton_cotes_pathology(kv: KnotVector, rule: QuadratureRule | None = None) -> NCPathologyReport:
    """Compare naive span lookup with Bézier-extracted evaluation at element ends.

    A naive element routine evaluates the basis at each quadrature point with
    span lookup and scatters the values to the element's own local
    functions; at a closed rule's right endpoint the lookup returns the next
    element's functions instead.
    """
    rule = rule or newton_cotes_rule(kv.degree + 1)
    p = kv.degree
    ops = decompose(kv)
    boundaries = []
    for e in range(kv.n_elements - 1):
        xb = float(kv.breakpoints[e + 1])
        left_span = int(kv.element_spans[e])
        naive_span, naive_vals = eval_basis(kv, xb)
        boundaries.append(
            BoundaryComparison(
                xi=xb,
                left_element=e,
                left_functions=kv.element_functions(e),
                left_limit=basis_funs(kv, left_span, xb),
                naive_span=naive_span,
                naive_functions=np.arange(naive_span - p, naive_span + 1),
                naive_values=naive_vals,
                extracted=ops[e].matrix @ bernstein(p, 1.0),
            )
        )

    U = kv.array
    n = kv.n_functions
    exact = np.array([(U[i + p + 1] - U[i]) / (p + 1) for i in range(n)])
    extracted = np.zeros(n)
    naive = np.zeros(n)
    Bq = bernstein_matrix(p, rule.points)[0]
    for e in range(kv.n_elements):
        a, b = kv.element_interval(e)
        funcs = kv.element_functions(e)
        extracted[funcs] += (ops[e].matrix @ Bq @ rule.weights) * (b - a)
        for t, w in zip(rule.points, rule.weights):
            _, vals = eval_basis(kv, a + t * (b - a))
            naive[funcs] += w * vals * (b - a)
    return NCPathologyReport(kv, rule, boundaries, exact, extracted, naive)


# problem data -----------------------------------------------------------------


class GaussianPeak:
    """``u = exp(-C((x - 0.5)^2 + (y - 0.5)^2))``."""

    def __init__(self, C: float = 100.0):
        self.C = float(C)

    def value(self, x, y):
        return np.exp(-self.C * ((x - 0.5) ** 2 + (y - 0.5) ** 2))

    def gradient(self, x, y):
        u = self.value(x, y)
        return np.stack([-2 * self.C * (x - 0.5) * u, -2 * self.C * (y - 0.5) * u], axis=-1)

    def laplacian(self, x, y):
        r2 = (x - 0.5) ** 2 + (y - 0.5) ** 2
        return (4 * self.C**2 * r2 - 4 * self.C) * self.value(x, y)

    def to_dict(self) -> dict:
        return {"kind": "gaussian", "C": self.C}


class PolynomialSolution:
    """``u = sum c * x^a * y^b`` over ``terms = [(a, b, c), ...]``."""

    def __init__(self, terms):
        self.terms = [(int(a), int(b), float(c)) for a, b, c in terms]

    def value(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        return sum(c * x**a * y**b for a, b, c in self.terms) + 0.0 * x

    def gradient(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        gx = sum(c * a * x ** max(a - 1, 0) * y**b for a, b, c in self.terms if a) + 0.0 * x
        gy = sum(c * b * x**a * y ** max(b - 1, 0) for a, b, c in self.terms if b) + 0.0 * x
        return np.stack([gx, gy], axis=-1)

    def laplacian(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        lx = sum(c * a * (a - 1) * x ** max(a - 2, 0) * y**b for a, b, c in self.terms if a > 1)
        ly = sum(c * b * (b - 1) * x**a * y ** max(b - 2, 0) for a, b, c in self.terms if b > 1)
        return lx + ly + 0.0 * x

    def to_dict(self) -> dict:
        return {"kind": "polynomial", "terms": [list(t) for t in self.terms]}


@dataclass
class PoissonCase:
    """Unit-square problem: hierarchy, exact solution and edge conditions."""

    hierarchy: HierarchicalSpace
    solution: GaussianPeak | PolynomialSolution = field(default_factory=GaussianPeak)
    boundary: Mapping[str, str] = field(default_factory=lambda: {e: "dirichlet" for e in EDGES})

    def __post_init__(self) -> None:
        if self.hierarchy.dim != 2:
            raise ValueError("the Poisson solver needs a 2D hierarchy")
        bnd = dict(self.boundary)
        if set(bnd) != set(EDGES) or not set(bnd.values()) <= {"dirichlet", "neumann"}:
            raise ValueError(f"boundary must label each of {EDGES} as dirichlet or neumann")
        if "dirichlet" not in bnd.values():
            raise ValueError("at least one edge must be Dirichlet")
        self.boundary = bnd


@dataclass
class LinearSystem:
    """Stiffness ``K`` over active functions, load ``F`` and Dirichlet constraints."""

    K: sp.csr_matrix
    F: np.ndarray
    fixed_dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    fixed_values: np.ndarray = field(default_factory=lambda: np.zeros(0))


# reference element ----------------------------------------------------------


def _bernstein_1d_matrices(p: int, rule: QuadratureRule) -> tuple[np.ndarray, np.ndarray]:
    D = bernstein_matrix(p, rule.points, 1)
    K = np.einsum("aq,bq,q->ab", D[1], D[1], rule.weights)
    M = np.einsum("aq,bq,q->ab", D[0], D[0], rule.weights)
    return K, M


def bezier_element_matrices(
    p: int, q: int, rule: QuadratureRule, geometry: tuple[float, float] = (1.0, 1.0)
) -> tuple[np.ndarray, np.ndarray]:
    """Reference Bernstein stiffness and load template of an axis-aligned element.

    ``geometry`` is the element size ``(hx, hy)``. Returns ``K[a, b] =
    ∫ ∇B_a·∇B_b`` and ``T[a, k] = B_a(x_k) w_k hx hy`` so that the Bernstein
    load of a source sampled at the rule's tensor points is ``T @ f``.
    """
    hx, hy = geometry
    Kp, Mp = _bernstein_1d_matrices(p, rule)
    Kq, Mq = _bernstein_1d_matrices(q, rule)
    K = (hy / hx) * np.kron(Mq, Kp) + (hx / hy) * np.kron(Kq, Mp)
    K = 0.5 * (K + K.T)
    Bx = bernstein_matrix(p, rule.points)[0]
    By = bernstein_matrix(q, rule.points)[0]
    _, w = rule.tensor()
    T = np.kron(By, Bx) * w[None, :] * (hx * hy)
    return K, T


def element_stiffness(rec: ElementRecord | np.ndarray, K_bezier: np.ndarray) -> np.ndarray:
    """Hierarchical element stiffness ``C K_bezier C^T``."""
    C = rec.C if isinstance(rec, ElementRecord) else np.asarray(rec)
    if C.shape[1] != K_bezier.shape[0]:
        raise ValueError(f"operator has {C.shape[1]} columns, reference stiffness is {K_bezier.shape[0]}")
    return C @ K_bezier @ C.T


class _Reference:
    """Reference Bernstein data for one degree pair and rule."""

    def __init__(self, degrees: tuple[int, int], rule: QuadratureRule):
        p, q = degrees
        self.rule = rule
        Kp, Mp = _bernstein_1d_matrices(p, rule)
        Kq, Mq = _bernstein_1d_matrices(q, rule)
        self.Kxx = np.kron(Mq, Kp)
        self.Kyy = np.kron(Kq, Mp)
        D = [bernstein_matrix(p, rule.points, 1), bernstein_matrix(q, rule.points, 1)]
        self.B = np.kron(D[1][0], D[0][0])
        self.dBx = np.kron(D[1][0], D[0][1])
        self.dBy = np.kron(D[1][1], D[0][0])
        self.points, self.weights = rule.tensor()

    def stiffness(self, hx: float, hy: float) -> np.ndarray:
        return (hy / hx) * self.Kxx + (hx / hy) * self.Kyy


def default_rules(degrees) -> tuple[QuadratureRule, QuadratureRule]:
    """Stiffness rule with ``p + 1`` and load rule with ``p + 2`` Gauss points."""
    p = max(degrees)
    return gauss_rule(p + 1), gauss_rule(p + 2)


def _physical(box, ref_points: np.ndarray):
    (x0, x1), (y0, y1) = box
    return x0 + ref_points[:, 0] * (x1 - x0), y0 + ref_points[:, 1] * (y1 - y0)


def _sparse(rows, cols, vals, n) -> sp.csr_matrix:
    if rows:
        r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    else:
        r = c = np.zeros(0, dtype=np.int64)
        v = np.zeros(0)
    return sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()


def assemble(
    case: PoissonCase, rule: QuadratureRule | None = None, load_rule: QuadratureRule | None = None
) -> LinearSystem:
    """Global stiffness and load, scattered from ``C^e K_bezier C^e^T`` and ``C^e F_bezier``.

    Elements are visited in ascending (level, index) order.
    """
    h = case.hierarchy
    d_rule, d_load = default_rules(h.degrees)
    stiff = _Reference(h.degrees, rule or d_rule)
    load = _Reference(h.degrees, load_rule or rule or d_load)
    n = h.n_functions
    F = np.zeros(n)
    rows, cols, vals = [], [], []
    for rec in element_records(h):
        (x0, x1), (y0, y1) = rec.box
        hx, hy = x1 - x0, y1 - y0
        Ke = element_stiffness(rec, stiff.stiffness(hx, hy))
        ids = rec.function_ids
        rows.append(np.repeat(ids, ids.size))
        cols.append(np.tile(ids, ids.size))
        vals.append(Ke.ravel())
        x, y = _physical(rec.box, load.points)
        fb = load.B @ (case.solution.laplacian(x, y) * load.weights) * (hx * hy)
        # Δu = f, so the weak right-hand side is -∫ f v
        F[ids] -= rec.C @ fb
    K = _sparse(rows, cols, vals, n)
    return LinearSystem(K, F)


# boundary -------------------------------------------------------------------

EdgeEvaluator = Callable[[ElementRecord, str, np.ndarray], tuple[np.ndarray, np.ndarray]]


def _edge_touches(h: HierarchicalSpace, rec: ElementRecord, edge: str) -> bool:
    nx, ny = h.levels[rec.level].element_shape
    i, j = rec.multi_index
    return {"left": i == 0, "right": i == nx - 1, "bottom": j == 0, "top": j == ny - 1}[edge]


def edge_points(box, edge: str, s: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Physical points along an element edge at local coordinates ``s``, and the edge length."""
    (x0, x1), (y0, y1) = box
    if edge in ("left", "right"):
        x = np.full_like(s, x0 if edge == "left" else x1)
        return x, y0 + s * (y1 - y0), y1 - y0
    y = np.full_like(s, y0 if edge == "bottom" else y1)
    return x0 + s * (x1 - x0), y, x1 - x0


def _edge_normal(edge: str) -> np.ndarray:
    return {"left": (-1.0, 0.0), "right": (1.0, 0.0), "bottom": (0.0, -1.0), "top": (0.0, 1.0)}[edge]


def extraction_edge_evaluator(h: HierarchicalSpace) -> EdgeEvaluator:
    """Edge traces through ``C^e`` restricted to the Bernstein functions of the edge."""
    p, q = h.degrees

    def evaluate(rec: ElementRecord, edge: str, s: np.ndarray):
        if edge in ("left", "right"):
            i = 0 if edge == "left" else p
            cols = i + (p + 1) * np.arange(q + 1)
            B = bernstein_matrix(q, s)[0]
        else:
            j = 0 if edge == "bottom" else q
            cols = np.arange(p + 1) + (p + 1) * j
            B = bernstein_matrix(p, s)[0]
        Ce = rec.C[:, cols]
        keep = np.any(Ce != 0.0, axis=1)
        return rec.function_ids[keep], Ce[keep] @ B

    return evaluate


def boundary_terms(
    case: PoissonCase, evaluate: EdgeEvaluator, rule: QuadratureRule, records=None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dirichlet L2 projection and Neumann load.

    Returns ``(dofs, values, neumann_load)`` where ``dofs`` are the functions
    with nonzero trace on a Dirichlet edge.
    """
    h = case.hierarchy
    n = h.n_functions
    s, w = rule.points, rule.weights
    rows, cols, vals = [], [], []
    rhs = np.zeros(n)
    touched = np.zeros(n, dtype=bool)
    neumann = np.zeros(n)
    for rec in records if records is not None else element_records(h, boundary_only=True):
        for edge in EDGES:
            if not _edge_touches(h, rec, edge):
                continue
            ids, phi = evaluate(rec, edge, s)
            x, y, length = edge_points(rec.box, edge, s)
            if case.boundary[edge] == "dirichlet":
                Mb = (phi * (w * length)) @ phi.T
                rows.append(np.repeat(ids, ids.size))
                cols.append(np.tile(ids, ids.size))
                vals.append(Mb.ravel())
                rhs[ids] += phi @ (case.solution.value(x, y) * w * length)
                touched[ids] = True
            else:
                g = case.solution.gradient(x, y) @ _edge_normal(edge)
                neumann[ids] += phi @ (g * w * length)
    dofs = np.flatnonzero(touched)
    if dofs.size == 0:
        return dofs, np.zeros(0), neumann
    Mb = _sparse(rows, cols, vals, n)[dofs][:, dofs].tocsc()
    try:
        lu = _spd_lu(Mb)
    except RuntimeError as exc:
        raise NumericalError(f"boundary mass matrix is singular: {exc}") from exc
    values = lu.solve(rhs[dofs])
    if not np.all(np.isfinite(values)):
        raise NumericalError("boundary projection produced non-finite values")
    return dofs, values, neumann


def _spd_lu(A: sp.spmatrix):
    # symmetric ordering and diagonal pivots suit the SPD systems factorized here
    return spla.splu(
        A.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True}
    )


def apply_bcs(sys: LinearSystem, case: PoissonCase, rule: QuadratureRule | None = None) -> LinearSystem:
    """Attach the Dirichlet projection and add Neumann loads."""
    rule = rule or gauss_rule(max(case.hierarchy.degrees) + 2)
    dofs, values, neumann = boundary_terms(case, extraction_edge_evaluator(case.hierarchy), rule)
    return LinearSystem(sys.K, sys.F + neumann, dofs, values)


def solve(sys: LinearSystem, rtol: float = 1e-10) -> np.ndarray:
    """Eliminate the Dirichlet DOFs, factorize and return all coefficients."""
    n = sys.F.size
    u = np.zeros(n)
    u[sys.fixed_dofs] = sys.fixed_values
    free = np.ones(n, dtype=bool)
    free[sys.fixed_dofs] = False
    free_idx = np.flatnonzero(free)
    if free_idx.size == 0:
        return u
    K = sys.K.tocsr()
    Kff = K[free_idx][:, free_idx].tocsc()
    rhs = sys.F[free_idx] - K[free_idx] @ u
    try:
        lu = _spd_lu(Kff)
    except RuntimeError as exc:
        raise NumericalError(f"stiffness factorization failed: {exc}") from exc
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise NumericalError("solution contains non-finite values")
    res = np.linalg.norm(Kff @ x - rhs)
    scale = max(np.linalg.norm(rhs), np.finfo(float).tiny)
    if res / scale > rtol and np.linalg.norm(rhs) > 0:
        raise NumericalError(f"relative residual {res / scale:.2e} exceeds {rtol:.0e}")
    u[free_idx] = x
    return u


# errors and indicators --------------------------------------------------------


def l2_error(case: PoissonCase, coefficients: np.ndarray, rule: QuadratureRule | None = None) -> float:
    """``||u_h - u_ex||_L2`` with ``u_h`` evaluated through ``C^e B``."""
    h = case.hierarchy
    ref = _Reference(h.degrees, rule or gauss_rule(max(h.degrees) + 3))
    total = 0.0
    for rec in element_records(h):
        (x0, x1), (y0, y1) = rec.box
        x, y = _physical(rec.box, ref.points)
        uh = coefficients[rec.function_ids] @ rec.C @ ref.B
        diff = uh - case.solution.value(x, y)
        total += np.dot(diff * diff, ref.weights) * (x1 - x0) * (y1 - y0)
    return float(np.sqrt(total))


def gradient_indicator(case: PoissonCase, coefficients: np.ndarray, rule: QuadratureRule | None = None):
    """Element-wise ``||∇u_h||_L2(e)`` for every active element, ascending order."""
    h = case.hierarchy
    ref = _Reference(h.degrees, rule or gauss_rule(max(h.degrees) + 1))
    out = []
    for rec in element_records(h):
        (x0, x1), (y0, y1) = rec.box
        hx, hy = x1 - x0, y1 - y0
        c = coefficients[rec.function_ids] @ rec.C
        gx = (c @ ref.dBx) / hx
        gy = (c @ ref.dBy) / hy
        out.append(((rec.level, rec.index), float(np.sqrt(np.dot(gx * gx + gy * gy, ref.weights) * hx * hy))))
    return out


@dataclass(frozen=True)
class SolveResult:
    coefficients: np.ndarray
    system: LinearSystem
    l2_error: float


def solve_case(
    case: PoissonCase, rule: QuadratureRule | None = None, load_rule: QuadratureRule | None = None
) -> SolveResult:
    """Assemble, constrain, solve and measure the error."""
    sys = apply_bcs(assemble(case, rule, load_rule), case)
    u = solve(sys)
    err = l2_error(case, u)
    log.info("dofs=%d elements=%d l2=%.6e", case.hierarchy.n_functions, case.hierarchy.n_elements, err)
    return SolveResult(u, sys, err)
