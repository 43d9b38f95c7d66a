"""B-spline and Bernstein basis evaluation.

Knot vectors are open (clamped), normalized to the parametric interval
[0, 1], and carry their polynomial degree. Basis evaluation follows the
Cox-de Boor recursion in the triangular form of Piegl & Tiller, returning
only the ``p + 1`` functions that are nonzero on the containing knot span.

Spans are half-open, ``values[s] <= xi < values[s + 1]``, except at the right
end of the domain, which is attributed to the last non-empty span.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Sequence

import numpy as np

from .errors import DomainError

MIN_DEGREE = 1
MAX_DEGREE = 4
KNOT_TOL = 1e-12


@dataclass(frozen=True)
class KnotVector:
    """Open knot vector of a given degree on [0, 1].

    Knots closer than ``KNOT_TOL`` (relative to the domain length) are merged
    on construction, and an input domain other than [0, 1] is mapped affinely
    onto it.
    """

    values: tuple[float, ...]
    degree: int
    _arr: np.ndarray = field(init=False, repr=False, compare=False)
    _breaks: np.ndarray = field(init=False, repr=False, compare=False)
    _spans: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        p = int(self.degree)
        if not MIN_DEGREE <= p <= MAX_DEGREE:
            raise ValueError(f"unsupported degree {self.degree}; expected {MIN_DEGREE}..{MAX_DEGREE}")
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise ValueError("knot values must be a 1D sequence")
        if vals.size < 2 * (p + 1):
            raise ValueError(f"knot vector needs at least {2 * (p + 1)} values for degree {p}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("knot values must be finite")
        if np.any(np.diff(vals) < 0):
            raise ValueError("knot values must be non-decreasing")
        a, b = vals[0], vals[-1]
        if not b > a:
            raise ValueError("knot vector has an empty domain")
        tol = KNOT_TOL * max(1.0, b - a)
        # snap near-duplicates onto the first knot of their cluster
        snapped = vals.copy()
        for i in range(1, snapped.size):
            if snapped[i] - snapped[i - 1] <= tol:
                snapped[i] = snapped[i - 1]
        snapped = (snapped - a) / (b - a)
        snapped[snapped.size - 1] = 1.0
        snapped[np.abs(snapped - 1.0) <= KNOT_TOL] = 1.0
        breaks, counts = np.unique(snapped, return_counts=True)
        if counts[0] != p + 1 or counts[-1] != p + 1:
            raise ValueError("knot vector must be open: end knots need multiplicity p + 1")
        if np.any(counts[1:-1] > p):
            raise ValueError("interior knot multiplicity exceeds the degree")
        # span index of each element: last knot equal to the element's left breakpoint
        spans = np.searchsorted(snapped, breaks[:-1], side="right") - 1
        snapped.setflags(write=False)
        breaks.setflags(write=False)
        spans.setflags(write=False)
        object.__setattr__(self, "degree", p)
        object.__setattr__(self, "values", tuple(float(v) for v in snapped))
        object.__setattr__(self, "_arr", snapped)
        object.__setattr__(self, "_breaks", breaks)
        object.__setattr__(self, "_spans", spans)

    @property
    def array(self) -> np.ndarray:
        return self._arr

    @property
    def n_functions(self) -> int:
        return self._arr.size - self.degree - 1

    @property
    def breakpoints(self) -> np.ndarray:
        """Distinct knot values."""
        return self._breaks

    @property
    def n_elements(self) -> int:
        return self._breaks.size - 1

    @property
    def element_spans(self) -> np.ndarray:
        """Knot-span index ``s`` of every element, ``values[s] < values[s + 1]``."""
        return self._spans

    def element_of_span(self, span: int) -> int:
        return int(np.searchsorted(self._spans, span))

    def element_interval(self, e: int) -> tuple[float, float]:
        return float(self._breaks[e]), float(self._breaks[e + 1])

    def multiplicity(self, xi: float) -> int:
        return int(np.count_nonzero(np.abs(self._arr - xi) <= KNOT_TOL))

    def element_functions(self, e: int) -> np.ndarray:
        """Indices of the ``p + 1`` functions nonzero on element ``e``."""
        s = int(self._spans[e])
        return np.arange(s - self.degree, s + 1)

    def support_elements(self) -> tuple[np.ndarray, np.ndarray]:
        """First and last element index in the support of every function."""
        p = self.degree
        n = self.n_functions
        first = np.searchsorted(self._breaks, self._arr[:n], side="left")
        last = np.searchsorted(self._breaks, self._arr[p + 1 : p + 1 + n], side="left") - 1
        return first, last


def uniform_knots(n_elements: int, degree: int) -> KnotVector:
    """Open uniform knot vector with ``n_elements`` equal spans on [0, 1]."""
    if n_elements < 1:
        raise ValueError("need at least one element")
    inner = np.linspace(0.0, 1.0, n_elements + 1)[1:-1]
    vals = np.concatenate([np.zeros(degree + 1), inner, np.ones(degree + 1)])
    return KnotVector(tuple(vals), degree)


def find_span(kv: KnotVector, xi: float) -> int:
    """Knot-span index ``s`` with ``values[s] <= xi < values[s + 1]``.

    The right end of the domain belongs to the last non-empty span.
    """
    xi = float(xi)
    if not (0.0 - KNOT_TOL <= xi <= 1.0 + KNOT_TOL):
        raise DomainError(f"parameter {xi} outside the domain [0, 1]")
    n = kv.n_functions
    if xi >= kv.array[n]:
        return n - 1
    s = int(np.searchsorted(kv.array, xi, side="right")) - 1
    return max(s, kv.degree)


def basis_funs(kv: KnotVector, span: int, xi: float) -> np.ndarray:
    """Values of the ``p + 1`` polynomial pieces active on ``span`` at ``xi``.

    ``xi`` need not lie inside the span; the polynomial pieces are extended,
    which gives one-sided limits at the span ends.
    """
    p = kv.degree
    U = kv.array
    N = np.zeros(p + 1)
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    N[0] = 1.0
    for j in range(1, p + 1):
        left[j] = xi - U[span + 1 - j]
        right[j] = U[span + j] - xi
        saved = 0.0
        for r in range(j):
            temp = N[r] / (right[r + 1] + left[j - r])
            N[r] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        N[j] = saved
    return N


def eval_basis(kv: KnotVector, xi: float) -> tuple[int, np.ndarray]:
    """Containing span and the ``p + 1`` nonzero basis values at ``xi``."""
    s = find_span(kv, xi)
    return s, basis_funs(kv, s, xi)


def basis_funs_derivs(kv: KnotVector, span: int, xi: float, max_order: int) -> np.ndarray:
    """Basis values and derivatives on a given span, shape ``(max_order + 1, p + 1)``."""
    p = kv.degree
    U = kv.array
    ndu = np.zeros((p + 1, p + 1))
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = xi - U[span + 1 - j]
        right[j] = U[span + j] - xi
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((max_order + 1, p + 1))
    ders[0] = ndu[:, p]
    a = np.zeros((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, max_order + 1):
            d = 0.0
            rk = r - k
            pk = p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    fac = p
    for k in range(1, max_order + 1):
        ders[k] *= fac
        fac *= p - k
    return ders


def eval_basis_derivs(kv: KnotVector, xi: float, max_order: int) -> tuple[int, np.ndarray]:
    """Span and basis derivatives up to ``max_order`` (row ``k`` = k-th derivative)."""
    if max_order < 0 or max_order > kv.degree:
        raise ValueError(f"max_order must lie in 0..{kv.degree}, got {max_order}")
    s = find_span(kv, xi)
    return s, basis_funs_derivs(kv, s, xi, max_order)


def bernstein(p: int, t: float) -> np.ndarray:
    """Bernstein polynomials ``C(p, i) t^i (1 - t)^(p - i)`` on [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"Bernstein parameter {t} outside [0, 1]")
    # de Casteljau-style build-up keeps values non-negative and summing to 1
    B = np.zeros(p + 1)
    B[0] = 1.0
    u = 1.0 - t
    for j in range(1, p + 1):
        saved = 0.0
        for k in range(j):
            temp = B[k]
            B[k] = saved + u * temp
            saved = t * temp
        B[j] = saved
    return B


def bernstein_derivs(p: int, t: float, max_order: int) -> np.ndarray:
    """Bernstein values and derivatives on [0, 1], shape ``(max_order + 1, p + 1)``."""
    out = np.zeros((max_order + 1, p + 1))
    for k in range(min(max_order, p) + 1):
        low = bernstein(p - k, t)
        # k-th derivative: p!/(p-k)! * sum_j (-1)^(k-j) C(k, j) B_{i-j, p-k}
        scale = 1.0
        for m in range(k):
            scale *= p - m
        for i in range(p + 1):
            acc = 0.0
            for j in range(k + 1):
                if 0 <= i - j <= p - k:
                    acc += (-1) ** (k - j) * comb(k, j) * low[i - j]
            out[k, i] = scale * acc
    return out


def bernstein_matrix(p: int, ts: Sequence[float], max_order: int = 0) -> np.ndarray:
    """Bernstein derivatives at several points, shape ``(max_order + 1, p + 1, len(ts))``."""
    return np.stack([bernstein_derivs(p, float(t), max_order) for t in ts], axis=-1)


def greville(kv: KnotVector) -> np.ndarray:
    """Knot averages ``(values[i+1] + ... + values[i+p]) / p``."""
    p = kv.degree
    U = kv.array
    n = kv.n_functions
    return np.array([U[i + 1 : i + p + 1].mean() for i in range(n)])


def eval_curve(kv: KnotVector, net, xi: float) -> np.ndarray:
    """Point on the curve ``sum_i N_i(xi) P_i``."""
    P = np.asarray(net, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.shape[0] != kv.n_functions:
        raise ValueError(f"control net has {P.shape[0]} points, space has {kv.n_functions} functions")
    s, N = eval_basis(kv, xi)
    return N @ P[s - kv.degree : s + 1]


@dataclass(frozen=True)
class TensorSpace:
    """Tensor-product B-spline space, one knot vector per parametric direction.

    Functions and elements are flattened lexicographically with the first
    direction running fastest.
    """

    knots: tuple[KnotVector, ...]

    def __post_init__(self) -> None:
        kvs = tuple(self.knots)
        if not 1 <= len(kvs) <= 2:
            raise ValueError("only 1D and 2D spaces are supported")
        object.__setattr__(self, "knots", kvs)

    @property
    def dim(self) -> int:
        return len(self.knots)

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(kv.degree for kv in self.knots)

    @property
    def function_shape(self) -> tuple[int, ...]:
        return tuple(kv.n_functions for kv in self.knots)

    @property
    def element_shape(self) -> tuple[int, ...]:
        return tuple(kv.n_elements for kv in self.knots)

    @property
    def n_functions(self) -> int:
        return int(np.prod(self.function_shape))

    @property
    def n_elements(self) -> int:
        return int(np.prod(self.element_shape))

    def flat_function(self, multi) -> int:
        return int(np.ravel_multi_index(tuple(multi), self.function_shape, order="F"))

    def multi_function(self, flat: int) -> tuple[int, ...]:
        return tuple(int(v) for v in np.unravel_index(flat, self.function_shape, order="F"))

    def flat_element(self, multi) -> int:
        return int(np.ravel_multi_index(tuple(multi), self.element_shape, order="F"))

    def multi_element(self, flat: int) -> tuple[int, ...]:
        return tuple(int(v) for v in np.unravel_index(flat, self.element_shape, order="F"))

    def element_box(self, multi) -> tuple[tuple[float, float], ...]:
        return tuple(kv.element_interval(e) for kv, e in zip(self.knots, multi))

    def element_functions(self, multi) -> np.ndarray:
        """Flat indices of the functions nonzero on an element, first direction fastest."""
        ranges = [kv.element_functions(e) for kv, e in zip(self.knots, multi)]
        if self.dim == 1:
            return ranges[0]
        ii, jj = np.meshgrid(ranges[0], ranges[1], indexing="xy")
        return (ii + self.function_shape[0] * jj).ravel()


def eval_surface(space: TensorSpace, net, xi: float, eta: float) -> np.ndarray:
    """Point on the surface ``sum_ij N_i(xi) M_j(eta) P_ij``, net ordered xi-fastest."""
    if space.dim != 2:
        raise ValueError("eval_surface needs a 2D space")
    P = np.asarray(net, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    nx, ny = space.function_shape
    if P.shape[0] != nx * ny:
        raise ValueError(f"control net has {P.shape[0]} points, space has {nx * ny} functions")
    kx, ky = space.knots
    sx, Nx = eval_basis(kx, xi)
    sy, Ny = eval_basis(ky, eta)
    grid = P.reshape(ny, nx, -1)[sy - ky.degree : sy + 1, sx - kx.degree : sx + 1]
    return np.einsum("j,i,jik->k", Ny, Nx, grid)
