"""Hierarchical spline spaces with truncation (THB-splines).

A hierarchy is a sequence of dyadically nested tensor spaces together with
nested subdomains ``Omega_0 = [0,1]^d ⊇ Omega_1 ⊇ ...``, each stored as a
boolean mask over the elements of its level. Everything else is derived:

* an element of level ``l`` is *active* if it lies in ``Omega_l`` but has not
  been refined into ``Omega_{l+1}``;
* a function of level ``l`` is *active* if its support lies in ``Omega_l``
  and contains at least one active element of level ``l``; all other
  functions of the level are *deactivated*;
* the truncated version of an active function is obtained by expanding it
  into the next level with the subdivision matrix and dropping the
  coefficients of active functions there, repeated level by level.

Active functions are numbered globally by (level, flat tensor index).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .bezier import refine_knots
from .errors import DomainError, NestingError, RefinementError
from .splines_core import (
    KNOT_TOL,
    KnotVector,
    TensorSpace,
    basis_funs_derivs,
    find_span,
    uniform_knots,
)


def dyadic_refine(space: TensorSpace) -> TensorSpace:
    """Bisect every non-empty span in every direction."""
    new = []
    for kv in space.knots:
        b = kv.breakpoints
        mids = 0.5 * (b[:-1] + b[1:])
        new.append(KnotVector(tuple(np.sort(np.concatenate([kv.array, mids]))), kv.degree))
    return TensorSpace(tuple(new))


def _inserted_knots(coarse: KnotVector, fine: KnotVector) -> list[float]:
    if coarse.degree != fine.degree:
        raise NestingError("levels must share the polynomial degree")
    values = np.unique(np.concatenate([coarse.breakpoints, fine.breakpoints]))
    extra = []
    for x in values:
        mc = coarse.multiplicity(x)
        mf = fine.multiplicity(x)
        if mf < mc:
            raise NestingError(f"knot {x} has multiplicity {mc} in the coarse space but {mf} in the fine one")
        extra.extend([float(x)] * (mf - mc))
    return extra


def subdivision_matrix_1d(coarse: KnotVector, fine: KnotVector) -> np.ndarray:
    """Dense two-scale matrix ``S`` with ``N_coarse_i = sum_j S[j, i] N_fine_j``."""
    res = refine_knots(coarse, _inserted_knots(coarse, fine))
    if np.max(np.abs(res.knots.array - fine.array)) > KNOT_TOL:
        raise NestingError("refined coarse knots do not reproduce the fine knot vector")
    S = res.transfer
    S[np.abs(S) < 1e-15] = 0.0
    return S


def subdivision_matrix(coarse: TensorSpace, fine: TensorSpace) -> sp.csr_matrix:
    """Sparse two-scale matrix between nested tensor spaces (rows: fine functions)."""
    if coarse.dim != fine.dim:
        raise NestingError("spaces differ in dimension")
    factors = [sp.csr_matrix(subdivision_matrix_1d(c, f)) for c, f in zip(coarse.knots, fine.knots)]
    S = factors[0]
    for F in factors[1:]:
        # later directions vary slower in the flat ordering
        S = sp.kron(F, S, format="csr")
    return S.tocsr()


def _window_all(mask: np.ndarray, lo: Sequence[np.ndarray], hi: Sequence[np.ndarray]) -> np.ndarray:
    """For every index box ``lo[k]..hi[k]`` (inclusive), whether ``mask`` is true throughout."""
    d = mask.ndim
    sat = mask.astype(np.int64)
    for ax in range(d):
        sat = np.cumsum(sat, axis=ax)
    sat = np.pad(sat, [(1, 0)] * d)
    total = np.zeros(tuple(len(l) for l in lo), dtype=np.int64)
    grids_lo = np.meshgrid(*lo, indexing="ij")
    grids_hi = np.meshgrid(*[h + 1 for h in hi], indexing="ij")
    for corner in itertools.product((0, 1), repeat=d):
        idx = tuple(grids_hi[k] if c else grids_lo[k] for k, c in enumerate(corner))
        sign = (-1) ** (d - sum(corner))
        total += sign * sat[idx]
    size = np.ones_like(total)
    for k in range(d):
        size = size * (grids_hi[k] - grids_lo[k])
    return total == size


@dataclass(frozen=True)
class TruncatedFunction:
    """Truncated representation of an active function in a finer level.

    ``indices``/``coefficients`` give the expansion over level
    ``target_level`` flat function indices after dropping active functions
    at every intermediate level. ``truncated`` tells whether any nonzero
    coefficient was dropped on the way.
    """

    level: int
    index: int
    target_level: int
    indices: np.ndarray
    coefficients: np.ndarray
    truncated: bool

    def as_dict(self) -> dict[int, float]:
        return {int(i): float(c) for i, c in zip(self.indices, self.coefficients)}


@dataclass(frozen=True, eq=False)
class HierarchicalSpace:
    """Nested tensor spaces plus nested refinement domains.

    ``domains[l]`` is a boolean array of shape ``levels[l].element_shape``
    marking the elements of level ``l`` inside ``Omega_l``.
    """

    levels: tuple[TensorSpace, ...]
    domains: tuple[np.ndarray, ...]
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.levels) != len(self.domains) or not self.levels:
            raise ValueError("need one domain mask per level")
        for sp_, dom in zip(self.levels, self.domains):
            if dom.shape != sp_.element_shape:
                raise ValueError("domain mask shape does not match the level's elements")
            dom.setflags(write=False)
        if not self.domains[0].all():
            raise ValueError("level 0 must cover the whole domain")

    # construction ---------------------------------------------------------

    @classmethod
    def from_space(cls, space: TensorSpace) -> "HierarchicalSpace":
        return cls((space,), (np.ones(space.element_shape, dtype=bool),))

    @classmethod
    def uniform(cls, n_elements: int | Sequence[int], degree: int | Sequence[int], dim: int = 2) -> "HierarchicalSpace":
        if np.isscalar(n_elements):
            n_elements = [int(n_elements)] * dim
        if np.isscalar(degree):
            degree = [int(degree)] * len(n_elements)
        space = TensorSpace(tuple(uniform_knots(n, p) for n, p in zip(n_elements, degree)))
        return cls.from_space(space)

    # basic shape ----------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.levels[0].dim

    @property
    def degrees(self) -> tuple[int, ...]:
        return self.levels[0].degrees

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def _cached(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    # elements -------------------------------------------------------------

    def refined_element_mask(self, level: int) -> np.ndarray:
        def build():
            if level + 1 >= self.n_levels:
                return np.zeros(self.levels[level].element_shape, dtype=bool)
            child = self.domains[level + 1]
            return child[tuple(slice(None, None, 2) for _ in range(self.dim))].copy()

        return self._cached(("refined_el", level), build)

    def active_element_mask(self, level: int) -> np.ndarray:
        return self._cached(("active_el", level), lambda: self.domains[level] & ~self.refined_element_mask(level))

    def active_elements(self, level: int) -> np.ndarray:
        """Flat indices of the active elements of ``level``, ascending."""
        return self._cached(
            ("active_el_idx", level), lambda: np.flatnonzero(self.active_element_mask(level).ravel(order="F"))
        )

    def elements(self) -> list[tuple[int, int]]:
        """All active elements as ``(level, flat index)``, ascending."""
        return [(l, int(e)) for l in range(self.n_levels) for e in self.active_elements(l)]

    @property
    def n_elements(self) -> int:
        return sum(len(self.active_elements(l)) for l in range(self.n_levels))

    def is_active_element(self, level: int, flat: int) -> bool:
        if not 0 <= level < self.n_levels:
            return False
        space = self.levels[level]
        if not 0 <= flat < space.n_elements:
            return False
        return bool(self.active_element_mask(level)[space.multi_element(flat)])

    def element_box(self, level: int, flat: int) -> tuple[tuple[float, float], ...]:
        space = self.levels[level]
        return space.element_box(space.multi_element(flat))

    def locate(self, point) -> tuple[int, int]:
        """Active element ``(level, flat)`` containing a parametric point."""
        pt = np.atleast_1d(np.asarray(point, dtype=float))
        if pt.size != self.dim:
            raise DomainError(f"expected a {self.dim}-dimensional point")
        for level in range(self.n_levels - 1, -1, -1):
            space = self.levels[level]
            multi = tuple(kv.element_of_span(find_span(kv, x)) for kv, x in zip(space.knots, pt))
            if self.active_element_mask(level)[multi]:
                return level, space.flat_element(multi)
        raise AssertionError("point not covered by any active element")

    # functions ------------------------------------------------------------

    def _support_all(self, level: int, mask: np.ndarray) -> np.ndarray:
        space = self.levels[level]
        supports = [kv.support_elements() for kv in space.knots]
        return _window_all(mask, [s[0] for s in supports], [s[1] for s in supports])

    def inside_function_mask(self, level: int) -> np.ndarray:
        """Functions of ``level`` whose support lies in ``Omega_level``."""
        return self._cached(("inside_fn", level), lambda: self._support_all(level, self.domains[level]))

    def active_function_mask(self, level: int) -> np.ndarray:
        def build():
            inside = self.inside_function_mask(level)
            if level + 1 >= self.n_levels:
                return inside
            return inside & ~self._support_all(level, self.refined_element_mask(level))

        return self._cached(("active_fn", level), build)

    def active_functions(self, level: int) -> np.ndarray:
        """Flat indices of the active functions of ``level`` (the set eta_A), ascending."""
        return self._cached(
            ("active_fn_idx", level), lambda: np.flatnonzero(self.active_function_mask(level).ravel(order="F"))
        )

    def deactivated_functions(self, level: int) -> np.ndarray:
        """Flat indices of the remaining functions of ``level`` (the set eta_D), ascending."""
        return np.flatnonzero(~self.active_function_mask(level).ravel(order="F"))

    def function_offsets(self) -> np.ndarray:
        def build():
            counts = [len(self.active_functions(l)) for l in range(self.n_levels)]
            return np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

        return self._cached("offsets", build)

    @property
    def n_functions(self) -> int:
        return int(self.function_offsets()[-1])

    def global_ids(self, level: int) -> np.ndarray:
        """Map from flat level-``level`` index to global id, -1 for inactive functions."""

        def build():
            n = self.levels[level].n_functions
            ids = -np.ones(n, dtype=np.int64)
            act = self.active_functions(level)
            ids[act] = self.function_offsets()[level] + np.arange(act.size)
            ids.setflags(write=False)
            return ids

        return self._cached(("gid", level), build)

    def function_of_id(self, gid: int) -> tuple[int, int]:
        off = self.function_offsets()
        if not 0 <= gid < off[-1]:
            raise IndexError(f"no active function with id {gid}")
        level = int(np.searchsorted(off, gid, side="right") - 1)
        return level, int(self.active_functions(level)[gid - off[level]])

    def subdivision(self, level: int) -> sp.csc_matrix:
        """Two-scale matrix from ``level`` to ``level + 1`` in CSC form."""
        return self._cached(
            ("S", level), lambda: subdivision_matrix(self.levels[level], self.levels[level + 1]).tocsc()
        )

    def finest_active_level(self) -> int:
        return max(l for l in range(self.n_levels) if self.active_elements(l).size)


def refine(h: HierarchicalSpace, marked: Iterable) -> HierarchicalSpace:
    """Refine the marked active elements, appending a level when needed.

    ``marked`` holds ``(level, flat_index)`` or ``(level, (i, j))`` pairs.
    """
    items = []
    for entry in marked:
        level, idx = entry
        level = int(level)
        if not 0 <= level < h.n_levels:
            raise RefinementError(f"element {entry} does not exist")
        space = h.levels[level]
        if np.isscalar(idx):
            flat = int(idx)
        else:
            multi = tuple(int(v) for v in idx)
            if any(not 0 <= m < n for m, n in zip(multi, space.element_shape)):
                raise RefinementError(f"element {entry} does not exist")
            flat = space.flat_element(multi)
        if not h.is_active_element(level, flat):
            raise RefinementError(f"element {entry} is not active")
        items.append((level, flat))
    if not items:
        return h

    levels = list(h.levels)
    domains = [d.copy() for d in h.domains]
    for level, flat in items:
        if level + 1 == len(levels):
            levels.append(dyadic_refine(levels[level]))
            domains.append(np.zeros(levels[-1].element_shape, dtype=bool))
        multi = levels[level].multi_element(flat)
        children = tuple(slice(2 * m, 2 * m + 2) for m in multi)
        domains[level + 1][children] = True
    return HierarchicalSpace(tuple(levels), tuple(domains))


def refine_all(h: HierarchicalSpace) -> HierarchicalSpace:
    """Refine every active element once."""
    return refine(h, h.elements())


def truncation(h: HierarchicalSpace, level: int, i: int, to_level: int | None = None) -> TruncatedFunction:
    """Truncated expansion of active function ``i`` of ``level`` into ``to_level``.

    Defaults to the next level. Each step multiplies by the subdivision matrix
    and drops the coefficients over the active functions of the new level.
    """
    if not 0 <= level < h.n_levels or not h.active_function_mask(level).ravel(order="F")[i]:
        raise ValueError(f"function {i} of level {level} is not active")
    if to_level is None:
        if level + 1 >= h.n_levels:
            raise ValueError("the finest level has no truncation")
        to_level = level + 1
    if not level <= to_level < h.n_levels:
        raise ValueError(f"target level {to_level} out of range")
    key = ("trunc", level, int(i), to_level)
    if key in h._cache:
        return h._cache[key]
    if to_level == level:
        result = TruncatedFunction(level, int(i), level, np.array([int(i)]), np.array([1.0]), False)
    else:
        prev = truncation(h, level, i, to_level - 1)
        S = h.subdivision(to_level - 1)
        rows, vals = [], []
        for c, w in zip(prev.indices, prev.coefficients):
            lo, hi = S.indptr[c], S.indptr[c + 1]
            rows.append(S.indices[lo:hi])
            vals.append(w * S.data[lo:hi])
        rows = np.concatenate(rows)
        vals = np.concatenate(vals)
        idx, inv = np.unique(rows, return_inverse=True)
        coef = np.bincount(inv, weights=vals)
        keep = coef != 0.0
        idx, coef = idx[keep], coef[keep]
        drop = h.active_function_mask(to_level).ravel(order="F")[idx]
        result = TruncatedFunction(
            level, int(i), to_level, idx[~drop], coef[~drop], prev.truncated or bool(drop.any())
        )
    h._cache[key] = result
    return result


def is_truncated(h: HierarchicalSpace, level: int, i: int) -> bool:
    """Whether truncation removes any part of active function ``i`` of ``level``."""
    return truncation(h, level, i, h.n_levels - 1).truncated


def thb_on_element(h: HierarchicalSpace, level: int, flat: int, points, derivs: bool = False):
    """THB functions nonzero on an active element, evaluated at parametric points.

    Uses Cox-de Boor on the element's own span, so points on the element
    boundary get the element's one-sided values.

    Returns
    -------
    ids : ndarray
        Global ids of the functions, ascending.
    values : ndarray, shape (n_functions, n_points)
    grads : ndarray, shape (n_functions, n_points, dim), only if ``derivs``
    """
    if not h.is_active_element(level, flat):
        raise ValueError(f"element ({level}, {flat}) is not active")
    pts = np.asarray(points, dtype=float).reshape(-1, h.dim)
    space = h.levels[level]
    multi = space.multi_element(flat)
    nd = 1 if derivs else 0
    per_dir = []
    for k, (kv, e) in enumerate(zip(space.knots, multi)):
        span = int(kv.element_spans[e])
        per_dir.append(np.stack([basis_funs_derivs(kv, span, x, nd) for x in pts[:, k]], axis=-1))
    # local tensor basis on the element, first direction fastest
    if h.dim == 1:
        local_vals = per_dir[0][0]
        local_grads = per_dir[0][1][:, :, None] if derivs else None
    else:
        X, Y = per_dir
        local_vals = np.einsum("jq,iq->jiq", Y[0], X[0]).reshape(-1, pts.shape[0])
        if derivs:
            gx = np.einsum("jq,iq->jiq", Y[0], X[1]).reshape(-1, pts.shape[0])
            gy = np.einsum("jq,iq->jiq", Y[1], X[0]).reshape(-1, pts.shape[0])
            local_grads = np.stack([gx, gy], axis=-1)
    local_funcs = space.element_functions(multi)
    position = {int(f): a for a, f in enumerate(local_funcs)}

    ids, coef_rows = [], []
    for k in range(level + 1):
        shift = level - k
        anc = tuple(m >> shift for m in multi)
        act = h.active_function_mask(k).ravel(order="F")
        gid = h.global_ids(k)
        for f in h.levels[k].element_functions(anc):
            if not act[f]:
                continue
            tr = truncation(h, k, int(f), level)
            row = np.zeros(local_funcs.size)
            for j, c in zip(tr.indices, tr.coefficients):
                a = position.get(int(j))
                if a is not None:
                    row[a] = c
            if np.any(row != 0.0):
                ids.append(int(gid[f]))
                coef_rows.append(row)
    R = np.array(coef_rows).reshape(len(ids), local_funcs.size)
    values = R @ local_vals
    if derivs:
        grads = np.einsum("na,aqd->nqd", R, local_grads)
        return np.array(ids, dtype=np.int64), values, grads
    return np.array(ids, dtype=np.int64), values


def eval_thb(h: HierarchicalSpace, point, derivs: bool = False):
    """Active THB functions nonzero at a point: ``(ids, values[, gradients])``.

    Evaluation uses per-level Cox-de Boor and truncation coefficients only.
    """
    pt = np.atleast_1d(np.asarray(point, dtype=float))
    if pt.size != h.dim or np.any(pt < -KNOT_TOL) or np.any(pt > 1.0 + KNOT_TOL):
        raise DomainError(f"point {point} outside the parametric domain")
    level, flat = h.locate(pt)
    out = thb_on_element(h, level, flat, pt[None, :], derivs)
    if derivs:
        return out[0], out[1][:, 0], out[2][:, 0, :]
    return out[0], out[1][:, 0]


# serialization --------------------------------------------------------------


def hierarchy_to_dict(h: HierarchicalSpace) -> dict:
    """Per-level knot vectors, active/deactivated functions and active elements."""
    levels = []
    for l, space in enumerate(h.levels):
        levels.append(
            {
                "knots": [list(kv.values) for kv in space.knots],
                "active_functions": [int(v) for v in h.active_functions(l)],
                "deactivated_functions": [int(v) for v in h.deactivated_functions(l)],
                "active_elements": [int(v) for v in h.active_elements(l)],
            }
        )
    return {"dimension": h.dim, "degree": list(h.degrees), "levels": levels}


def hierarchy_from_dict(data: dict) -> HierarchicalSpace:
    """Inverse of :func:`hierarchy_to_dict`; the function sets are cross-checked."""
    degrees = data["degree"]
    spaces = []
    for entry in data["levels"]:
        spaces.append(TensorSpace(tuple(KnotVector(tuple(k), p) for k, p in zip(entry["knots"], degrees))))
    for c, f in zip(spaces, spaces[1:]):
        if dyadic_refine(c) != f:
            raise NestingError("levels are not dyadic refinements of each other")
    # rebuild Omega from the finest level down: Omega_l = active_l ∪ parents(Omega_{l+1})
    domains: list[np.ndarray] = [None] * len(spaces)  # type: ignore[list-item]
    for l in range(len(spaces) - 1, -1, -1):
        shape = spaces[l].element_shape
        dom = np.zeros(int(np.prod(shape)), dtype=bool)
        dom[np.asarray(data["levels"][l]["active_elements"], dtype=np.int64)] = True
        dom = dom.reshape(shape, order="F")
        if l + 1 < len(spaces):
            dom |= domains[l + 1][tuple(slice(None, None, 2) for _ in shape)]
        domains[l] = dom
    h = HierarchicalSpace(tuple(spaces), tuple(domains))
    for l, entry in enumerate(data["levels"]):
        if list(h.active_functions(l)) != list(entry["active_functions"]):
            raise ValueError(f"active functions of level {l} are inconsistent with the elements")
    return h
