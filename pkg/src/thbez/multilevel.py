"""Multi-level Bézier extraction.

For a level ``L`` the global operator ``M_L`` expresses every active function
of levels ``<= L`` in the level-``L`` tensor basis (truncation folded into the
rows). Restricting ``M_L`` to the columns of one level-``L`` element and the
rows that do not vanish there gives ``M_loc``; multiplying with the element's
Bézier extraction operator gives ``C = M_loc @ E``, the map from the reference
Bernstein basis to the hierarchical functions on the element.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .bezier import decompose
from .hierarchy import HierarchicalSpace


@dataclass(frozen=True, eq=False)
class GlobalExtraction:
    """``matrix`` rows follow ``function_ids``; columns are level-``level`` functions."""

    level: int
    matrix: sp.csc_matrix
    function_ids: np.ndarray


@dataclass(frozen=True, eq=False)
class ElementRecord:
    """Operators of one active element.

    ``function_ids`` label the rows of ``M`` and ``C``; ``columns`` are the
    level-``level`` functions labelling the columns of ``M`` and rows of ``E``.
    """

    level: int
    index: int
    multi_index: tuple[int, ...]
    box: tuple[tuple[float, float], ...]
    function_ids: np.ndarray
    columns: np.ndarray
    M: np.ndarray
    E: np.ndarray
    C: np.ndarray

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "index": self.index,
            "multi_index": list(self.multi_index),
            "box": [list(b) for b in self.box],
            "function_ids": [int(v) for v in self.function_ids],
            "columns": [int(v) for v in self.columns],
            "M": self.M.tolist(),
            "E": self.E.tolist(),
            "C": self.C.tolist(),
        }


def _build_global(h: HierarchicalSpace, level: int) -> GlobalExtraction:
    blocks = []
    ids = []
    for k in range(level + 1):
        act = h.active_functions(k)
        if act.size == 0:
            continue
        n_k = h.levels[k].n_functions
        R = sp.csr_matrix((np.ones(act.size), (np.arange(act.size), act)), shape=(act.size, n_k))
        for m in range(k, level):
            R = (R @ h.subdivision(m).T).tocsr()
            # truncation: coefficients over active functions of level m+1 vanish
            keep = (~h.active_function_mask(m + 1).ravel(order="F")).astype(float)
            R = (R @ sp.diags(keep)).tocsr()
            R.eliminate_zeros()
        blocks.append(R)
        ids.append(h.global_ids(k)[act])
    n_cols = h.levels[level].n_functions
    if blocks:
        M = sp.vstack(blocks, format="csc")
        fids = np.concatenate(ids)
    else:
        M = sp.csc_matrix((0, n_cols))
        fids = np.zeros(0, dtype=np.int64)
    M.sort_indices()
    return GlobalExtraction(level, M, fids)


def global_extraction(h: HierarchicalSpace, level: int) -> GlobalExtraction:
    """Global multi-level extraction operator of ``level`` (cached on ``h``)."""
    if not 0 <= level < h.n_levels:
        raise ValueError(f"level {level} out of range")
    key = ("mglob", level)
    if key not in h._cache:
        h._cache[key] = _build_global(h, level)
    return h._cache[key]


class _LevelContext:
    """Per-level data shared by all element records of one level."""

    def __init__(self, h: HierarchicalSpace, level: int):
        self.level = level
        self.space = h.levels[level]
        self.G = global_extraction(h, level)
        key = ("bezier", level)
        if key not in h._cache:
            h._cache[key] = [decompose(kv) for kv in self.space.knots]
        self.ops = h._cache[key]
        self.breaks = [kv.breakpoints for kv in self.space.knots]
        self.nfun = self.space.function_shape

    def record(self, flat: int, multi: tuple[int, ...]) -> ElementRecord:
        ops = [self.ops[k][m] for k, m in enumerate(multi)]
        if len(ops) == 1:
            E = ops[0].matrix
            cols = ops[0].functions
        else:
            ex, ey = ops[0], ops[1]
            E = (ey.matrix[:, None, :, None] * ex.matrix[None, :, None, :]).reshape(
                ey.matrix.shape[0] * ex.matrix.shape[0], -1
            )
            cols = (ex.functions[None, :] + self.nfun[0] * ey.functions[:, None]).ravel()
        M = self.G.matrix
        starts = M.indptr[cols]
        lengths = M.indptr[cols + 1] - starts
        total = int(lengths.sum())
        offsets = np.cumsum(lengths) - lengths
        pos = np.arange(total) - np.repeat(offsets, lengths) + np.repeat(starts, lengths)
        rows, inv = np.unique(M.indices[pos], return_inverse=True)
        dense = np.zeros((rows.size, cols.size))
        dense[inv, np.repeat(np.arange(cols.size), lengths)] = M.data[pos]
        box = tuple((float(b[m]), float(b[m + 1])) for b, m in zip(self.breaks, multi))
        return ElementRecord(
            self.level, flat, multi, box, self.G.function_ids[rows], cols, dense, E, dense @ E
        )


def _resolve(h: HierarchicalSpace, element) -> tuple[int, int]:
    level, idx = element
    level = int(level)
    if not 0 <= level < h.n_levels:
        raise ValueError(f"element {element} does not exist")
    if np.isscalar(idx):
        flat = int(idx)
    else:
        shape = h.levels[level].element_shape
        multi = tuple(int(v) for v in idx)
        if any(not 0 <= m < n for m, n in zip(multi, shape)):
            raise ValueError(f"element {element} does not exist")
        flat = h.levels[level].flat_element(multi)
    if not h.is_active_element(level, flat):
        raise ValueError(f"element {element} is not active")
    return level, flat


def local_extraction(h: HierarchicalSpace, element) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(M_loc, function_ids, columns)`` for an active element ``(level, index)``."""
    rec = element_operator(h, element)
    return rec.M, rec.function_ids, rec.columns


def element_operator(h: HierarchicalSpace, element) -> ElementRecord:
    """Record with ``M_loc``, ``E_loc`` and ``C = M_loc @ E_loc`` for an active element."""
    level, flat = _resolve(h, element)
    return _LevelContext(h, level).record(flat, h.levels[level].multi_element(flat))


def element_records(h: HierarchicalSpace, boundary_only: bool = False):
    """Records of all active elements in ascending (level, index) order.

    With ``boundary_only`` only elements touching the domain boundary are produced.
    """
    for level in range(h.n_levels):
        flats = h.active_elements(level)
        shape = h.levels[level].element_shape
        multis = np.unravel_index(flats, shape, order="F")
        if boundary_only:
            keep = np.zeros(flats.size, dtype=bool)
            for m, n in zip(multis, shape):
                keep |= (m == 0) | (m == n - 1)
            flats = flats[keep]
            multis = tuple(m[keep] for m in multis)
        if flats.size == 0:
            continue
        ctx = _LevelContext(h, level)
        for k, flat in enumerate(flats):
            yield ctx.record(int(flat), tuple(int(m[k]) for m in multis))
