"""Element marking for adaptive refinement."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .fem_poisson import PoissonCase, gradient_indicator
from .hierarchy import HierarchicalSpace


def mark_region(h: HierarchicalSpace, region: Sequence[Sequence[float]], max_level: int | None = None):
    """Active elements whose box overlaps the parametric box ``region`` with positive measure.

    ``region`` is ``[[x0, x1]]`` in 1D or ``[[x0, x1], [y0, y1]]`` in 2D.
    Elements at ``max_level`` or finer are skipped.
    """
    if len(region) != h.dim:
        raise ValueError(f"region must have {h.dim} intervals")
    marked = []
    for level, flat in h.elements():
        if max_level is not None and level >= max_level:
            continue
        box = h.element_box(level, flat)
        if all(a < r1 and r0 < b for (a, b), (r0, r1) in zip(box, region)):
            marked.append((level, flat))
    return marked


def mark_indicator(case: PoissonCase, coefficients: np.ndarray, theta: float = 0.2):
    """Top ``ceil(theta * n)`` active elements by the element gradient norm of ``u_h``."""
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    eta = gradient_indicator(case, coefficients)
    count = math.ceil(theta * len(eta))
    # stable sort keeps ties in ascending element order
    order = sorted(range(len(eta)), key=lambda k: -eta[k][1])
    return sorted(eta[k][0] for k in order[:count])
