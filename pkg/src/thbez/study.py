"""Refinement drivers: case scripts and convergence studies."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass
from typing import Iterable, TextIO

import numpy as np

from .case import CaseConfig
from .direct import equivalence_residual
from .fem_poisson import PoissonCase, SolveResult, solve_case
from .hierarchy import HierarchicalSpace, refine, refine_all
from .marking import mark_indicator, mark_region

log = logging.getLogger(__name__)

CSV_COLUMNS = ("step", "dofs", "h", "l2_error", "equiv_residual", "wall_ms")


@dataclass(frozen=True)
class ConvergenceRecord:
    step: int
    dofs: int
    h: float
    l2_error: float
    equiv_residual: float | None
    wall_ms: float


def mesh_size(h: HierarchicalSpace) -> float:
    """Largest element width on the finest level that has active elements."""
    level = h.finest_active_level()
    return float(max(np.max(np.diff(kv.breakpoints)) for kv in h.levels[level].knots))


def _refine_step(
    cfg: CaseConfig, h: HierarchicalSpace, step: dict, case: PoissonCase | None, result: SolveResult | None
) -> HierarchicalSpace:
    mode = step["mode"]
    if mode == "global":
        return refine_all(h)
    if mode == "region":
        return refine(h, mark_region(h, step["region"], step.get("max_level")))
    if mode == "elements":
        return refine(h, [(lvl, tuple(idx) if isinstance(idx, list) else idx) for lvl, idx in step["elements"]])
    if mode == "indicator":
        if case is None or result is None:
            raise ValueError("indicator marking needs a solved case")
        return refine(h, mark_indicator(case, result.coefficients, step.get("theta", cfg.theta)))
    raise ValueError(f"unknown refinement mode {mode!r}")


def _expanded(script: Iterable[dict]):
    for step in script:
        for _ in range(int(step.get("repeat", 1))):
            yield step


def build_hierarchy(cfg: CaseConfig) -> HierarchicalSpace:
    """Run the refinement script without solving (indicator steps are not allowed)."""
    h = cfg.initial_hierarchy()
    for step in _expanded(cfg.refinement):
        if step["mode"] == "indicator":
            raise ValueError("indicator refinement needs a solve; use run_case")
        h = _refine_step(cfg, h, step, None, None)
    return h


def _solve_record(
    cfg: CaseConfig, h: HierarchicalSpace, step: int, equivalence: bool
) -> tuple[PoissonCase, SolveResult, ConvergenceRecord]:
    t0 = time.perf_counter()
    case = cfg.make_case(h)
    result = solve_case(case, cfg.quadrature)
    wall = (time.perf_counter() - t0) * 1e3
    resid = equivalence_residual(case, result.system.K) if equivalence else None
    rec = ConvergenceRecord(step, h.n_functions, mesh_size(h), result.l2_error, resid, wall)
    log.info("step %d: dofs=%d l2=%.6e", step, rec.dofs, rec.l2_error)
    return case, result, rec


def run_case(cfg: CaseConfig, equivalence: bool = False):
    """Solve on the initial mesh and after every refinement step of the case script.

    Returns ``(records, case, result)`` for the final mesh.
    """
    h = cfg.initial_hierarchy()
    case, result, rec = _solve_record(cfg, h, 0, equivalence)
    records = [rec]
    for k, step in enumerate(_expanded(cfg.refinement), start=1):
        h = _refine_step(cfg, h, step, case, result)
        case, result, rec = _solve_record(cfg, h, k, equivalence)
        records.append(rec)
    return records, case, result


def convergence(cfg: CaseConfig, mode: str, steps: int, theta: float | None = None) -> list[ConvergenceRecord]:
    """``steps`` records starting from the initial mesh, refined globally or by the indicator.

    Local mode also reports the extraction-vs-direct stiffness residual.
    """
    if mode not in ("global", "local"):
        raise ValueError(f"mode must be global or local, got {mode!r}")
    theta = cfg.theta if theta is None else theta
    h = cfg.initial_hierarchy()
    records = []
    for k in range(steps):
        case, result, rec = _solve_record(cfg, h, k, mode == "local")
        records.append(rec)
        if k + 1 < steps:
            if mode == "global":
                h = refine_all(h)
            else:
                h = refine(h, mark_indicator(case, result.coefficients, theta))
    return records


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_csv(records: Iterable[ConvergenceRecord], stream: TextIO, deterministic: bool = False) -> None:
    """CSV with CRLF line endings; wall time is left empty in deterministic mode."""
    w = csv.writer(stream, lineterminator="\r\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(
            [r.step, r.dofs, _fmt(r.h), _fmt(r.l2_error), _fmt(r.equiv_residual), "" if deterministic else f"{r.wall_ms:.3f}"]
        )


def csv_text(records: Iterable[ConvergenceRecord], deterministic: bool = False) -> str:
    buf = io.StringIO()
    write_csv(records, buf, deterministic)
    return buf.getvalue()
