"""Command-line interface.

Exit codes: 0 success, 2 invalid input (unreadable or malformed case file,
bad arguments), 3 numerical failure, 4 inactive or unknown element.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .case import CaseConfig, CaseError, load_case
from .errors import NumericalError
from .fem_poisson import demo_newton_cotes_pathology, parse_rule
from .hierarchy import hierarchy_to_dict
from .multilevel import element_operator
from .splines_core import KnotVector
from .study import build_hierarchy, convergence, csv_text, run_case

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_ELEMENT = 4

log = logging.getLogger("thbez")


def _dump_json(obj, deterministic: bool) -> str:
    if deterministic:
        return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"
    return json.dumps(obj, indent=2) + "\n"


def _write(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _config(args) -> CaseConfig:
    path = args.config or args.case
    if path is None:
        raise CaseError(["no case file given (positional or --config)"])
    cfg = load_case(path)
    if getattr(args, "quad", None):
        try:
            cfg.quadrature = parse_rule(args.quad)
        except ValueError as exc:
            raise CaseError([f"--quad: {exc}"]) from None
    if getattr(args, "deterministic", False):
        cfg.deterministic = True
    return cfg


def cmd_validate(args) -> int:
    _config(args)
    print("ok")
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = _config(args)
    if cfg.dimension != 2:
        raise CaseError(["dimension: solve needs a 2D case"])
    records, case, result = run_case(cfg)
    h = case.hierarchy
    solution = {
        "hierarchy": hierarchy_to_dict(h),
        "functions": [list(h.function_of_id(i)) for i in range(h.n_functions)],
        "coefficients": [float(c) for c in result.coefficients],
        "dofs": h.n_functions,
        "l2_error": result.l2_error,
    }
    csv_out = csv_text(records, cfg.deterministic)
    if args.out:
        out = Path(args.out)
        sol_path, rec_path = str(out / "solution.json"), str(out / "records.csv")
    else:
        sol_path, rec_path = cfg.output.get("solution"), cfg.output.get("records")
    if sol_path:
        _write(_dump_json(solution, cfg.deterministic), sol_path)
    _write(csv_out, rec_path)
    return EXIT_OK


def cmd_convergence(args) -> int:
    cfg = _config(args)
    if cfg.dimension != 2:
        raise CaseError(["dimension: convergence needs a 2D case"])
    if args.steps < 0:
        raise CaseError(["--steps must be non-negative"])
    records = convergence(cfg, args.mode, args.steps)
    _write(csv_text(records, cfg.deterministic), args.out)
    return EXIT_OK


def _parse_element(spec: str, h):
    """``L:I`` (flat index), ``L:i,j`` (multi-index) or a position in the active-element order."""
    try:
        if ":" in spec:
            lvl, _, idx = spec.partition(":")
            parts = [int(v) for v in idx.split(",")]
            return int(lvl), parts[0] if len(parts) == 1 else tuple(parts)
        pos = int(spec)
    except ValueError:
        return None
    elements = h.elements()
    return elements[pos] if 0 <= pos < len(elements) else None


def cmd_extract(args) -> int:
    cfg = _config(args)
    h = build_hierarchy(cfg)
    element = _parse_element(args.element, h)
    if element is None:
        print(f"error: unknown element {args.element!r}", file=sys.stderr)
        return EXIT_ELEMENT
    try:
        rec = element_operator(h, element)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ELEMENT
    data = rec.to_dict()
    data["functions"] = [list(h.function_of_id(int(i))) for i in rec.function_ids]
    _write(_dump_json(data, cfg.deterministic), args.out)
    return EXIT_OK


def parse_knots(text: str, degree: int | None) -> KnotVector:
    cleaned = text.strip().strip("[]")
    values = [float(v) for v in cleaned.replace(";", ",").replace(" ", ",").split(",") if v]
    if degree is None:
        degree = sum(1 for v in values if v == values[0]) - 1
    return KnotVector(tuple(values), degree)


def cmd_demo_nc(args) -> int:
    try:
        kv = parse_knots(args.knots, args.degree)
        rule = parse_rule(args.quad) if args.quad else None
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    report = demo_newton_cotes_pathology(kv, rule)
    print(report.format())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thbez", description="THB-splines with multi-level Bézier extraction.")
    sub = parser.add_subparsers(dest="command", required=True)

    def case_args(p):
        p.add_argument("case", nargs="?", help="case file (JSON)")
        p.add_argument("--config", help="case file (JSON), alternative to the positional argument")
        p.add_argument("--deterministic", action="store_true", help="byte-stable output")

    p = sub.add_parser("solve", help="run the case script, solving after every step")
    case_args(p)
    p.add_argument("--out", help="directory for solution.json and records.csv")
    p.add_argument("--quad", help="stiffness/load rule, gauss:N or nc:N")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("convergence", help="global or indicator-driven refinement study")
    case_args(p)
    p.add_argument("--mode", choices=["global", "local"], default="global")
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    p.add_argument("--quad", help="stiffness/load rule, gauss:N or nc:N")
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("extract", help="dump M, E and C of one element as JSON")
    case_args(p)
    p.add_argument("--element", required=True, help="L:I, L:i,j or position among active elements")
    p.add_argument("--out", help="JSON path (stdout if omitted)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("demo-nc", help="Newton-Cotes evaluation at element boundaries")
    p.add_argument("knots", help="comma-separated knot values")
    p.add_argument("--degree", type=int, help="degree (default: end multiplicity - 1)")
    p.add_argument("--quad", help="closed rule nc:N (default nc:p+1)")
    p.set_defaults(func=cmd_demo_nc)

    p = sub.add_parser("validate", help="check a case file against the schema")
    case_args(p)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = getattr(logging, os.environ.get("THBEZ_LOG", "WARNING").upper(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except CaseError as exc:
        for line in exc.diagnostics:
            print(f"error: {line}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
