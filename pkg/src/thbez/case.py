"""JSON case files: schema, validation and construction of the objects they describe."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema

from .fem_poisson import EDGES, GaussianPeak, PoissonCase, PolynomialSolution, QuadratureRule, parse_rule
from .hierarchy import HierarchicalSpace

_INT_OR_PAIR = {
    "oneOf": [
        {"type": "integer", "minimum": 1},
        {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1, "maxItems": 2},
    ]
}
_INTERVAL = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}

CASE_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["degree", "elements"],
    "properties": {
        "dimension": {"enum": [1, 2]},
        "degree": _INT_OR_PAIR,
        "elements": _INT_OR_PAIR,
        "refinement": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["mode"],
                "oneOf": [
                    {
                        "additionalProperties": False,
                        "properties": {"mode": {"const": "global"}, "repeat": {"type": "integer", "minimum": 1}},
                    },
                    {
                        "additionalProperties": False,
                        "required": ["region"],
                        "properties": {
                            "mode": {"const": "region"},
                            "region": {"type": "array", "items": _INTERVAL, "minItems": 1, "maxItems": 2},
                            "max_level": {"type": "integer", "minimum": 0},
                            "repeat": {"type": "integer", "minimum": 1},
                        },
                    },
                    {
                        "additionalProperties": False,
                        "properties": {
                            "mode": {"const": "indicator"},
                            "theta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                            "repeat": {"type": "integer", "minimum": 1},
                        },
                    },
                    {
                        "additionalProperties": False,
                        "required": ["elements"],
                        "properties": {
                            "mode": {"const": "elements"},
                            "elements": {
                                "type": "array",
                                "items": {
                                    "type": "array",
                                    "minItems": 2,
                                    "maxItems": 2,
                                    "prefixItems": [
                                        {"type": "integer", "minimum": 0},
                                        {
                                            "oneOf": [
                                                {"type": "integer", "minimum": 0},
                                                {"type": "array", "items": {"type": "integer", "minimum": 0}},
                                            ]
                                        },
                                    ],
                                },
                            },
                        },
                    },
                ],
            },
        },
        "solution": {
            "type": "object",
            "oneOf": [
                {
                    "additionalProperties": False,
                    "properties": {"kind": {"const": "gaussian"}, "C": {"type": "number", "exclusiveMinimum": 0}},
                    "required": ["kind"],
                },
                {
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"const": "polynomial"},
                        "terms": {
                            "type": "array",
                            "items": {
                                "type": "array",
                                "prefixItems": [
                                    {"type": "integer", "minimum": 0},
                                    {"type": "integer", "minimum": 0},
                                    {"type": "number"},
                                ],
                                "minItems": 3,
                                "maxItems": 3,
                            },
                        },
                    },
                    "required": ["kind", "terms"],
                },
            ],
        },
        "boundary": {
            "type": "object",
            "additionalProperties": False,
            "properties": {e: {"enum": ["dirichlet", "neumann"]} for e in EDGES},
        },
        "quadrature": {"type": "string", "pattern": "^(gauss|nc):[0-9]+$"},
        "theta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "deterministic": {"type": "boolean"},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"solution": {"type": "string"}, "records": {"type": "string"}},
        },
    },
}


class CaseError(ValueError):
    """Invalid case file; ``diagnostics`` holds one message per problem."""

    def __init__(self, diagnostics: list[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = diagnostics


def _line_of(text: str, path) -> int | None:
    """Best-effort line of the innermost object key on ``path``."""
    keys = [p for p in path if isinstance(p, str)]
    if not keys:
        return None
    needle = f'"{keys[-1]}"'
    pos = text.find(needle)
    return text.count("\n", 0, pos) + 1 if pos >= 0 else None


def validate_text(text: str) -> dict:
    """Parse and schema-check a case file, raising :class:`CaseError` with line diagnostics."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError([f"line {exc.lineno} column {exc.colno}: {exc.msg}"]) from None
    validator = jsonschema.Draft202012Validator(CASE_SCHEMA)
    problems = []
    for err in sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path))):
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        line = _line_of(text, err.absolute_path)
        prefix = f"line {line}: " if line else ""
        problems.append(f"{prefix}{where}: {err.message}")
    if problems:
        raise CaseError(problems)
    return data


@dataclass
class CaseConfig:
    """Validated contents of a case file."""

    dimension: int
    degree: tuple[int, ...]
    elements: tuple[int, ...]
    refinement: list[dict] = field(default_factory=list)
    solution: GaussianPeak | PolynomialSolution = field(default_factory=GaussianPeak)
    boundary: dict[str, str] = field(default_factory=lambda: {e: "dirichlet" for e in EDGES})
    quadrature: QuadratureRule | None = None
    theta: float = 0.2
    deterministic: bool = False
    output: dict[str, str] = field(default_factory=dict)

    def initial_hierarchy(self) -> HierarchicalSpace:
        return HierarchicalSpace.uniform(self.elements, self.degree, self.dimension)

    def make_case(self, h: HierarchicalSpace) -> PoissonCase:
        return PoissonCase(h, self.solution, self.boundary)


def _expand(value, dim: int, name: str) -> tuple[int, ...]:
    vals = [value] * dim if isinstance(value, int) else list(value)
    if len(vals) == 1:
        vals = vals * dim
    if len(vals) != dim:
        raise CaseError([f"{name}: expected {dim} values"])
    return tuple(int(v) for v in vals)


def config_from_dict(data: dict) -> CaseConfig:
    dim = int(data.get("dimension", 2))
    degree = _expand(data["degree"], dim, "degree")
    if any(not 1 <= p <= 4 for p in degree):
        raise CaseError([f"degree: {list(degree)} outside the supported range 1..4"])
    elements = _expand(data["elements"], dim, "elements")
    sol = data.get("solution", {"kind": "gaussian"})
    solution = (
        GaussianPeak(sol.get("C", 100.0)) if sol["kind"] == "gaussian" else PolynomialSolution(sol["terms"])
    )
    boundary = {e: "dirichlet" for e in EDGES}
    boundary.update(data.get("boundary", {}))
    if "dirichlet" not in boundary.values():
        raise CaseError(["boundary: at least one edge must be dirichlet"])
    for step in data.get("refinement", []):
        if step["mode"] == "region" and len(step["region"]) != dim:
            raise CaseError([f"refinement: region needs {dim} intervals"])
        if step["mode"] == "indicator" and dim != 2:
            raise CaseError(["refinement: indicator marking needs a 2D case"])
    rule = None
    if "quadrature" in data:
        try:
            rule = parse_rule(data["quadrature"])
        except ValueError as exc:
            raise CaseError([f"quadrature: {exc}"]) from None
    return CaseConfig(
        dimension=dim,
        degree=degree,
        elements=elements,
        refinement=list(data.get("refinement", [])),
        solution=solution,
        boundary=boundary,
        quadrature=rule,
        theta=float(data.get("theta", 0.2)),
        deterministic=bool(data.get("deterministic", False)),
        output=dict(data.get("output", {})),
    )


def load_case(path: str | Path) -> CaseConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CaseError([f"cannot read {path}: {exc}"]) from None
    return config_from_dict(validate_text(text))
