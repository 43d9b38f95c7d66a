import csv
import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

from thbez import cli
from thbez.case import CaseError, config_from_dict, load_case, validate_text
from thbez.errors import NumericalError
from thbez.study import CSV_COLUMNS, build_hierarchy, convergence, csv_text, run_case

RIGHT_REFINED_CASE = {
    "dimension": 1,
    "degree": 2,
    "elements": 4,
    "refinement": [{"mode": "region", "region": [[0.5, 1.0]]}, {"mode": "region", "region": [[0.75, 1.0]]}],
}


def write_case(tmp_path, data, name="case.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data, indent=2) if isinstance(data, dict) else data)
    return str(path)


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def parse_csv(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestCaseFiles:
    def test_minimal_defaults(self):
        cfg = config_from_dict({"degree": 2, "elements": 4})
        assert cfg.dimension == 2
        assert cfg.degree == (2, 2)
        assert cfg.solution.C == 100.0
        assert set(cfg.boundary.values()) == {"dirichlet"}

    def test_unknown_key_rejected_with_line(self):
        text = '{\n  "degree": 2,\n  "elements": 4,\n  "colour": "red"\n}'
        with pytest.raises(CaseError) as exc:
            validate_text(text)
        assert any("colour" in d for d in exc.value.diagnostics)

    def test_schema_error_reports_line(self):
        text = '{\n  "degree": 2,\n  "elements": 4,\n  "theta": 3\n}'
        with pytest.raises(CaseError) as exc:
            validate_text(text)
        assert exc.value.diagnostics[0].startswith("line 4")

    def test_decode_error_reports_line(self):
        with pytest.raises(CaseError) as exc:
            validate_text('{\n  "degree": 2,\n  "elements": 4,,\n}')
        assert exc.value.diagnostics[0].startswith("line 3")

    @pytest.mark.parametrize(
        "data",
        [
            {"degree": 5, "elements": 4},
            {"degree": 2, "elements": [4, 4, 4]},
            {"degree": 2, "elements": 4, "boundary": {e: "neumann" for e in ("left", "right", "bottom", "top")}},
            {"degree": 2, "elements": 4, "refinement": [{"mode": "region", "region": [[0, 1]]}]},
            {"degree": 2, "elements": 4, "quadrature": "gauss:20"},
        ],
        ids=["degree", "elements", "all_neumann", "region_dimension", "quadrature"],
    )
    def test_semantic_errors(self, data):
        with pytest.raises(CaseError):
            config_from_dict(validate_text(json.dumps(data)))

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(CaseError):
            load_case(tmp_path / "missing.json")

    def test_repeat_expands_steps(self):
        cfg = config_from_dict({"degree": 2, "elements": 2, "refinement": [{"mode": "global", "repeat": 2}]})
        assert build_hierarchy(cfg).n_elements == 64

    def test_elements_mode(self):
        cfg = config_from_dict(
            {"degree": 2, "elements": 2, "refinement": [{"mode": "elements", "elements": [[0, [1, 1]], [0, 0]]}]}
        )
        h = build_hierarchy(cfg)
        assert h.elements() == [(0, 1), (0, 2)] + [(1, i) for i in (0, 1, 4, 5, 10, 11, 14, 15)]


class TestStudy:
    def test_run_case_records_every_step(self):
        cfg = config_from_dict(
            {"degree": 2, "elements": 4, "refinement": [{"mode": "global"}, {"mode": "indicator", "theta": 0.3}]}
        )
        records, case, result = run_case(cfg)
        assert [r.step for r in records] == [0, 1, 2]
        assert records[1].dofs > records[0].dofs and records[2].dofs > records[1].dofs
        assert result.l2_error == records[-1].l2_error

    def test_global_convergence_monotone(self):
        records = convergence(config_from_dict({"degree": 2, "elements": 4}), "global", 4)
        errors = [r.l2_error for r in records]
        assert all(a > b for a, b in zip(errors, errors[1:]))
        assert [r.h for r in records] == [0.25, 0.125, 0.0625, 0.03125]
        assert all(r.equiv_residual is None for r in records)

    def test_local_convergence_reports_equivalence(self):
        records = convergence(config_from_dict({"degree": 2, "elements": 4}), "local", 3)
        dofs = [r.dofs for r in records]
        assert dofs == sorted(set(dofs))
        assert all(r.equiv_residual <= 1e-12 for r in records)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            convergence(config_from_dict({"degree": 2, "elements": 4}), "adaptive", 2)

    def test_csv_layout(self):
        records = convergence(config_from_dict({"degree": 1, "elements": 2}), "global", 1)
        text = csv_text(records, deterministic=True)
        lines = text.split("\r\n")
        assert lines[0] == ",".join(CSV_COLUMNS)
        row = lines[1].split(",")
        assert row[4] == "" and row[5] == ""


class TestSolveCommand:
    def test_minimal_case(self, tmp_path, capsys):
        path = write_case(tmp_path, {"degree": 2, "elements": 4})
        code, out, _ = run(["solve", path, "--out", str(tmp_path / "out")], capsys)
        assert code == 0
        rows = parse_csv((tmp_path / "out" / "records.csv").read_text())
        assert len(rows) == 1
        assert float(rows[0]["l2_error"]) > 0
        sol = json.loads((tmp_path / "out" / "solution.json").read_text())
        assert sol["dofs"] == 36 and len(sol["coefficients"]) == 36

    def test_csv_to_stdout(self, tmp_path, capsys):
        path = write_case(tmp_path, {"degree": 1, "elements": 2})
        code, out, _ = run(["solve", "--config", path], capsys)
        assert code == 0
        assert out.startswith("step,dofs,h,l2_error,equiv_residual,wall_ms")

    def test_output_paths_from_case(self, tmp_path, capsys):
        data = {"degree": 1, "elements": 2, "output": {"records": str(tmp_path / "r.csv"), "solution": str(tmp_path / "s.json")}}
        code, out, _ = run(["solve", write_case(tmp_path, data)], capsys)
        assert code == 0 and out == ""
        assert (tmp_path / "r.csv").exists() and (tmp_path / "s.json").exists()

    def test_corrupt_json(self, tmp_path, capsys):
        code, _, err = run(["solve", write_case(tmp_path, '{"degree": 2,')], capsys)
        assert code == 2
        assert "line 1" in err

    def test_invalid_schema(self, tmp_path, capsys):
        code, _, err = run(["solve", write_case(tmp_path, {"degree": 2})], capsys)
        assert code == 2
        assert "elements" in err

    def test_missing_case(self, capsys):
        assert run(["solve"], capsys)[0] == 2

    def test_bad_arguments(self, capsys):
        assert run(["solve", "--bogus"], capsys)[0] == 2

    def test_numerical_failure(self, tmp_path, capsys, monkeypatch):
        def fail(*args, **kwargs):
            raise NumericalError("singular")

        monkeypatch.setattr(cli, "run_case", fail)
        code, _, err = run(["solve", write_case(tmp_path, {"degree": 2, "elements": 4})], capsys)
        assert code == 3
        assert "singular" in err

    def test_solve_rejects_1d_case(self, tmp_path, capsys):
        assert run(["solve", write_case(tmp_path, RIGHT_REFINED_CASE)], capsys)[0] == 2

    def test_global_rate_for_quadratics(self, tmp_path, capsys):
        data = {"degree": 2, "elements": 4, "refinement": [{"mode": "global", "repeat": 3}]}
        code, out, _ = run(["solve", write_case(tmp_path, data)], capsys)
        rows = parse_csv(out)
        e = [float(r["l2_error"]) for r in rows]
        assert code == 0 and len(rows) == 4
        assert math.log2(e[-2] / e[-1]) > 2.7

    def test_deterministic_output_is_byte_identical(self, tmp_path, capsys):
        data = {"degree": 2, "elements": 4, "refinement": [{"mode": "indicator"}]}
        path = write_case(tmp_path, data)
        outputs = []
        for k in range(2):
            out = tmp_path / f"run{k}"
            assert run(["solve", path, "--deterministic", "--out", str(out)], capsys)[0] == 0
            outputs.append(((out / "records.csv").read_bytes(), (out / "solution.json").read_bytes()))
        assert outputs[0] == outputs[1]


class TestConvergenceCommand:
    def test_global(self, tmp_path, capsys):
        path = write_case(tmp_path, {"degree": 2, "elements": 4})
        code, out, _ = run(["convergence", path, "--mode", "global", "--steps", "3"], capsys)
        rows = parse_csv(out)
        assert code == 0 and len(rows) == 3
        errors = [float(r["l2_error"]) for r in rows]
        assert errors == sorted(errors, reverse=True)
        assert all(r["equiv_residual"] == "" for r in rows)

    def test_local_equivalence(self, tmp_path, capsys):
        path = write_case(tmp_path, {"degree": 2, "elements": 4})
        code, out, _ = run(["convergence", path, "--mode", "local", "--steps", "3"], capsys)
        assert code == 0
        assert all(float(r["equiv_residual"]) <= 1e-12 for r in parse_csv(out))

    def test_zero_steps_header_only(self, tmp_path, capsys):
        path = write_case(tmp_path, {"degree": 2, "elements": 4})
        code, out, _ = run(["convergence", path, "--steps", "0"], capsys)
        assert code == 0
        assert out == "step,dofs,h,l2_error,equiv_residual,wall_ms\r\n"

    def test_negative_steps(self, tmp_path, capsys):
        path = write_case(tmp_path, {"degree": 2, "elements": 4})
        assert run(["convergence", path, "--steps", "-1"], capsys)[0] == 2

    def test_bad_quad(self, tmp_path, capsys):
        path = write_case(tmp_path, {"degree": 2, "elements": 4})
        assert run(["convergence", path, "--quad", "trapezoid"], capsys)[0] == 2


class TestExtractCommand:
    def test_right_end_element(self, tmp_path, capsys):
        code, out, _ = run(["extract", write_case(tmp_path, RIGHT_REFINED_CASE), "--element", "2:12"], capsys)
        assert code == 0
        data = json.loads(out)
        assert data["functions"] == [[1, 6], [1, 7], [2, 14]]
        assert_allclose(data["C"], [[0.5, 0.25, 0.125], [0.5, 0.75, 0.375], [0, 0, 0.5]])

    def test_unrefined_case_is_bezier_extraction(self, tmp_path, capsys):
        path = write_case(tmp_path, {"degree": 2, "elements": 3})
        code, out, _ = run(["extract", path, "--element", "0:1,1"], capsys)
        data = json.loads(out)
        assert code == 0
        assert_allclose(data["M"], np.eye(9))
        assert data["C"] == data["E"]

    def test_round_trip_exact(self, tmp_path, capsys):
        from thbez.multilevel import element_operator

        path = write_case(tmp_path, RIGHT_REFINED_CASE)
        out_path = tmp_path / "element.json"
        assert run(["extract", path, "--element", "4", "--out", str(out_path)], capsys)[0] == 0
        data = json.loads(out_path.read_text())
        rec = element_operator(build_hierarchy(load_case(path)), (data["level"], data["index"]))
        assert np.array_equal(np.array(data["C"]), rec.C)
        assert np.array_equal(np.array(data["M"]), rec.M)

    @pytest.mark.parametrize("element", ["0:3", "0:99", "7:0", "99", "abc"])
    def test_inactive_or_unknown(self, tmp_path, capsys, element):
        code, _, err = run(["extract", write_case(tmp_path, RIGHT_REFINED_CASE), "--element", element], capsys)
        assert code == 4
        assert err.startswith("error")

    def test_indicator_script_rejected(self, tmp_path, capsys):
        data = {"degree": 2, "elements": 4, "refinement": [{"mode": "indicator"}]}
        assert run(["extract", write_case(tmp_path, data), "--element", "0"], capsys)[0] == 2


class TestDemoAndValidate:
    def test_demo_nc_sample(self, capsys):
        code, out, _ = run(["demo-nc", "0,0,0,0.25,0.5,0.75,0.75,1,1,1"], capsys)
        assert code == 0
        assert out.count("MISATTRIBUTED") == 3

    def test_demo_nc_explicit_degree_and_rule(self, capsys):
        code, out, _ = run(["demo-nc", "[0 0 0.5 1 1]", "--degree", "1", "--quad", "nc:2"], capsys)
        assert code == 0
        assert "n=2" in out

    @pytest.mark.parametrize("knots", ["0,0,a,1,1", "0,0.5,1", "1,0,0,1"])
    def test_demo_nc_parse_failure(self, capsys, knots):
        assert run(["demo-nc", knots], capsys)[0] == 2

    def test_validate(self, tmp_path, capsys):
        code, out, _ = run(["validate", write_case(tmp_path, {"degree": 2, "elements": 4})], capsys)
        assert code == 0 and out.strip() == "ok"

    def test_module_entry_point(self, tmp_path):
        path = write_case(tmp_path, {"degree": 2, "elements": 4})
        proc = subprocess.run([sys.executable, "-m", "thbez", "validate", path], capture_output=True, text=True)
        assert proc.returncode == 0
