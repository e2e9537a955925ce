"""End-to-end command line coverage.

Every test drives main(argv) in process and checks the full external
contract: exit codes, emitted JSON documents, CSV side files, stderr
diagnostics, determinism, and conformance to the shipped JSON schemas.
"""

import json
import math
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from lqconic.cli import (DocumentError, load_trajectory_csv, main,
                         parse_problem, problem_sha256)
from lqconic.model import GeneralIQC, LQR, TimeGrid
from oracles import convolution_norm

REPO = Path(__file__).resolve().parents[1]
TANH1 = math.tanh(1.0)
LNCOSH1 = math.log(math.cosh(1.0))


def lqr_doc(steps=256, T=1.0, x0=1.0):
    return {
        "schema_version": "1",
        "system": {"A": [[0.0]], "B": [[1.0]]},
        "horizon": {"T": T, "steps": steps},
        "variant": {"type": "lqr", "Q": [[1.0]], "R": [[1.0]], "x_i": [x0]},
    }


def slqr_doc(steps=256):
    return {
        "schema_version": "1",
        "system": {"A": [[0.0]], "B": [[1.0]]},
        "horizon": {"T": 1.0, "steps": steps},
        "variant": {"type": "stoch_lqr", "Q": [[1.0]], "R": [[1.0]],
                    "X_i": [[0.0]], "W": [[1.0]]},
    }


def iqc_doc(T=2.0, steps=256):
    return {
        "schema_version": "1",
        "system": {"A": [[0.0]], "B": [[1.0]]},
        "horizon": {"T": T, "steps": steps},
        "variant": {"type": "general_iqc", "Q": [[-1.0]], "R": [[1.0]],
                    "x_i": [1.0]},
    }


def br_doc(gamma=2.0, steps=256):
    return {
        "schema_version": "1",
        "system": {"A": [[-1.0]], "B": [[1.0]], "C": [[1.0]]},
        "horizon": {"T": 2.0, "steps": steps},
        "variant": {"type": "bounded_real", "gamma": gamma},
    }


def pr_doc(good=True, steps=256):
    if good:
        system = {"A": [[-1.0]], "B": [[1.0]], "C": [[1.0]], "D": [[1.0]]}
    else:
        system = {"A": [[1.0]], "B": [[1.0]], "C": [[-1.0]], "D": [[0.2]]}
    return {
        "schema_version": "1",
        "system": system,
        "horizon": {"T": 2.0, "steps": steps},
        "variant": {"type": "positive_real"},
    }


def write_doc(tmp_path, doc, name="problem.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def run(capsys, argv):
    rc = main(argv)
    captured = capsys.readouterr()
    return rc, captured.out, captured.err


def load_schema(name):
    return json.loads((REPO / "docs" / "schema" / name).read_text())


class TestProblemParsing:
    def test_defaults(self):
        doc = lqr_doc()
        del doc["horizon"]["steps"]
        spec, options = parse_problem(doc)
        assert spec.grid.steps == 512
        assert options["tol"] == 1e-9
        assert options["escape_cap"] == 1e9
        assert options["seed"] == 0

    def test_document_options_read(self):
        doc = lqr_doc()
        doc["options"] = {"tol": 1e-7, "escape_cap": 50.0, "seed": 3}
        _, options = parse_problem(doc)
        assert options == {"tol": 1e-7, "escape_cap": 50.0, "seed": 3}

    def test_overrides_beat_document(self):
        spec, _ = parse_problem(lqr_doc(steps=64), steps_override=128,
                                T_override=2.0)
        assert spec.grid.steps == 128
        assert spec.grid.T == 2.0

    def test_variant_types(self):
        spec, _ = parse_problem(lqr_doc())
        assert isinstance(spec.variant, LQR)
        spec, _ = parse_problem(iqc_doc())
        assert isinstance(spec.variant, GeneralIQC)

    def test_bounded_real_gamma_defaults_to_one(self):
        doc = br_doc()
        del doc["variant"]["gamma"]
        spec, _ = parse_problem(doc)
        assert spec.variant.gamma == 1.0

    def test_wrong_schema_version(self):
        doc = lqr_doc()
        doc["schema_version"] = "2"
        with pytest.raises(DocumentError, match="schema_version"):
            parse_problem(doc)

    def test_missing_system_matrix(self):
        doc = lqr_doc()
        del doc["system"]["A"]
        with pytest.raises(DocumentError, match="system.A"):
            parse_problem(doc)

    def test_boolean_is_not_a_number(self):
        doc = lqr_doc()
        doc["horizon"]["T"] = True
        with pytest.raises(DocumentError, match="horizon.T"):
            parse_problem(doc)

    def test_fractional_steps_rejected(self):
        doc = lqr_doc()
        doc["horizon"]["steps"] = 10.5
        with pytest.raises(DocumentError, match="horizon.steps"):
            parse_problem(doc)

    def test_unknown_variant(self):
        doc = lqr_doc()
        doc["variant"]["type"] = "mystery"
        with pytest.raises(DocumentError, match="variant.type"):
            parse_problem(doc)

    def test_hash_is_key_order_invariant(self):
        doc = lqr_doc()
        reordered = json.loads(json.dumps(doc, sort_keys=True))
        shuffled = {k: reordered[k] for k in reversed(list(reordered))}
        assert problem_sha256(doc) == problem_sha256(shuffled)
        doc2 = lqr_doc(x0=2.0)
        assert problem_sha256(doc) != problem_sha256(doc2)


class TestExitCodes:
    def test_lqr_success(self, tmp_path, capsys):
        rc, out, _ = run(capsys, ["lqr", write_doc(tmp_path, lqr_doc())])
        assert rc == 0
        res = json.loads(out)
        assert res["kind"] == "certificate"
        assert abs(res["optimal_value"] - TANH1) < 1e-4

    def test_missing_file(self, tmp_path, capsys):
        rc, _, err = run(capsys, ["lqr", str(tmp_path / "nope.json")])
        assert rc == 1
        assert "cannot read file" in err

    def test_malformed_json_reports_line_and_column(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{"schema_version": "1",\n  "system": }')
        rc, _, err = run(capsys, ["lqr", str(path)])
        assert rc == 1
        assert "line 2" in err
        assert "column" in err

    def test_variant_subcommand_mismatch(self, tmp_path, capsys):
        rc, _, err = run(capsys, ["lqr", write_doc(tmp_path, br_doc())])
        assert rc == 1
        assert "needs a 'lqr' problem" in err

    def test_validation_failure_lists_violations(self, tmp_path, capsys):
        doc = lqr_doc()
        doc["variant"]["R"] = [[0.0]]
        rc, _, err = run(capsys, ["lqr", write_doc(tmp_path, doc)])
        assert rc == 1
        assert "RNotPD" in err

    def test_escaping_iqc_exits_two(self, tmp_path, capsys):
        rc, out, _ = run(capsys, ["iqc", write_doc(tmp_path, iqc_doc())])
        assert rc == 2
        res = json.loads(out)
        assert res["minus_infinity"] is True
        assert res["optimal_value"] is None
        assert abs(res["escape_time"] - (2.0 - math.pi / 2)) < 0.05

    def test_finite_iqc_exits_zero(self, tmp_path, capsys):
        rc, out, _ = run(capsys,
                         ["iqc", write_doc(tmp_path, iqc_doc(T=0.5))])
        assert rc == 0
        res = json.loads(out)
        assert abs(res["optimal_value"] - (-math.tan(0.5))) < 1e-4

    def test_passive_system_exits_zero(self, tmp_path, capsys):
        rc, out, _ = run(capsys,
                         ["passivity", write_doc(tmp_path, pr_doc(True))])
        assert rc == 0
        assert json.loads(out)["verdict"] is True

    def test_active_system_exits_three(self, tmp_path, capsys):
        rc, out, _ = run(capsys,
                         ["passivity", write_doc(tmp_path, pr_doc(False))])
        assert rc == 3
        res = json.loads(out)
        assert res["verdict"] is False
        assert res["minus_infinity"] is True

    def test_passivity_d_zero_is_input_error(self, tmp_path, capsys):
        doc = pr_doc(True)
        doc["system"]["D"] = [[0.0]]
        rc, _, err = run(capsys, ["passivity", write_doc(tmp_path, doc)])
        assert rc == 1
        assert err.startswith("error:")


class TestResultDocuments:
    def test_certificate_fields(self, tmp_path, capsys):
        rc, out, _ = run(capsys,
                         ["lqr", write_doc(tmp_path, lqr_doc(steps=128))])
        assert rc == 0
        res = json.loads(out)
        assert res["schema_version"] == "1"
        assert res["tool"]["name"] == "lqconic"
        assert res["variant"] == "lqr"
        assert res["grid"] == {"T": 1.0, "steps": 128}
        assert res["problem_sha256"] == problem_sha256(lqr_doc(steps=128))
        assert res["minus_infinity"] is False
        assert res["rank_ok"] is True
        assert res["duality_gap"] < 1e-4
        assert res["timing_seconds"] > 0
        gain = res["gain"]
        assert gain["m"] == 1 and gain["n"] == 1
        assert len(gain["nodes"]) == 129
        # node 0 of the optimal schedule is tanh(T)
        assert abs(gain["nodes"][0][0] - TANH1) < 1e-4

    def test_out_file_matches_stdout_shape(self, tmp_path, capsys):
        out_path = tmp_path / "res.json"
        rc, out, _ = run(capsys, ["lqr", write_doc(tmp_path, lqr_doc()),
                                  "--out", str(out_path)])
        assert rc == 0
        assert out == ""
        res = json.loads(out_path.read_text())
        assert res["kind"] == "certificate"

    def test_steps_flag_overrides_document(self, tmp_path, capsys):
        rc, out, _ = run(capsys, ["lqr", write_doc(tmp_path, lqr_doc(steps=64)),
                                  "--steps", "200"])
        assert rc == 0
        assert json.loads(out)["grid"]["steps"] == 200

    def test_slqr_value(self, tmp_path, capsys):
        rc, out, _ = run(capsys,
                         ["slqr", write_doc(tmp_path, slqr_doc(steps=512))])
        assert rc == 0
        res = json.loads(out)
        assert abs(res["optimal_value"] - LNCOSH1) < 1e-4

    def test_determinism_modulo_timing(self, tmp_path, capsys):
        path = write_doc(tmp_path, lqr_doc())
        _, out1, _ = run(capsys, ["lqr", path])
        _, out2, _ = run(capsys, ["lqr", path])
        a, b = json.loads(out1), json.loads(out2)
        a.pop("timing_seconds")
        b.pop("timing_seconds")
        assert a == b

    def test_hinf_document(self, tmp_path, capsys):
        rc, out, _ = run(capsys, ["hinf", write_doc(tmp_path, br_doc()),
                                  "--steps", "200", "--tol", "1e-3"])
        assert rc == 0
        res = json.loads(out)
        assert res["kind"] == "norm_result"
        assert res["bracket"][0] <= res["gamma_star"] <= res["bracket"][1]
        reference = convolution_norm(np.array([[-1.0]]), np.array([[1.0]]),
                                     np.array([[1.0]]), T=2.0, steps=800)
        assert abs(res["gamma_star"] - reference) < 0.02 * reference
        assert res["iterations"] > 0


class TestCsvExport:
    def test_gain_and_dual_round_trip_bitwise(self, tmp_path, capsys):
        csv_dir = tmp_path / "csv"
        rc, out, _ = run(capsys, ["lqr", write_doc(tmp_path, lqr_doc(steps=64)),
                                  "--csv-dir", str(csv_dir)])
        assert rc == 0
        res = json.loads(out)
        times, rows = load_trajectory_csv(csv_dir / "gain.csv")
        grid = TimeGrid(T=1.0, steps=64)
        assert np.array_equal(times, grid.times())
        flat_doc = np.array(res["gain"]["nodes"])
        assert np.array_equal(rows, flat_doc)

        times_l, rows_l = load_trajectory_csv(csv_dir / "dual.csv")
        assert len(times_l) == 65
        # dual trajectory of this problem is tanh(T - t)
        assert np.allclose(rows_l[:, 0], np.tanh(1.0 - times_l), atol=1e-4)

    def test_header_names_index_matrix_entries(self, tmp_path, capsys):
        csv_dir = tmp_path / "csv"
        doc = {
            "schema_version": "1",
            "system": {"A": [[0.0, 1.0], [0.0, 0.0]], "B": [[0.0], [1.0]]},
            "horizon": {"T": 1.0, "steps": 64},
            "variant": {"type": "lqr", "Q": [[1.0, 0.0], [0.0, 1.0]],
                        "R": [[1.0]], "x_i": [1.0, 0.0]},
        }
        rc, _, _ = run(capsys, ["lqr", write_doc(tmp_path, doc),
                                "--csv-dir", str(csv_dir)])
        assert rc == 0
        gain_header = (csv_dir / "gain.csv").read_text().split("\n")[0]
        assert gain_header == "t,k_0_0,k_0_1"
        dual_header = (csv_dir / "dual.csv").read_text().split("\n")[0]
        assert dual_header == "t,l_0_0,l_0_1,l_1_0,l_1_1"

    def test_escaped_nodes_are_skipped(self, tmp_path, capsys):
        csv_dir = tmp_path / "csv"
        rc, _, _ = run(capsys, ["iqc", write_doc(tmp_path, iqc_doc(steps=128)),
                                "--csv-dir", str(csv_dir)])
        assert rc == 2
        text = (csv_dir / "dual.csv").read_text()
        assert "nan" not in text.lower()
        lines = text.strip().split("\n")
        # escape near t = 0.43 of [0, 2]: only the valid tail is written
        assert 1 < len(lines) - 1 < 129
        times, _ = load_trajectory_csv(csv_dir / "dual.csv")
        assert times.min() > 0.4


class TestDriCloudCommand:
    def test_outputs_and_determinism(self, tmp_path, capsys):
        doc = lqr_doc(steps=128)
        doc["options"] = {"seed": 7}
        path = write_doc(tmp_path, doc)
        dirs = [tmp_path / "run_a", tmp_path / "run_b"]
        for d in dirs:
            rc, _, _ = run(capsys, ["dri-cloud", path, "--samples", "5",
                                    "--csv-dir", str(d)])
            assert rc == 0
        names = sorted(p.name for p in dirs[0].iterdir())
        assert names == ["dre.csv", "sample_000.csv", "sample_001.csv",
                         "sample_002.csv", "sample_003.csv", "sample_004.csv",
                         "summary.json"]
        for name in names:
            assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()

        summary = json.loads((dirs[0] / "summary.json").read_text())
        assert summary["kind"] == "dri_cloud_summary"
        assert summary["seed"] == 7
        assert summary["n_samples"] == 5
        assert summary["maximal"] is True
        assert summary["dre_escaped"] is False
        assert "timing_seconds" not in summary

    def test_seed_flag_beats_document(self, tmp_path, capsys):
        doc = lqr_doc(steps=128)
        doc["options"] = {"seed": 7}
        path = write_doc(tmp_path, doc)
        d = tmp_path / "out"
        rc, _, _ = run(capsys, ["dri-cloud", path, "--samples", "2",
                                "--seed", "11", "--csv-dir", str(d)])
        assert rc == 0
        assert json.loads((d / "summary.json").read_text())["seed"] == 11

    def test_rejects_norm_variants(self, tmp_path, capsys):
        rc, _, err = run(capsys, ["dri-cloud", write_doc(tmp_path, br_doc()),
                                  "--csv-dir", str(tmp_path / "o")])
        assert rc == 1
        assert "cost-bearing" in err


class TestVerifyCommand:
    def _solve(self, tmp_path, capsys, doc, cmd="lqr"):
        ppath = write_doc(tmp_path, doc)
        rpath = str(tmp_path / "result.json")
        rc, _, _ = run(capsys, [cmd, ppath, "--out", rpath])
        return ppath, rpath, rc

    def test_fresh_certificate_passes(self, tmp_path, capsys):
        ppath, rpath, _ = self._solve(tmp_path, capsys, lqr_doc(steps=128))
        rc, out, _ = run(capsys, ["verify", ppath, rpath])
        assert rc == 0
        assert out.strip().endswith("PASS")
        assert "ok   dual_feasible" in out
        assert "ok   value_match" in out

    def test_tampered_value_fails(self, tmp_path, capsys):
        ppath, rpath, _ = self._solve(tmp_path, capsys, lqr_doc(steps=128))
        res = json.loads(Path(rpath).read_text())
        res["optimal_value"] = 0.5
        res["dual_value"] = 0.5
        Path(rpath).write_text(json.dumps(res))
        rc, out, _ = run(capsys, ["verify", ppath, rpath])
        assert rc == 4
        assert "FAIL value_match" in out
        assert out.strip().endswith("FAIL")

    def test_tampered_gain_fails_alignment(self, tmp_path, capsys):
        ppath, rpath, _ = self._solve(tmp_path, capsys, lqr_doc(steps=128))
        res = json.loads(Path(rpath).read_text())
        res["gain"]["nodes"] = [[0.0] for _ in res["gain"]["nodes"]]
        Path(rpath).write_text(json.dumps(res))
        rc, out, _ = run(capsys, ["verify", ppath, rpath])
        assert rc == 4
        assert "FAIL alignment" in out

    def test_problem_hash_mismatch(self, tmp_path, capsys):
        ppath, rpath, _ = self._solve(tmp_path, capsys, lqr_doc(steps=128))
        other = write_doc(tmp_path, lqr_doc(steps=128, x0=2.0), "other.json")
        rc, _, err = run(capsys, ["verify", other, rpath])
        assert rc == 1
        assert "hash mismatch" in err

    def test_escape_certificate_verifies(self, tmp_path, capsys):
        ppath, rpath, rc0 = self._solve(tmp_path, capsys, iqc_doc(steps=256),
                                        cmd="iqc")
        assert rc0 == 2
        rc, out, _ = run(capsys, ["verify", ppath, rpath])
        assert rc == 0
        assert "escape_confirmed" in out
        assert out.strip().endswith("PASS")

    def test_result_missing_field(self, tmp_path, capsys):
        ppath, rpath, _ = self._solve(tmp_path, capsys, lqr_doc(steps=128))
        res = json.loads(Path(rpath).read_text())
        del res["minus_infinity"]
        Path(rpath).write_text(json.dumps(res))
        rc, _, err = run(capsys, ["verify", ppath, rpath])
        assert rc == 1
        assert "minus_infinity" in err


class TestSchemaConformance:
    def test_problem_documents_validate(self):
        schema = load_schema("problem.schema.json")
        validator = jsonschema.Draft202012Validator(schema)
        for doc in (lqr_doc(), slqr_doc(), iqc_doc(), br_doc(),
                    pr_doc(True), pr_doc(False)):
            validator.validate(doc)

    def test_problem_schema_rejects_bad_documents(self):
        schema = load_schema("problem.schema.json")
        validator = jsonschema.Draft202012Validator(schema)
        bad = lqr_doc()
        bad["schema_version"] = "0"
        assert not validator.is_valid(bad)
        bad = lqr_doc()
        del bad["system"]
        assert not validator.is_valid(bad)

    def test_emitted_results_validate(self, tmp_path, capsys):
        schema = load_schema("result.schema.json")
        validator = jsonschema.Draft202012Validator(schema)
        runs = [
            (["lqr", write_doc(tmp_path, lqr_doc(), "p1.json")], 0),
            (["slqr", write_doc(tmp_path, slqr_doc(), "p2.json")], 0),
            (["iqc", write_doc(tmp_path, iqc_doc(), "p3.json")], 2),
            (["hinf", write_doc(tmp_path, br_doc(), "p4.json"),
              "--tol", "1e-2"], 0),
            (["passivity", write_doc(tmp_path, pr_doc(False), "p5.json")], 3),
        ]
        for argv, want_rc in runs:
            rc, out, _ = run(capsys, argv)
            assert rc == want_rc
            validator.validate(json.loads(out))

    def test_dri_cloud_summary_validates(self, tmp_path, capsys):
        schema = load_schema("result.schema.json")
        validator = jsonschema.Draft202012Validator(schema)
        d = tmp_path / "cloud"
        rc, _, _ = run(capsys, ["dri-cloud", write_doc(tmp_path, lqr_doc(128)),
                                "--samples", "2", "--csv-dir", str(d)])
        assert rc == 0
        validator.validate(json.loads((d / "summary.json").read_text()))
