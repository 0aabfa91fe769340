import json
import os

import pytest
from click.testing import CliRunner

from manage import cli

MODEL = "config/models/two_point_b2.json"


def _invoke(*args):
    result = CliRunner().invoke(cli, list(args))
    return result, json.loads(result.output)


def test_calibrate_two_point(tmp_path):
    result, payload = _invoke("calibrate", "--family", "two_point", "--b", "2", "--output-dir", str(tmp_path))
    assert result.exit_code == 0
    assert payload["rho"] == pytest.approx(1.3169579, abs=1e-7)
    assert payload["params"]["p"] == pytest.approx(0.0669873, abs=1e-7)
    assert payload["regime"] == "critical"
    assert os.path.exists(tmp_path / "calibrate.json")


def test_walk_writes_csv_with_header(tmp_path):
    result, payload = _invoke("walk", "--model", MODEL, "--seed", "1", "--start", "3", "--lower", "0",
                              "--upper", "9", "--reps", "200", "--output-dir", str(tmp_path))
    assert result.exit_code == 0
    assert payload["exact_top_probability"] == pytest.approx(4 / 11, abs=1e-12)
    assert len(payload["config_hash"]) == 64
    with open(tmp_path / "walk.csv", encoding="utf-8") as f:
        lines = f.read().splitlines()
    assert lines[0] == f"# kbrw {payload['version']} config={payload['config_hash'][:16]}"
    assert lines[1].split(",") == ["exit", "steps", "overshoot", "undershoot", "green_top", "green_bottom"]
    assert len(lines) == 202


def test_missing_seed_is_a_validation_error(tmp_path):
    result, payload = _invoke("walk", "--model", MODEL, "--start", "3", "--lower", "0", "--upper", "9",
                              "--output-dir", str(tmp_path))
    assert result.exit_code == 2
    assert payload["error"] == "ParameterError"


def test_start_above_top_level_exits_two(tmp_path):
    result, payload = _invoke("brw", "--model", MODEL, "--seed", "0", "--x", "5", "--k", "3", "--reps", "5",
                              "--output-dir", str(tmp_path))
    assert result.exit_code == 2
    assert payload["exit_code"] == 2


def test_brw_counts(tmp_path):
    result, payload = _invoke("brw", "--model", MODEL, "--seed", "3", "--reps", "50", "--output-dir", str(tmp_path))
    assert result.exit_code == 0
    assert payload["leaf_identity_holds"] is True
    assert os.path.exists(tmp_path / "brw.csv")


def test_tail_max_exact(tmp_path):
    result, payload = _invoke("tail-max", "--model", MODEL, "--grid", "2,4,6", "--exact",
                              "--output-dir", str(tmp_path))
    assert result.exit_code == 0
    assert payload["kind"] == "M"


def test_tail_z_is_reproducible(tmp_path):
    args = ("tail-z", "--model", MODEL, "--seed", "5", "--grid", "1,10", "--reps", "300")
    _invoke(*args, "--output-dir", str(tmp_path / "one"))
    _invoke(*args, "--workers", "2", "--output-dir", str(tmp_path / "two"))
    with open(tmp_path / "one" / "tail-z.csv", encoding="utf-8") as f:
        one = f.read()
    with open(tmp_path / "two" / "tail-z.csv", encoding="utf-8") as f:
        two = f.read()
    assert one == two


def test_green_grid(tmp_path):
    result, payload = _invoke("green", "--model", MODEL, "--grid", "10,20,40", "--output-dir", str(tmp_path))
    assert result.exit_code == 0
    assert set(payload["band_ratio"]) == {"path0tok", "pathktok", "pathkto0"}
    assert all(r <= 2.0 for r in payload["band_ratio"].values())


def test_bad_caps_json_is_rejected(tmp_path):
    result = CliRunner().invoke(cli, ["brw", "--model", MODEL, "--seed", "0", "--caps", "[1]",
                                      "--output-dir", str(tmp_path)])
    assert result.exit_code == 2


def test_model_file_missing_family_params_exits_two(tmp_path):
    bad = tmp_path / "bad_model.json"
    bad.write_text(json.dumps({"family": "two_point", "params": {}, "b": 2}))
    result, payload = _invoke("brw", "--model", str(bad), "--seed", "0", "--reps", "5",
                              "--output-dir", str(tmp_path / "out"))
    assert result.exit_code == 2
    assert payload["error"] == "ValidationError"
    assert "missing p" in payload["message"]
