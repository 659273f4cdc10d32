import io
import json

import pytest

from mdc_mapper_config import save_accelerator
from mdc_mapper_launcher import RunConfig, build_parser, run_cli
from mdc_mapper_loopnest import to_raw
from mdc_mapper_reports import save_mapping
from mdc_mapper_space import Mapping, default_layout
from mdc_mapper_workloads import make_multicell_lstm


@pytest.fixture
def workload(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps({"workloads": [{"name": "tiny_gemm", "kind": "gemm", "M": 4, "N": 4, "K": 4}]}))
    return str(path)


@pytest.fixture
def accelerator(tmp_path, tiny_hw):
    path = tmp_path / "tiny_hw.json"
    save_accelerator(tiny_hw, path)
    return str(path)


def _run(*argv):
    out = io.StringIO()
    code = run_cli(list(argv), out)
    return code, out.getvalue()


def test_parser_defaults():
    config = RunConfig.from_args(build_parser().parse_args(["optimize", "w.json"]))
    assert config.accelerator == "p1"
    assert config.goals == ("runtime", "energy", "edp")
    assert config.flags.factor_tiles and config.flags.utilization
    assert config.workers == 1


def test_check_suite_json():
    code, text = _run("check", "--suite", "--format", "json")
    assert code == 0
    rows = json.loads(text)
    assert any(r["failing_rules"] == ["R2"] for r in rows)
    assert any(r["verdict"] == "conformable" for r in rows)


def test_check_custom_entry(tmp_path):
    path = tmp_path / "cells.json"
    path.write_text(json.dumps({"workloads": [{**to_raw(make_multicell_lstm(3, 4, 8)), "kind": "custom"}]}))
    code, text = _run("check", str(path), "--format", "csv")
    assert code == 0
    header, row = text.splitlines()
    assert header.startswith("operator,conformable")
    assert row.startswith("multicell_lstm,N,")
    assert ",R2," in row


def test_transform_prints_program(workload, accelerator):
    code, text = _run("transform", workload, "-a", accelerator)
    assert code == 0
    assert text.startswith("# C[m][n] += A[m][k] * B[k][n]\n")
    assert "TemporalMap" in text


def test_cost_of_mapping_file(tmp_path, workload, accelerator, gemm_small):
    mapping = Mapping((1, 1, 1), (2, 2, 1), ("m", "n", "k"), (4, 4, 4), ("m", "n", "k"), default_layout(gemm_small))
    path = tmp_path / "m.json"
    save_mapping(mapping, path)
    code, text = _run("cost", workload, "-a", accelerator, "--mapping", str(path), "--format", "json")
    assert code == 0
    report = json.loads(text)
    assert report["macs"] == 64
    assert report["dram_tile"] == [4, 4, 4]


def test_optimize_json_is_worker_independent(workload, accelerator):
    code1, one = _run("optimize", workload, "-a", accelerator, "--format", "json", "--goals", "runtime")
    code2, two = _run("optimize", workload, "-a", accelerator, "--format", "json", "--goals", "runtime",
                      "--workers", "2")
    assert code1 == code2 == 0
    assert one == two
    assert list(json.loads(one)["results"][0]["best"]) == ["runtime"]


def test_verify_matches(workload, accelerator):
    code, text = _run("verify", workload, "-a", accelerator, "--format", "json", "--seed", "3")
    assert code == 0
    diff = json.loads(text)
    assert diff["match"] is True
    assert diff["fields"]["macs"]["oracle"] == 64


def test_roofline_preset():
    code, text = _run("roofline", "gemm", "--operator", "GNMT-1", "--format", "json")
    assert code == 0
    assert json.loads(text)["peak_gops"] == pytest.approx(67.2)


def test_baseline_records_inapplicable_styles(workload, accelerator):
    code, text = _run("baseline", workload, "-a", accelerator, "--format", "json",
                      "--styles", "weight_stationary", "row_stationary")
    assert code == 0
    data = json.loads(text)
    styles = data["operators"][0]["styles"]
    assert "error" in styles["row_stationary"]
    assert styles["weight_stationary"]["ratios"]["speedup"] >= 1
    assert set(data["geomean"]) == {"weight_stationary"}


def test_space_size_table(workload, accelerator):
    code, text = _run("space-size", workload, "-a", accelerator)
    assert code == 0
    assert "tiny_gemm" in text
    assert "geomean" in text


@pytest.mark.parametrize("argv, code", [
    (["check", "no_such_workload"], 2),
    (["roofline", "gemm", "-a", "p9"], 2),
    (["roofline", "gemm", "--operator", "nope"], 2),
    (["optimize"], 2),
    (["frobnicate"], 2),
])
def test_exit_codes(argv, code, capsys):
    assert run_cli(argv, io.StringIO()) == code
    assert capsys.readouterr().err


def test_infeasible_exit_code(tmp_path, workload, tiny_hw, capsys):
    path = tmp_path / "cramped.json"
    save_accelerator(tiny_hw.with_overrides(l2_bytes=2), path)
    assert run_cli(["optimize", workload, "-a", str(path)], io.StringIO()) == 3
    assert "mdc-mapper optimize:" in capsys.readouterr().err


def test_single_operator_needed(tmp_path, accelerator, capsys):
    path = tmp_path / "two.json"
    path.write_text(json.dumps({"workloads": [{"name": "a", "kind": "gemm", "M": 2, "N": 2, "K": 2},
                                              {"name": "b", "kind": "gemm", "M": 2, "N": 2, "K": 2}]}))
    assert run_cli(["transform", str(path), "-a", accelerator], io.StringIO()) == 2
    assert "--operator" in capsys.readouterr().err


def test_log_directory_is_created(mapper_home):
    _run("check", "--suite")
    assert (mapper_home / "logs").is_dir()
