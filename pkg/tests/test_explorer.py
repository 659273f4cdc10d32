import json
import math

import numpy as np
import pytest

from mdc_mapper_errors import InfeasibleError, StyleError
from mdc_mapper_explorer import (BaselineStyle, SearchGoal, baseline_ratios, constrained_baseline,
                                 decoupled_optimize, geomean, representative_orders, roofline_comparison,
                                 roofline_peak, style_constraints)
from mdc_mapper_space import validate_mapping
from mdc_mapper_workloads import Conv2dParams, GemmParams, load_workload_file, make_conv1d, make_conv2d, make_gemm


@pytest.fixture(scope="module")
def search(gemm_small, tiny_hw):
    return decoupled_optimize(gemm_small, tiny_hw)


def test_best_per_goal(search, gemm_small, tiny_hw):
    assert set(search.best) == {"runtime", "energy", "edp"}
    for goal, cand in search.best.items():
        assert validate_mapping(cand.mapping, gemm_small, tiny_hw) == []
        assert cand.report.macs == gemm_small.macs
    runtime = search.for_goal(SearchGoal.RUNTIME).report
    energy = search.for_goal("energy").report
    assert runtime.runtime_seconds <= energy.runtime_seconds
    assert energy.energy <= runtime.energy
    assert search.plan.t3 == (4, 4, 4)
    assert search.evaluated >= search.onchip_tiles > 0


def test_workers_give_identical_json(gemm_small, tiny_hw):
    serial = decoupled_optimize(gemm_small, tiny_hw, workers=1)
    parallel = decoupled_optimize(gemm_small, tiny_hw, workers=2)
    assert json.dumps(serial.to_dict(), sort_keys=True) == json.dumps(parallel.to_dict(), sort_keys=True)


def test_timing_is_optional(search):
    assert "search_seconds" not in search.to_dict()
    assert search.to_dict(include_time=True)["search_seconds"] >= 0


def test_goal_subset(gemm_small, tiny_hw):
    result = decoupled_optimize(gemm_small, tiny_hw, goals=["energy"])
    assert list(result.best) == ["energy"]


@pytest.mark.parametrize("style", [BaselineStyle.WEIGHT_STATIONARY, BaselineStyle.DMAZE_LIKE,
                                   BaselineStyle.INTERSTELLAR_LIKE])
def test_decoupled_search_dominates_styles(search, gemm_small, tiny_hw, style):
    theirs = constrained_baseline(gemm_small, tiny_hw, style)
    assert theirs.style == style.value
    ours_rt = search.for_goal("runtime").report.runtime_seconds
    assert ours_rt <= theirs.for_goal("runtime").report.runtime_seconds
    assert search.for_goal("energy").report.energy <= theirs.for_goal("energy").report.energy
    ratios = baseline_ratios(search, theirs)
    assert ratios["speedup"] >= 1 and ratios["energy_reduction"] >= 1


def test_style_limits_parallel_loops(gemm_small, tiny_hw):
    result = constrained_baseline(gemm_small, tiny_hw, "dmaze_like")
    for cand in result.best.values():
        assert [n for n, t in zip(gemm_small.iterator_names, cand.mapping.t2) if t > 1] in ([], ["n"])


def test_style_constraints_on_conv2d():
    nest = make_conv2d(Conv2dParams(K=4, C=4, P=4, Q=4, R=3, S=3))
    parallel, closing = style_constraints(nest, BaselineStyle.ROW_STATIONARY)
    assert parallel == frozenset({"r", "p"})
    assert closing == frozenset({"q"})
    parallel, closing = style_constraints(nest, BaselineStyle.WEIGHT_STATIONARY)
    assert parallel == frozenset({"k", "c"})
    assert closing == frozenset({"k", "c", "r", "s"})


def test_style_without_matching_loops(gemm_small):
    with pytest.raises(StyleError):
        style_constraints(gemm_small, BaselineStyle.ROW_STATIONARY)
    with pytest.raises(StyleError):
        constrained_baseline(make_conv1d(6, 3), None, "output_stationary")


def test_unknown_style():
    with pytest.raises(ValueError):
        BaselineStyle("systolic_magic")


def test_infeasible_l1(gemm_small, tiny_hw):
    with pytest.raises(InfeasibleError):
        decoupled_optimize(gemm_small, tiny_hw.with_overrides(l1_bytes=2))


def test_utilization_bound_is_relaxed_when_unreachable(tiny_hw):
    nest = make_gemm(GemmParams(1, 1, 1))
    result = decoupled_optimize(nest, tiny_hw.with_overrides(utilization_bound=1.0))
    assert result.utilization_relaxed
    assert result.for_goal("runtime").report.macs == 1


def test_roofline_presets(gemm_small, p1, p2):
    assert roofline_peak(gemm_small, p1).peak_gops == pytest.approx(67.2)
    assert roofline_peak(gemm_small, p2).peak_gops == pytest.approx(409.6)


def test_roofline_bounds(gemm_small, p1):
    peak = roofline_peak(gemm_small, p1)
    assert peak.arithmetic_intensity == pytest.approx(128 / 48)
    assert peak.compute_seconds == pytest.approx(128 / 67.2e9)
    assert peak.bandwidth_seconds == pytest.approx(48 / 2.4e9)
    assert peak.bound == "bandwidth"
    assert peak.runtime_seconds == peak.bandwidth_seconds


def test_roofline_comparison(search, gemm_small, tiny_hw):
    report = search.for_goal("runtime").report
    row = roofline_comparison(gemm_small, tiny_hw, report)
    assert row["achieved_gops"] == report.throughput_gops
    assert 0 < row["efficiency"] <= 1


def test_representative_orders():
    names = ("m", "n", "k")
    assert representative_orders(names, (2, 1, 2)) == [("m", "n", "k"), ("n", "k", "m")]
    assert representative_orders(names, (1, 1, 1)) == [names]
    assert representative_orders(names, (2, 2, 2), frozenset({"k"})) == [("m", "n", "k"), ("n", "m", "k")]


def test_geomean():
    assert geomean([1, 4, 16]) == pytest.approx(4)
    assert math.isnan(geomean([]))


def _at_least_roofline(nest, hw, result):
    bound = roofline_peak(nest, hw)
    for cand in result.best.values():
        report = cand.report
        assert report.runtime_seconds >= bound.compute_seconds * (1 - 1e-12)
        assert report.runtime_seconds >= bound.bandwidth_seconds * (1 - 1e-12)


def test_no_candidate_beats_the_roofline(search, gemm_small, tiny_hw):
    _at_least_roofline(gemm_small, tiny_hw, search)
    for style in (BaselineStyle.WEIGHT_STATIONARY, BaselineStyle.DMAZE_LIKE, BaselineStyle.INTERSTELLAR_LIKE):
        _at_least_roofline(gemm_small, tiny_hw, constrained_baseline(gemm_small, tiny_hw, style))
    conv = make_conv1d(8, 3)
    _at_least_roofline(conv, tiny_hw, decoupled_optimize(conv, tiny_hw))


def test_dmaze_falls_back_to_longest_loop():
    ncf = make_gemm(GemmParams(2048, 1, 128), name="NCF-1")
    parallel, closing = style_constraints(ncf, BaselineStyle.DMAZE_LIKE)
    assert parallel == frozenset({"m"})
    assert closing == frozenset()
    tied = make_gemm(GemmParams(4, 1, 4))
    assert style_constraints(tied, BaselineStyle.DMAZE_LIKE)[0] == frozenset({"m"})
    with pytest.raises(StyleError):
        style_constraints(make_gemm(GemmParams(1, 1, 1)), BaselineStyle.DMAZE_LIKE)
    for style in (BaselineStyle.ROW_STATIONARY, BaselineStyle.OUTPUT_STATIONARY):
        with pytest.raises(StyleError):
            style_constraints(ncf, style)


@pytest.fixture(scope="module")
def ncf1():
    return next(n for n in load_workload_file("gemm") if n.name == "NCF-1")


@pytest.fixture(scope="module")
def ncf1_search(ncf1, p1):
    return decoupled_optimize(ncf1, p1)


@pytest.mark.parametrize("style", [BaselineStyle.WEIGHT_STATIONARY, BaselineStyle.INTERSTELLAR_LIKE,
                                   BaselineStyle.DMAZE_LIKE])
def test_decoupled_search_dominates_styles_on_ncf1(ncf1, ncf1_search, p1, style):
    theirs = constrained_baseline(ncf1, p1, style)
    assert not theirs.utilization_relaxed
    ours = ncf1_search
    assert ours.for_goal("runtime").report.runtime_seconds <= theirs.for_goal("runtime").report.runtime_seconds
    assert ours.for_goal("energy").report.energy <= theirs.for_goal("energy").report.energy
    _at_least_roofline(ncf1, p1, theirs)


def test_ncf1_search_respects_roofline(ncf1, ncf1_search, p1):
    _at_least_roofline(ncf1, p1, ncf1_search)


@pytest.mark.parametrize("seed", range(10))
def test_search_is_deterministic(tiny_hw, seed):
    rng = np.random.default_rng(seed)
    m, n, k = (int(v) for v in rng.choice([1, 2, 3, 4, 6, 8], size=3))
    nest = make_gemm(GemmParams(m, n, k), name=f"gemm_{seed}")
    first = decoupled_optimize(nest, tiny_hw, workers=1).to_dict()
    again = decoupled_optimize(nest, tiny_hw, workers=1).to_dict()
    pooled = decoupled_optimize(nest, tiny_hw, workers=2).to_dict()
    assert json.dumps(first, sort_keys=True) == json.dumps(again, sort_keys=True)
    assert json.dumps(first, sort_keys=True) == json.dumps(pooled, sort_keys=True)
