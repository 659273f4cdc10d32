import numpy as np
import pytest

from mdc_mapper_config import PruningFlags
from mdc_mapper_errors import ScaleError
from mdc_mapper_notation import parse_mdc, transform_to_mdc
from mdc_mapper_oracle import compare_with_model, exact_distinct_blocks, simulate_mdc_reference
from mdc_mapper_space import Mapping, default_layout, divisors, enumerate_onchip
from mdc_mapper_workloads import GemmParams, make_conv1d, make_gemm

TWO_PE_PROGRAM = "SpatialMap(1,1) d_O\nTemporalMap(2,2) d_W\n"


def test_two_pe_windows(tiny_hw, conv1d_two_pe):
    trace = simulate_mdc_reference(parse_mdc(TWO_PE_PROGRAM), conv1d_two_pe, tiny_hw.with_overrides(num_pes=2))
    assert trace.num_steps == 3
    first, second = trace.steps[0], trace.steps[1]
    assert first.pe_points[(0,)] == {(0, 0), (0, 1)}
    assert first.pe_points[(1,)] == {(1, 0), (1, 1)}
    assert second.pe_points[(0,)] == {(0, 2), (0, 3)}
    assert second.pe_points[(1,)] == {(1, 2), (1, 3)}
    assert trace.covers_exactly_once(conv1d_two_pe)
    assert trace.active_pe_steps == 6


def test_two_pe_fetch_totals(tiny_hw, conv1d_two_pe):
    trace = simulate_mdc_reference(parse_mdc(TWO_PE_PROGRAM), conv1d_two_pe, tiny_hw.with_overrides(num_pes=2))
    totals = trace.totals()
    assert totals["W[i1]"] == {"l1_fills": 12, "neighbor_forwarded": 0, "l2_unique": 6, "l2_direct": 12}
    assert totals["I[i0 + i1]"]["l2_unique"] == 7


def test_idle_pes_are_annotated(tiny_hw):
    nest = make_conv1d(3, 2)
    trace = simulate_mdc_reference(parse_mdc("SpatialMap(1,1) d_O\nTemporalMap(2,2) d_W\n"), nest,
                                   tiny_hw.with_overrides(num_pes=2))
    assert trace.num_steps == 2
    assert "idle" in trace.steps[1].annotations
    assert trace.covers_exactly_once(nest)


def test_unit_block_counts_elements():
    nest = make_gemm(GemmParams(4, 4, 4))
    ref = nest.refs_of("A")[0]
    assert exact_distinct_blocks(ref, {"m": 3, "n": 2, "k": 4}, {"A": 1}, 1) == 12


def test_whole_row_blocks_count_rows():
    nest = make_gemm(GemmParams(4, 8, 4))
    ref = nest.refs_of("C")[0]
    assert exact_distinct_blocks(ref, {"m": 4, "n": 8, "k": 4}, {"C": 1}, 8) == 4


def test_tile_origin_shifts_blocks():
    nest = make_conv1d(16, 4)
    ref = nest.refs_of("O")[0]
    assert exact_distinct_blocks(ref, {"i0": 4, "i1": 1}, {"O": 0}, 4) == 1
    assert exact_distinct_blocks(ref, {"i0": 4, "i1": 1}, {"O": 0}, 4, origin={"i0": 2}) == 2


def _random_mdcs(nest, hw, rng, count, flags=None, t3=None, order3=None):
    t3 = t3 or tuple(it.extent for it in nest.iterators)
    order3 = order3 or nest.iterator_names
    stream = list(enumerate_onchip(nest, hw, t3, flags))
    for k in rng.choice(len(stream), size=min(count, len(stream)), replace=False):
        order2, t2, t1 = stream[int(k)]
        yield transform_to_mdc(Mapping(t1, t2, order2, t3, order3, default_layout(nest)), nest)


@pytest.mark.parametrize("nest, flags", [
    (make_gemm(GemmParams(4, 4, 4)), PruningFlags()),
    (make_conv1d(6, 3), PruningFlags()),
    (make_conv1d(5, 4), PruningFlags(factor_tiles=False)),
    (make_gemm(GemmParams(3, 4, 2)), PruningFlags(factor_tiles=False)),
], ids=["gemm", "conv1d", "conv1d-ragged", "gemm-ragged"])
def test_model_agrees_with_simulator(tiny_hw, nest, flags):
    rng = np.random.default_rng(7)
    for mdc in _random_mdcs(nest, tiny_hw, rng, 35, flags):
        diff = compare_with_model(mdc, nest, tiny_hw)
        mismatched = [k for k, f in diff["fields"].items() if not f["match"]]
        assert diff["match"], mismatched
        trace = simulate_mdc_reference(mdc, nest, tiny_hw)
        assert trace.covers_exactly_once(nest)


@pytest.mark.parametrize("nest", [make_gemm(GemmParams(4, 4, 4)), make_conv1d(6, 3)], ids=["gemm", "conv1d"])
def test_model_agrees_on_tiled_nests(tiny_hw, no_utilization, nest):
    rng = np.random.default_rng(11)
    names = nest.iterator_names
    for _ in range(6):
        t3 = tuple(int(rng.choice(divisors(it.extent)[:-1] or [it.extent])) for it in nest.iterators)
        order3 = tuple(names[int(k)] for k in rng.permutation(len(names)))
        for mdc in _random_mdcs(nest, tiny_hw, rng, 6, no_utilization, t3, order3):
            diff = compare_with_model(mdc, nest, tiny_hw)
            assert diff["match"], [k for k, f in diff["fields"].items() if not f["match"]]
            assert simulate_mdc_reference(mdc, nest, tiny_hw).covers_exactly_once(nest)


def test_model_agrees_without_multicast(tiny_hw):
    nest = make_conv1d(6, 3)
    hw = tiny_hw.with_overrides(multicast=False)
    for mdc in _random_mdcs(nest, hw, np.random.default_rng(3), 15):
        assert compare_with_model(mdc, nest, hw)["match"]


def test_tile_guard():
    nest = make_gemm(GemmParams(10_000, 10_000, 1))
    with pytest.raises(ScaleError):
        exact_distinct_blocks(nest.refs_of("C")[0], {"m": 10_000, "n": 10_000, "k": 1}, {"C": 1}, 1)


def test_mac_guard(tiny_hw):
    nest = make_gemm(GemmParams(128, 128, 128))
    mdc = parse_mdc("TemporalMap(1,1) M\nTemporalMap(1,1) N\nTemporalMap(1,1) K\n")
    with pytest.raises(ScaleError):
        simulate_mdc_reference(mdc, nest, tiny_hw)


def test_pe_guard(tiny_hw, conv1d_two_pe):
    with pytest.raises(ScaleError):
        simulate_mdc_reference(parse_mdc(TWO_PE_PROGRAM), conv1d_two_pe, tiny_hw.with_overrides(num_pes=128))
