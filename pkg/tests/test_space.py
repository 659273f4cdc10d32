import itertools

import pytest

from mdc_mapper_config import PruningFlags, load_accelerator
from mdc_mapper_loopnest import normalize, tensor_footprint
from mdc_mapper_space import (Mapping, SpaceStats, aggregate_space_stats, all_layouts, count_onchip_tiles,
                              default_layout, divisors, enumerate_onchip, iter_onchip_tiles, original_space_count,
                              space_size, tile_candidates, validate_mapping)
from mdc_mapper_workloads import GemmParams, load_workload_file, make_conv1d, make_gemm

CNN_MODELS = ("alexnet", "vgg16", "resnet50", "mobilenetv2")


def _single_loop(extent):
    return normalize({"name": f"line{extent}", "loops": [{"name": "i", "upper": extent}],
                      "refs": [{"tensor": "O", "direction": "write", "dims": [["d_O", "i"]]},
                               {"tensor": "A", "direction": "read", "dims": [["d_A", "i"]]}]})


def _gemm_mapping(nest, t1, t2, t3):
    return Mapping(t1=t1, t2=t2, order2=("m", "n", "k"), t3=t3, order3=("m", "n", "k"),
                   layout=default_layout(nest))


def test_divisors_and_candidates():
    assert divisors(12) == [1, 2, 3, 4, 6, 12]
    assert tile_candidates(5, PruningFlags()) == [1, 5]
    assert tile_candidates(5, PruningFlags(factor_tiles=False)) == [1, 2, 3, 4, 5]


def test_layouts():
    nest = make_gemm(GemmParams(2, 2, 2))
    assert len(all_layouts(nest)) == 8
    assert default_layout(nest) == (("C", 1), ("A", 1), ("B", 1))


def test_mapping_round_trip():
    nest = make_gemm(GemmParams(8, 8, 8))
    m = _gemm_mapping(nest, (1, 2, 4), (2, 2, 1), (8, 4, 8))
    assert Mapping.from_dict(m.to_dict()) == m
    assert m.t2_block == (2, 4, 4)
    assert m.parallel_degree == 4


def test_low_utilization_is_flagged(p1):
    nest = make_gemm(GemmParams(16, 16, 16))
    m = _gemm_mapping(nest, (1, 1, 1), (4, 4, 1), (16, 16, 16))
    violations = validate_mapping(m, nest, p1)
    assert len(violations) == 1
    assert violations[0].startswith("(d)")
    assert validate_mapping(m, nest, p1, PruningFlags(utilization=False)) == []


def test_l1_fit_boundary(p1):
    # 200 elements of level-1 footprint, doubled to 400 bytes
    nest = make_gemm(GemmParams(10, 10, 10))
    m = _gemm_mapping(nest, (5, 10, 10), (1, 1, 1), (10, 10, 10))
    assert sum(tensor_footprint(nest, {"m": 5, "n": 10, "k": 10}).values()) == 200
    assert not any(v.startswith("(c)") for v in validate_mapping(m, nest, p1))


def test_degenerate_mapping_is_valid(p1):
    nest = make_gemm(GemmParams(4, 4, 4))
    m = _gemm_mapping(nest, (1, 1, 1), (1, 1, 1), (4, 4, 4))
    assert validate_mapping(m, nest, p1, PruningFlags(utilization=False)) == []


@pytest.mark.parametrize("m, tag", [
    (Mapping((1, 1, 1), (1, 1, 1), ("m", "n", "k"), (4, 4, 4), ("m", "n"), (("C", 1), ("A", 1), ("B", 1))),
     "structure"),
    (Mapping((2, 1, 1), (3, 1, 1), ("m", "n", "k"), (4, 4, 4), ("m", "n", "k"), (("C", 1), ("A", 1), ("B", 1))),
     "(a)"),
    (Mapping((1, 1, 1), (2, 2, 2), ("m", "n", "k"), (4, 4, 4), ("m", "n", "k"), (("C", 1), ("A", 1), ("B", 1))),
     "(e)"),
    (Mapping((1, 1, 1), (1, 1, 1), ("m", "n", "k"), (3, 4, 4), ("m", "n", "k"), (("C", 1), ("A", 1), ("B", 1))),
     "(f)"),
])
def test_violation_kinds(tiny_hw, m, tag):
    nest = make_gemm(GemmParams(4, 4, 4))
    hw = tiny_hw.with_overrides(max_parallel_loops=2)
    violations = validate_mapping(m, nest, hw, PruningFlags(utilization=False))
    assert any(v.startswith(tag) for v in violations), violations


@pytest.mark.parametrize("flags", [PruningFlags(), PruningFlags(factor_tiles=False),
                                   PruningFlags(utilization=False)])
def test_enumeration_matches_brute_force(tiny_hw, flags):
    nest = make_gemm(GemmParams(4, 4, 2))
    t3 = (4, 4, 2)
    names = nest.iterator_names
    layout = default_layout(nest)
    expected = set()
    ranges = [range(1, c + 1) for c in t3]
    for order2 in itertools.permutations(names):
        for t2 in itertools.product(*ranges):
            for t1 in itertools.product(*ranges):
                m = Mapping(t1, t2, order2, t3, names, layout)
                if not validate_mapping(m, nest, tiny_hw, flags):
                    expected.add((order2, t2, t1))
    stream = list(enumerate_onchip(nest, tiny_hw, t3, flags))
    assert len(stream) == len(set(stream))
    assert set(stream) == expected
    assert count_onchip_tiles(nest, tiny_hw, t3, flags) * 6 == len(stream)


def test_enumeration_order_is_deterministic(tiny_hw):
    nest = make_conv1d(4, 2)
    first = list(enumerate_onchip(nest, tiny_hw, (4, 2)))
    assert first == list(enumerate_onchip(nest, tiny_hw, (4, 2)))
    half = len(first) // 2
    assert [o for o, _, _ in first] == [("i0", "i1")] * half + [("i1", "i0")] * half


def test_factor_pruning_divides_parent_levels(tiny_hw):
    nest = make_gemm(GemmParams(8, 4, 2))
    for t2, t1 in iter_onchip_tiles(nest, tiny_hw, (8, 4, 2)):
        for a, b, c in zip(t1, t2, (8, 4, 2)):
            assert c % (a * b) == 0


def test_unit_extent_gives_one_mapping(tiny_hw):
    nest = _single_loop(1)
    assert list(enumerate_onchip(nest, tiny_hw, (1,))) == [(("i",), (1,), (1,))]


def test_prime_extent_cannot_fill_the_array(p1):
    hw = p1.with_overrides(utilization_bound=1.0)
    nest = _single_loop(7)
    assert list(enumerate_onchip(nest, hw, (7,))) == []
    assert count_onchip_tiles(nest, hw, (7,)) == 0


def test_space_size_unit_extent(tiny_hw):
    stats = space_size(_single_loop(1), tiny_hw)
    assert (stats.original_count, stats.offchip_count, stats.onchip_count) == (1, 1, 1)


def test_pruning_shrinks_the_space(tiny_hw):
    nest = make_gemm(GemmParams(8, 8, 8))
    pruned = space_size(nest, tiny_hw, PruningFlags(), t3=(8, 8, 8))
    full = space_size(nest, tiny_hw, PruningFlags(factor_tiles=False, utilization=False), t3=(8, 8, 8))
    assert pruned.original_count == full.original_count
    assert pruned.offchip_count < full.offchip_count
    assert pruned.onchip_count <= full.onchip_count
    assert pruned.reduction > 1


def test_aggregate_space_stats():
    stats = [SpaceStats(offchip_count=10, onchip_count=90, original_count=1000),
             SpaceStats(offchip_count=1, onchip_count=9, original_count=1000)]
    summary = aggregate_space_stats(stats)
    assert summary["original_count"] == {"min": 1000.0, "avg": 1000.0, "max": 1000.0}
    assert summary["reduction"]["min"] == pytest.approx(10)
    assert summary["reduction"]["max"] == pytest.approx(100)
    assert summary["reduction"]["geomean"] == pytest.approx(31.6227766)


def test_original_count_is_the_full_cartesian_product():
    nest = make_gemm(GemmParams(4, 4, 4))
    # three divisors of 4 per level and iterator, 3! orders at two levels, 2*2*2 layouts
    assert original_space_count(nest) == (3 ** 3) ** 3 * 6 * 6 * 8


def test_original_count_ignores_pruning_flags(tiny_hw):
    nest = make_gemm(GemmParams(6, 4, 2))
    loose = PruningFlags(factor_tiles=False, utilization=False)
    assert space_size(nest, tiny_hw, loose, t3=(6, 4, 2)).original_count == original_space_count(nest)
    assert space_size(nest, tiny_hw, t3=(6, 4, 2)).original_count == original_space_count(nest)


def test_cnn_suite_reduction():
    p1 = load_accelerator("p1")
    stats = [space_size(nest, p1) for model in CNN_MODELS for nest in load_workload_file(model)]
    assert len(stats) == 64
    summary = aggregate_space_stats(stats)
    assert 1e17 <= summary["original_count"]["avg"] <= 1e20
    assert summary["reduction"]["geomean"] >= 1e8
