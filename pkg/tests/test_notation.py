import numpy as np
import pytest

from mdc_mapper_errors import MdcParseError, TransformError
from mdc_mapper_loopnest import Subscript, tensor_footprint
from mdc_mapper_notation import (DirectiveKind, MdcMapping, Region, SpatialMap, TemporalMap, dependent_extent,
                                 parse_mdc, pe_tile_volumes, render_mdc, transform_to_mdc, validate_mdc)
from mdc_mapper_space import Mapping, default_layout, enumerate_onchip
from mdc_mapper_workloads import GemmParams, make_conv1d, make_gemm, make_pooling


def _mapping(nest, t1, t2, t3=None, order2=None):
    names = nest.iterator_names
    t3 = t3 or tuple(it.extent for it in nest.iterators)
    return Mapping(t1=t1, t2=t2, order2=order2 or names, t3=t3, order3=names, layout=default_layout(nest))


def test_conv1d_transform_regions():
    nest = make_conv1d(2, 6)
    mdc = transform_to_mdc(_mapping(nest, (1, 2), (1, 3)), nest)
    assert len(mdc.regions) == 4
    level3, level2, parallel, point = mdc.outermost_first
    assert level3.directives == (TemporalMap(2, 2, "d_O"), TemporalMap(6, 6, "d_W"))
    assert level2.directives == (TemporalMap(1, 1, "d_O"), TemporalMap(6, 6, "d_W"))
    assert parallel.spatial == SpatialMap(2, 2, "d_W")
    assert parallel.cluster == 1
    assert point.directives == (TemporalMap(1, 1, "d_O"), TemporalMap(2, 2, "d_W"))
    assert point.cluster is None


def test_region_count_follows_parallel_loops():
    nest = make_gemm(GemmParams(4, 4, 4))
    serial = transform_to_mdc(_mapping(nest, (1, 1, 1), (1, 1, 1)), nest)
    assert len(serial.regions) == 3
    assert all(r.spatial is None for r in serial.regions)

    two = transform_to_mdc(_mapping(nest, (1, 1, 2), (2, 2, 1)), nest)
    assert len(two.regions) == 5
    outer_parallel, inner_parallel = two.outermost_first[2:4]
    assert outer_parallel.spatial.dim_var == "M"
    assert outer_parallel.cluster == 2
    assert outer_parallel.directive_for("N") == TemporalMap(2, 2, "N")
    assert inner_parallel.spatial.dim_var == "N"
    assert inner_parallel.directive_for("M") == TemporalMap(1, 1, "M")
    assert inner_parallel.cluster == 1


def test_level2_order_is_kept():
    nest = make_gemm(GemmParams(4, 4, 4))
    mdc = transform_to_mdc(_mapping(nest, (1, 1, 1), (1, 1, 1), order2=("k", "m", "n")), nest)
    assert [d.dim_var for d in mdc.outermost_first[1].directives] == ["K", "M", "N"]


def test_non_conformable_or_unowned_loops_are_rejected():
    pool = make_pooling(C=2, P=4, Q=4, R=2, S=2)
    m = _mapping(pool, (1,) * 5, (1,) * 5)
    with pytest.raises(TransformError):
        transform_to_mdc(m, pool)


def test_mismatched_mapping_is_rejected():
    nest = make_gemm(GemmParams(4, 4, 4))
    with pytest.raises(TransformError):
        transform_to_mdc(Mapping((1, 1), (1, 1), ("m", "n"), (4, 4), ("m", "n"), ()), nest)


def test_render_then_parse_is_identity():
    nest = make_gemm(GemmParams(4, 4, 4))
    mdc = transform_to_mdc(_mapping(nest, (1, 2, 1), (2, 1, 4)), nest)
    text = render_mdc(mdc)
    assert text.startswith("# C[m][n] += A[m][k] * B[k][n]\n")
    assert parse_mdc(text) == mdc
    assert render_mdc(parse_mdc(text)) == text


def test_random_transforms_are_consistent(tiny_hw):
    rng = np.random.default_rng(11)
    for nest in (make_gemm(GemmParams(4, 4, 4)), make_conv1d(6, 3)):
        t3 = tuple(it.extent for it in nest.iterators)
        stream = list(enumerate_onchip(nest, tiny_hw, t3))
        for k in rng.choice(len(stream), size=min(50, len(stream)), replace=False):
            order2, t2, t1 = stream[int(k)]
            mdc = transform_to_mdc(Mapping(t1, t2, order2, t3, nest.iterator_names, default_layout(nest)), nest)
            assert validate_mdc(mdc, nest) == []
            assert pe_tile_volumes(mdc, nest) == tensor_footprint(nest, dict(zip(nest.iterator_names, t1)))
            text = render_mdc(mdc)
            assert render_mdc(parse_mdc(text)) == text


def test_parse_fig2_program():
    mdc = parse_mdc("SpatialMap(1,1) d_O\nTemporalMap(2,2) d_W\n")
    assert len(mdc.regions) == 1
    assert mdc.regions[0].spatial == SpatialMap(1, 1, "d_O")
    assert mdc.computation == ""
    assert mdc.dim_vars == ("d_O", "d_W")


def test_parse_keeps_statement_comment():
    mdc = parse_mdc("# O[i0] += W[i1] * I[i0 + i1]\n\nTemporalMap(2,2) d_O\nCluster(2)\n  SpatialMap(1,1) d_W\n")
    assert mdc.computation == "O[i0] += W[i1] * I[i0 + i1]"
    assert [r.cluster for r in mdc.outermost_first] == [2, None]


@pytest.mark.parametrize("text, line", [
    ("TemporalMap(1,1) d_O\nCluster(0)\nTemporalMap(1,1) d_O\n", 2),
    ("TemporalMap(0,1) d_O\n", 1),
    ("TemporalMap(1,1) d_O\nSpatialMap(1,1) d_W\nSpatialMap(1,1) d_I\n", 3),
    ("TemporalMap(1,1) d_O\nTemporalMap(2,2) d_O\n", 2),
    ("Cluster(2)\nTemporalMap(1,1) d_O\n", 1),
    ("TemporalMap(1,1) d_O\nTileMap(1,1) d_W\n", 2),
    ("TemporalMap(1,1) d_O\nCluster(2)\n", 2),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(MdcParseError) as info:
        parse_mdc(text)
    assert info.value.line == line


def test_validate_flags_unknown_dims():
    nest = make_conv1d(6, 3)
    bad = MdcMapping("", (Region((TemporalMap(1, 1, "d_I"),)),))
    assert any("d_I" in v for v in validate_mdc(bad, nest))
    trailing = MdcMapping("", (Region((TemporalMap(1, 1, "d_O"),), cluster=2),))
    assert validate_mdc(trailing, nest) == ["innermost region must not be followed by a Cluster"]


def test_dependent_extent():
    assert dependent_extent(Subscript((("i0", 1), ("i1", 1))), {"i0": 2, "i1": 3}) == 4
    assert dependent_extent(Subscript((("i0", 2), ("i1", 1))), {"i0": 3, "i1": 3}) == 7
    assert dependent_extent(Subscript((), 5), {}) == 1


def test_directive_render():
    assert TemporalMap(2, 2, "d_W").render() == "TemporalMap(2,2) d_W"
    assert SpatialMap(1, 1, "d_O").kind == DirectiveKind.SPATIAL
