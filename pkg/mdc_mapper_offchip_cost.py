"""
MDC Mapper: Off-chip Cost
Distinct-block locality model, level-3 tile and layout search, and the
derivative-based level-3 loop order.
"""

import itertools
import logging
import math
from collections import abc
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Dict, List, Mapping as MappingT, Optional, Sequence, Tuple, Union

import numpy as np
import sympy as sp

from mdc_mapper_config import AcceleratorConfig, DbMode, PruningFlags
from mdc_mapper_errors import InfeasibleError
from mdc_mapper_loopnest import LoopNest, Subscript, TensorRef, check_tile, tensor_footprint_matrix
from mdc_mapper_space import Layout, divisors, tile_candidates

logger = logging.getLogger(__name__)

# beyond this many level-3 candidates the search falls back to divisors for large extents
MAX_EXHAUSTIVE_CANDIDATES = 20_000_000
_LARGE_EXTENT = 64

LayoutLike = Union[Layout, MappingT[str, int]]


@dataclass(frozen=True)
class OffchipPlan:
    t3: Tuple[int, ...]
    layout: Layout
    order3: Tuple[str, ...]
    dmc: float
    derivatives: Tuple[Tuple[str, float], ...] = ()
    block_elements: int = 1
    candidates_evaluated: int = 0
    # loops whose level-3 tiles were limited to divisors because the space exceeded the cap
    divisor_only_loops: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "t3": list(self.t3),
            "layout": dict(self.layout),
            "order3": list(self.order3),
            "dmc": self.dmc,
            "derivatives": dict(self.derivatives),
            "block_elements": self.block_elements,
            "candidates_evaluated": self.candidates_evaluated,
            "divisor_only_loops": list(self.divisor_only_loops),
        }


def block_elements(nest: LoopNest, hw: AcceleratorConfig) -> int:
    """DRAM block size in elements."""
    return max(1, hw.dram_block_bytes // nest.bytes_per_element)


def _innermost(layout: LayoutLike, tensor: str, rank: int) -> int:
    pos = dict(layout).get(tensor, rank - 1)
    if not 0 <= pos < rank:
        raise ValueError(f"Layout puts dimension {pos} of '{tensor}' innermost but it has {rank} dims.")
    return pos


def _dim_extent(sub: Subscript, t3: MappingT[str, int], mode: DbMode) -> int:
    if mode == DbMode.SUMMED and len(sub.terms) > 1:
        return sum(abs(c) * t3[name] for name, c in sub.terms)
    return sub.span(t3)


def distinct_blocks(ref: TensorRef, t3: MappingT[str, int], layout: LayoutLike, b: int,
                    mode: DbMode = DbMode.EXACT, absent_loop_factor: bool = True) -> int:
    """DRAM blocks one reference touches in a level-3 tile.

    t3 maps every loop of the nest to its tile size; loops missing from the
    reference multiply the count when absent_loop_factor is set.
    """
    if b < 1:
        raise ValueError(f"Block size must be >= 1, got {b}.")
    inner = _innermost(layout, ref.tensor, len(ref.dims))
    count = 1
    for pos, sub in enumerate(ref.subscripts):
        extent = _dim_extent(sub, t3, mode)
        count *= -(-extent // b) if pos == inner else extent
    if absent_loop_factor:
        used = set(ref.iterators)
        count *= math.prod(size for name, size in t3.items() if name not in used)
    return count


def _dmc_exact(nest: LoopNest, t3: MappingT[str, int], layout: LayoutLike, b: int,
               mode: DbMode, absent_loop_factor: bool) -> Fraction:
    blocks = sum(distinct_blocks(ref, t3, layout, b, mode, absent_loop_factor) for ref in nest.body_refs)
    return Fraction(blocks, math.prod(t3[n] for n in nest.iterator_names))


def data_movement_cost(nest: LoopNest, t3: Union[Sequence[int], MappingT[str, int]], layout: LayoutLike,
                       b: int, flags: Optional[PruningFlags] = None) -> float:
    """Blocks per iteration: every reference's distinct blocks over the tile's iteration count."""
    flags = flags or PruningFlags()
    sizes = dict(t3) if isinstance(t3, abc.Mapping) else dict(zip(nest.iterator_names, t3))
    check_tile(nest, sizes)
    return float(_dmc_exact(nest, sizes, layout, b, flags.db_mode, flags.absent_loop_factor))


# --- level-3 search ---

def _candidate_lists(nest: LoopNest, flags: PruningFlags) -> Tuple[List[List[int]], Tuple[str, ...]]:
    """Per-loop level-3 tile candidates and the loops that were cut back to divisors."""
    cands = [tile_candidates(it.extent, flags) for it in nest.iterators]
    if math.prod(len(c) for c in cands) <= MAX_EXHAUSTIVE_CANDIDATES:
        return cands, ()
    restricted = tuple(it.name for it, c in zip(nest.iterators, cands)
                       if it.extent > _LARGE_EXTENT and len(c) > len(divisors(it.extent)))
    if restricted:
        logger.warning(f"Level-3 space of '{nest.name}' exceeds {MAX_EXHAUSTIVE_CANDIDATES} tiles; "
                       f"restricting {list(restricted)} to divisor tiles")
    cands = [divisors(it.extent) if it.name in restricted else c for it, c in zip(nest.iterators, cands)]
    return cands, restricted


def _extent_matrix(sub: Subscript, tiles: np.ndarray, index: Dict[str, int], mode: DbMode) -> np.ndarray:
    if mode == DbMode.SUMMED and len(sub.terms) > 1:
        total = np.zeros(tiles.shape[0], dtype=np.int64)
        for name, c in sub.terms:
            total = total + abs(c) * tiles[:, index[name]]
        return total
    total = np.ones(tiles.shape[0], dtype=np.int64)
    for name, c in sub.terms:
        total = total + abs(c) * (tiles[:, index[name]] - 1)
    return total


def _blocks_by_position(nest: LoopNest, tensor: str, tiles: np.ndarray, b: int,
                        flags: PruningFlags) -> np.ndarray:
    """Summed blocks of the tensor's references, one column per innermost-dimension choice."""
    index = {name: k for k, name in enumerate(nest.iterator_names)}
    refs = nest.refs_of(tensor)
    rank = len(refs[0].dims)
    out = np.zeros((tiles.shape[0], rank), dtype=np.int64)
    for ref in refs:
        extents = [_extent_matrix(sub, tiles, index, flags.db_mode) for sub in ref.subscripts]
        absent = np.ones(tiles.shape[0], dtype=np.int64)
        if flags.absent_loop_factor:
            for name in nest.iterator_names:
                if name not in ref.iterators:
                    absent = absent * tiles[:, index[name]]
        for inner in range(rank):
            col = absent.copy()
            for pos, ext in enumerate(extents):
                col = col * (-(-ext // b) if pos == inner else ext)
            out[:, inner] += col
    return out


def optimize_offchip(nest: LoopNest, hw: AcceleratorConfig, flags: Optional[PruningFlags] = None) -> OffchipPlan:
    flags = flags or PruningFlags()
    names = nest.iterator_names
    b = block_elements(nest, hw)
    cands, restricted = _candidate_lists(nest, flags)
    total = math.prod(len(c) for c in cands)

    best_key = None
    best: Optional[Tuple[Tuple[int, ...], Layout]] = None
    chunk = 1 << 18
    product_iter = itertools.product(*cands)
    evaluated = 0
    while True:
        rows = list(itertools.islice(product_iter, chunk))
        if not rows:
            break
        tiles = np.asarray(rows, dtype=np.int64).reshape(len(rows), len(names))
        footprint = sum(tensor_footprint_matrix(nest, tiles).values())
        feasible = 2 * footprint * nest.bytes_per_element <= hw.l2_bytes
        if not feasible.any():
            continue
        tiles = tiles[feasible]
        evaluated += tiles.shape[0]
        blocks = np.zeros(tiles.shape[0], dtype=np.int64)
        choice = []
        for tensor in nest.tensors:
            per_pos = _blocks_by_position(nest, tensor, tiles, b, flags)
            pick = np.argmin(per_pos, axis=1)
            blocks += per_pos[np.arange(tiles.shape[0]), pick]
            choice.append(pick)
        iterations = np.prod(tiles, axis=1)
        dmc = blocks / iterations
        near = np.flatnonzero(dmc <= dmc.min() * (1 + 1e-9))
        for k in near:
            exact = Fraction(int(blocks[k]), int(iterations[k]))
            key = (exact, -int(iterations[k]), tuple(int(x) for x in tiles[k]))
            if best_key is None or key < best_key:
                best_key = key
                best = (key[2], tuple((t, int(c[k])) for t, c in zip(nest.tensors, choice)))

    if best is None:
        raise InfeasibleError(f"No level-3 tile of '{nest.name}' fits the {hw.l2_bytes} B L2 buffer "
                              f"with double buffering.")
    t3, layout = best
    plan = OffchipPlan(t3=t3, layout=layout, order3=names, dmc=float(best_key[0]),
                       block_elements=b, candidates_evaluated=evaluated)
    derivs = loop_derivatives(nest, plan, flags)
    plan = OffchipPlan(t3=t3, layout=layout, order3=_order_from_derivatives(nest, t3, derivs),
                       dmc=plan.dmc, derivatives=tuple((n, float(derivs[n])) for n in names),
                       block_elements=b, candidates_evaluated=evaluated, divisor_only_loops=restricted)
    logger.info(f"Off-chip plan for '{nest.name}': t3={list(t3)} layout={dict(layout)} "
                f"order3={list(plan.order3)} dmc={plan.dmc:.6g} ({evaluated}/{total} candidates fit L2)")
    return plan


# --- level-3 loop order ---

def loop_derivatives(nest: LoopNest, plan: OffchipPlan, flags: Optional[PruningFlags] = None) -> Dict[str, sp.Rational]:
    """Slope of the smoothed data-movement cost with respect to each level-3 tile size, at plan.t3."""
    flags = flags or PruningFlags()
    names = nest.iterator_names
    syms = {n: sp.Symbol(f"T_{n}", positive=True) for n in names}
    b = sp.Integer(plan.block_elements)
    expr = sp.Integer(0)
    for ref in nest.body_refs:
        inner = _innermost(plan.layout, ref.tensor, len(ref.dims))
        term = sp.Integer(1)
        for pos, sub in enumerate(ref.subscripts):
            if flags.db_mode == DbMode.SUMMED and len(sub.terms) > 1:
                ext = sum(abs(c) * syms[n] for n, c in sub.terms)
            else:
                ext = 1 + sum(abs(c) * (syms[n] - 1) for n, c in sub.terms)
            term *= ext / b if pos == inner else ext
        if flags.absent_loop_factor:
            for n in names:
                if n not in ref.iterators:
                    term *= syms[n]
        expr += term
    expr = expr / sp.Mul(*syms.values())
    point = {syms[n]: sp.Integer(t) for n, t in zip(names, plan.t3)}
    return {n: sp.Rational(sp.diff(expr, syms[n]).subs(point)) for n in names}


def _order_from_derivatives(nest: LoopNest, t3: Sequence[int], derivs: MappingT[str, Any]) -> Tuple[str, ...]:
    names = nest.iterator_names

    def key(n: str):
        k = names.index(n)
        slope = sp.Rational(derivs[n])
        return (-Fraction(int(slope.p), int(slope.q)), Fraction(nest.extent_of(n), t3[k]), k)

    return tuple(sorted(names, key=key))


def derive_loop_order(nest: LoopNest, plan: OffchipPlan, flags: Optional[PruningFlags] = None) -> Tuple[str, ...]:
    """Outermost first; the most negative slope ends up innermost."""
    if len(nest.iterators) == 1:
        return nest.iterator_names
    return _order_from_derivatives(nest, plan.t3, loop_derivatives(nest, plan, flags))


def dram_traffic(nest: LoopNest, t3: Sequence[int], layout: LayoutLike, hw: AcceleratorConfig,
                 flags: Optional[PruningFlags] = None) -> Dict[str, Dict[str, int]]:
    """Bytes read from and written to DRAM per reference over the whole problem."""
    flags = flags or PruningFlags()
    sizes = dict(zip(nest.iterator_names, t3))
    b = block_elements(nest, hw)
    tiles = math.prod(-(-it.extent // sizes[it.name]) for it in nest.iterators)
    traffic: Dict[str, Dict[str, int]] = {}
    for idx, ref in enumerate(nest.body_refs):
        blocks = distinct_blocks(ref, sizes, layout, b, flags.db_mode, flags.absent_loop_factor)
        volume = blocks * tiles * hw.dram_block_bytes
        label = ref_label(nest, idx)
        traffic[label] = {"read": volume if ref.is_read else 0, "write": volume if ref.is_written else 0}
    return traffic


def ref_label(nest: LoopNest, index: int) -> str:
    """Stable name of a reference; repeated renderings get an @index suffix."""
    text = nest.body_refs[index].render()
    if sum(1 for r in nest.body_refs if r.render() == text) > 1:
        return f"{text}@{index}"
    return text
