"""
MDC Mapper: Mapping Space
The six-aspect Mapping, hardware validation, on-chip subspace enumeration and
subspace cardinalities.
"""

import itertools
import logging
import math
from dataclasses import dataclass, asdict
from typing import Any, Callable, Dict, Iterator, List, Mapping as MappingT, Optional, Sequence, Tuple

import sympy as sp

from mdc_mapper_config import AcceleratorConfig, PruningFlags
from mdc_mapper_loopnest import LoopNest, tensor_footprint

logger = logging.getLogger(__name__)

Layout = Tuple[Tuple[str, int], ...]  # (tensor, position of its innermost dimension)


@dataclass(frozen=True)
class Mapping:
    """Per-iterator tuples follow nest order; orders list iterators outermost first."""
    t1: Tuple[int, ...]
    t2: Tuple[int, ...]
    order2: Tuple[str, ...]
    t3: Tuple[int, ...]
    order3: Tuple[str, ...]
    layout: Layout

    @property
    def t2_block(self) -> Tuple[int, ...]:
        return tuple(a * b for a, b in zip(self.t1, self.t2))

    @property
    def parallel_degree(self) -> int:
        return math.prod(self.t2)

    def sizes(self, nest: LoopNest, level: str) -> Dict[str, int]:
        values = {"t1": self.t1, "t2": self.t2, "t2_block": self.t2_block, "t3": self.t3}[level]
        return dict(zip(nest.iterator_names, values))

    def layout_dict(self) -> Dict[str, int]:
        return dict(self.layout)

    def encoding(self, nest: LoopNest) -> Tuple:
        names = nest.iterator_names
        return (self.t1, self.t2, tuple(names.index(n) for n in self.order2), self.t3,
                tuple(names.index(n) for n in self.order3), tuple(pos for _, pos in self.layout))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "t1": list(self.t1), "t2": list(self.t2), "order2": list(self.order2),
            "t3": list(self.t3), "order3": list(self.order3), "layout": dict(self.layout),
        }

    @classmethod
    def from_dict(cls, data: MappingT[str, Any]) -> "Mapping":
        layout = data.get("layout", {})
        return cls(
            t1=tuple(int(x) for x in data["t1"]),
            t2=tuple(int(x) for x in data["t2"]),
            order2=tuple(str(x) for x in data["order2"]),
            t3=tuple(int(x) for x in data["t3"]),
            order3=tuple(str(x) for x in data["order3"]),
            layout=tuple((str(k), int(v)) for k, v in layout.items()),
        )


@dataclass(frozen=True)
class SpaceStats:
    offchip_count: int
    onchip_count: int
    original_count: int

    @property
    def reduction(self) -> float:
        return self.original_count / max(1, self.offchip_count + self.onchip_count)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["reduction"] = self.reduction
        return data


# --- helpers ---

def divisors(n: int) -> List[int]:
    return sorted(int(d) for d in sp.divisors(n))


def tile_candidates(extent: int, flags: PruningFlags) -> List[int]:
    return divisors(extent) if flags.factor_tiles else list(range(1, extent + 1))


def all_layouts(nest: LoopNest) -> List[Layout]:
    ranks = [range(len(nest.tensor_shape(t))) for t in nest.tensors]
    return [tuple(zip(nest.tensors, combo)) for combo in itertools.product(*ranks)]


def default_layout(nest: LoopNest) -> Layout:
    """Row-major: every tensor's last dimension is innermost."""
    return tuple((t, len(nest.tensor_shape(t)) - 1) for t in nest.tensors)


def footprint_fits(nest: LoopNest, sizes: MappingT[str, int], capacity: int) -> bool:
    """Double-buffered footprint check."""
    return 2 * sum(tensor_footprint(nest, sizes).values()) * nest.bytes_per_element <= capacity


def validate_mapping(m: Mapping, nest: LoopNest, hw: AcceleratorConfig,
                     flags: Optional[PruningFlags] = None) -> List[str]:
    """Returns human-readable violations; an empty list means m is valid."""
    flags = flags or PruningFlags()
    names = nest.iterator_names
    n = len(names)
    violations: List[str] = []

    for label, vec in (("t1", m.t1), ("t2", m.t2), ("t3", m.t3)):
        if len(vec) != n:
            violations.append(f"structure: {label} has {len(vec)} entries for {n} iterators")
    for label, order in (("order2", m.order2), ("order3", m.order3)):
        if sorted(order) != sorted(names):
            violations.append(f"structure: {label} {list(order)} is not a permutation of {list(names)}")
    layout = m.layout_dict()
    if sorted(layout) != sorted(nest.tensors) or len(layout) != len(m.layout):
        violations.append(f"structure: layout must name each tensor of {list(nest.tensors)} once")
    else:
        for tensor, pos in layout.items():
            if not 0 <= pos < len(nest.tensor_shape(tensor)):
                violations.append(f"structure: layout position {pos} out of range for tensor '{tensor}'")
    if violations:
        return violations

    # (a) tile nesting
    nesting_ok = True
    for name, a, b, c in zip(names, m.t1, m.t2, m.t3):
        extent = nest.extent_of(name)
        if not (1 <= a and b >= 1 and a * b <= c <= extent):
            violations.append(f"(a) tiles of '{name}' violate 1 <= t1={a} <= t1*t2={a * b} <= t3={c} <= {extent}")
            nesting_ok = False
    if nesting_ok:
        # (b), (c) buffer capacities
        if not footprint_fits(nest, m.sizes(nest, "t3"), hw.l2_bytes):
            violations.append(f"(b) level-3 tile needs more than L2 ({hw.l2_bytes} B) with double buffering")
        if not footprint_fits(nest, m.sizes(nest, "t1"), hw.l1_bytes):
            violations.append(f"(c) level-1 tile needs more than L1 ({hw.l1_bytes} B) with double buffering")

    # (d) PE count and utilization
    degree = m.parallel_degree
    if degree > hw.num_pes:
        violations.append(f"(d) parallel degree {degree} exceeds {hw.num_pes} PEs")
    elif degree < _min_degree(hw, flags):
        violations.append(f"(d) utilization {degree}/{hw.num_pes} below bound {hw.utilization_bound}")

    # (e) number of parallel loops
    parallel = sum(1 for b in m.t2 if b > 1)
    if parallel > hw.max_parallel_loops:
        violations.append(f"(e) {parallel} parallel loops exceed the limit of {hw.max_parallel_loops}")

    # (f) divisor chains
    if flags.factor_tiles and nesting_ok:
        for name, a, blk, c in zip(names, m.t1, m.t2_block, m.t3):
            extent = nest.extent_of(name)
            if blk % a or c % blk or extent % c:
                violations.append(f"(f) tiles of '{name}' ({a}, {blk}, {c}, {extent}) are not a divisor chain")
    return violations


# --- on-chip enumeration ---

def _t2_candidates(t3: int, flags: PruningFlags) -> List[int]:
    return divisors(t3) if flags.factor_tiles else list(range(1, t3 + 1))


def _t1_candidates(t3: int, t2: int, flags: PruningFlags) -> List[int]:
    room = t3 // t2
    return divisors(room) if flags.factor_tiles else list(range(1, room + 1))


def _min_degree(hw: AcceleratorConfig, flags: PruningFlags) -> int:
    return math.ceil(hw.utilization_bound * hw.num_pes - 1e-9) if flags.utilization else 1


def iter_t2_vectors(nest: LoopNest, hw: AcceleratorConfig, t3: Sequence[int],
                    flags: PruningFlags,
                    allowed: Optional[Callable[[str, int], bool]] = None) -> Iterator[Tuple[int, ...]]:
    """Parallel-degree vectors in ascending lexicographic order."""
    names = nest.iterator_names
    lowest = _min_degree(hw, flags)
    cands = [_t2_candidates(t, flags) for t in t3]

    def rec(i: int, prefix: Tuple[int, ...], product: int, parallel: int):
        if i == len(names):
            if product >= lowest:
                yield prefix
            return
        for c in cands[i]:
            if product * c > hw.num_pes:
                break
            par = parallel + (c > 1)
            if par > hw.max_parallel_loops:
                continue
            if allowed is not None and c > 1 and not allowed(names[i], c):
                continue
            yield from rec(i + 1, prefix + (c,), product * c, par)

    yield from rec(0, (), 1, 0)


def iter_t1_vectors(nest: LoopNest, hw: AcceleratorConfig, t3: Sequence[int], t2: Sequence[int],
                    flags: PruningFlags) -> Iterator[Tuple[int, ...]]:
    """Level-1 tiles that fit L1, ascending lexicographic."""
    names = nest.iterator_names
    cands = [_t1_candidates(c, b, flags) for c, b in zip(t3, t2)]

    def rec(i: int, prefix: Tuple[int, ...]):
        if i == len(names):
            yield prefix
            return
        for c in cands[i]:
            bound = dict(zip(names, prefix + (c,) + (1,) * (len(names) - i - 1)))
            # footprints grow with every tile size, so a miss here rules out larger c too
            if not footprint_fits(nest, bound, hw.l1_bytes):
                break
            yield from rec(i + 1, prefix + (c,))

    yield from rec(0, ())


def iter_onchip_tiles(nest: LoopNest, hw: AcceleratorConfig, t3: Sequence[int],
                      flags: Optional[PruningFlags] = None,
                      allowed: Optional[Callable[[str, int], bool]] = None
                      ) -> Iterator[Tuple[Tuple[int, ...], Tuple[int, ...]]]:
    flags = flags or PruningFlags()
    for t2 in iter_t2_vectors(nest, hw, t3, flags, allowed):
        for t1 in iter_t1_vectors(nest, hw, t3, t2, flags):
            yield t2, t1


def enumerate_onchip(nest: LoopNest, hw: AcceleratorConfig, t3: Sequence[int],
                     flags: Optional[PruningFlags] = None
                     ) -> Iterator[Tuple[Tuple[str, ...], Tuple[int, ...], Tuple[int, ...]]]:
    """Stream of (order2, t2, t1): orders outermost, then parallel degrees, then level-1 tiles."""
    flags = flags or PruningFlags()
    t3 = tuple(t3)
    if flags.factor_tiles and any(nest.extent_of(n) % c for n, c in zip(nest.iterator_names, t3)):
        logger.warning(f"Level-3 tiles {t3} do not divide the loop bounds; on-chip space is empty.")
        return
    tiles = list(iter_onchip_tiles(nest, hw, t3, flags))
    for order2 in itertools.permutations(nest.iterator_names):
        for t2, t1 in tiles:
            yield order2, t2, t1


def count_onchip_tiles(nest: LoopNest, hw: AcceleratorConfig, t3: Sequence[int],
                       flags: Optional[PruningFlags] = None) -> int:
    """Number of valid (t2, t1) pairs without materializing them."""
    flags = flags or PruningFlags()
    names = nest.iterator_names
    t3 = tuple(t3)
    if flags.factor_tiles and any(nest.extent_of(n) % c for n, c in zip(names, t3)):
        return 0
    lowest = _min_degree(hw, flags)
    t1_cands = [(_t1_candidates(c, 1, flags)) for c in t3]
    total = 0

    # states map (product of t2, parallel loop count) -> number of t2 prefixes
    def extend(states: Dict[Tuple[int, int], int], t3_i: int, t1_i: int) -> Dict[Tuple[int, int], int]:
        nxt: Dict[Tuple[int, int], int] = {}
        room = t3_i // t1_i
        options = [b for b in _t2_candidates(t3_i, flags) if b <= room and (not flags.factor_tiles or room % b == 0)]
        for (product, parallel), count in states.items():
            for b in options:
                p2 = product * b
                if p2 > hw.num_pes:
                    break
                par = parallel + (b > 1)
                if par > hw.max_parallel_loops:
                    continue
                nxt[(p2, par)] = nxt.get((p2, par), 0) + count
        return nxt

    def rec(i: int, prefix: Tuple[int, ...], states: Dict[Tuple[int, int], int]):
        nonlocal total
        if not states:
            return
        if i == len(names):
            total += sum(c for (product, _), c in states.items() if product >= lowest)
            return
        for c in t1_cands[i]:
            bound = dict(zip(names, prefix + (c,) + (1,) * (len(names) - i - 1)))
            if not footprint_fits(nest, bound, hw.l1_bytes):
                break
            rec(i + 1, prefix + (c,), extend(states, t3[i], c))

    rec(0, (), {(1, 0): 1})
    return total


# --- cardinalities ---

def original_tile_choices(extent: int) -> int:
    """Level-1, level-2 and level-3 tile choices for one iterator, each a divisor of the bound."""
    return len(divisors(extent)) ** 3


def original_space_count(nest: LoopNest) -> int:
    """Cartesian product of the six mapping aspects; independent of pruning flags."""
    orders = math.factorial(len(nest.iterators))
    return (math.prod(original_tile_choices(it.extent) for it in nest.iterators)
            * orders * orders * len(all_layouts(nest)))


def space_size(nest: LoopNest, hw: AcceleratorConfig, flags: Optional[PruningFlags] = None,
               t3: Optional[Sequence[int]] = None) -> SpaceStats:
    """Subspace cardinalities. The on-chip count is taken at t3 (defaults to the off-chip optimum)."""
    flags = flags or PruningFlags()
    layouts = len(all_layouts(nest))
    orders = math.factorial(len(nest.iterators))

    original = original_space_count(nest)
    offchip = math.prod(len(tile_candidates(it.extent, flags)) for it in nest.iterators) * layouts
    if t3 is None:
        from mdc_mapper_offchip_cost import optimize_offchip
        t3 = optimize_offchip(nest, hw, flags).t3
    onchip = count_onchip_tiles(nest, hw, t3, flags) * orders
    stats = SpaceStats(offchip_count=offchip, onchip_count=onchip, original_count=original)
    logger.info(f"Space of '{nest.name}': original {original:.3e}, off-chip {offchip:.3e}, on-chip {onchip:.3e}")
    return stats


def aggregate_space_stats(stats: Sequence[SpaceStats]) -> Dict[str, Dict[str, float]]:
    """min/avg/max of each count over a workload suite."""
    summary: Dict[str, Dict[str, float]] = {}
    for key in ("original_count", "offchip_count", "onchip_count"):
        values = [getattr(s, key) for s in stats]
        summary[key] = {"min": float(min(values)), "avg": float(sum(values)) / len(values),
                        "max": float(max(values))}
    reductions = [s.reduction for s in stats]
    summary["reduction"] = {"min": min(reductions), "avg": sum(reductions) / len(reductions),
                            "max": max(reductions),
                            "geomean": math.exp(sum(math.log(r) for r in reductions) / len(reductions))}
    return summary
