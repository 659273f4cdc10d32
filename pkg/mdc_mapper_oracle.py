"""
MDC Mapper: Oracle
Brute-force references for the distinct-block count and for directive
execution. Set based and slow on purpose; only for desk-scale problems.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, FrozenSet, List, Mapping, Optional, Set, Tuple

from mdc_mapper_config import AcceleratorConfig
from mdc_mapper_errors import AnalysisError, ScaleError
from mdc_mapper_loopnest import LoopNest, TensorRef
from mdc_mapper_notation import DirectiveKind, MdcMapping, iterator_dims
from mdc_mapper_offchip_cost import ref_label

logger = logging.getLogger(__name__)

MAX_TILE_POINTS = 10 ** 7
MAX_SIM_MACS = 10 ** 6
MAX_SIM_PES = 64

Pe = Tuple[int, ...]
Point = Tuple[int, ...]


def exact_distinct_blocks(ref: TensorRef, t3: Mapping[str, int], layout: Mapping[str, int], b: int,
                          origin: Optional[Mapping[str, int]] = None, absent_loop_factor: bool = False) -> int:
    """Unique DRAM block ids touched by one reference over a level-3 tile."""
    if math.prod(t3.values()) > MAX_TILE_POINTS:
        raise ScaleError(f"Tile of {math.prod(t3.values())} iterations exceeds the {MAX_TILE_POINTS} guard.")
    origin = origin or {}
    inner = dict(layout).get(ref.tensor, len(ref.dims) - 1)
    names = list(ref.iterators)
    ranges = [range(origin.get(n, 0), origin.get(n, 0) + t3[n]) for n in names]
    blocks: Set[Tuple] = set()
    for values in itertools.product(*ranges):
        point = dict(zip(names, values))
        index = [sub.value(point) for sub in ref.subscripts]
        blocks.add((tuple(v for k, v in enumerate(index) if k != inner), index[inner] // b))
    count = len(blocks)
    if absent_loop_factor:
        count *= math.prod(size for n, size in t3.items() if n not in names)
    return count


@dataclass
class StepRecord:
    index: int
    pe_points: Dict[Pe, FrozenSet[Point]]
    fetches: Dict[str, Dict[str, int]] = field(default_factory=dict)
    compute_cycles: int = 0
    transfer_cycles: int = 0
    annotations: Tuple[str, ...] = ()


@dataclass
class SimTrace:
    steps: List[StepRecord]
    num_pes: int
    latency_cycles: int = 0

    @property
    def num_steps(self) -> int:
        return len(self.steps)

    @property
    def active_pe_steps(self) -> int:
        return sum(len(s.pe_points) for s in self.steps)

    @property
    def total_macs(self) -> int:
        return sum(len(points) for s in self.steps for points in s.pe_points.values())

    def covers_exactly_once(self, nest: LoopNest) -> bool:
        seen: Set[Point] = set()
        for s in self.steps:
            for points in s.pe_points.values():
                if seen & points:
                    return False
                seen |= points
        return len(seen) == nest.macs

    def totals(self) -> Dict[str, Dict[str, int]]:
        out: Dict[str, Dict[str, int]] = {}
        for s in self.steps:
            for label, counts in s.fetches.items():
                bucket = out.setdefault(label, {})
                for key, value in counts.items():
                    bucket[key] = bucket.get(key, 0) + value
        return out


def _walk(mdc: MdcMapping, nest: LoopNest, hw: AcceleratorConfig):
    """Leaf-by-leaf windows: yields {pe: {iterator: range}} with empty ranges for idle PEs."""
    dims = iterator_dims(nest)
    owner = {d: n for n, d in dims.items()}
    loops = []
    fanouts: List[int] = []
    remaining = hw.num_pes
    for region in mdc.outermost_first:
        for d in region.directives:
            if d.kind == DirectiveKind.SPATIAL:
                width = region.cluster if region.cluster and region.cluster > 1 else remaining
                if width < 1 or width > remaining:
                    raise AnalysisError(f"{d.render()} needs {width} PEs but only {remaining} remain.")
                loops.append((owner[d.dim_var], d.size, d.offset, len(fanouts), width))
                fanouts.append(width)
                remaining //= width
            else:
                loops.append((owner[d.dim_var], d.size, d.offset, None, 1))
    pes = list(itertools.product(*[range(f) for f in fanouts]))
    if len(pes) > MAX_SIM_PES:
        raise ScaleError(f"{len(pes)} PEs exceed the {MAX_SIM_PES} guard.")

    def windows_count(window: range, size: int, offset: int) -> int:
        return 1 + max(0, -(-(len(window) - size) // offset))

    def rec(level: int, state: Dict[Pe, Dict[str, range]]):
        if level == len(loops):
            yield state
            return
        it, size, offset, axis, width = loops[level]
        counts = {}
        for pe, win in state.items():
            busy = all(len(r) > 0 for r in win.values())
            counts[pe] = windows_count(win[it], size, offset) if busy else 0
        if axis is None:
            trips = max(counts.values())
        else:
            trips = math.ceil(max(counts.values()) / width)
        for k in range(trips):
            nxt = {}
            for pe, win in state.items():
                q = k if axis is None else k * width + pe[axis]
                new = dict(win)
                if q < counts[pe]:
                    lo = win[it].start + q * offset
                    new[it] = range(lo, min(lo + size, win[it].stop))
                else:
                    new[it] = range(0)
                nxt[pe] = new
            yield from rec(level + 1, nxt)

    root = {pe: {n: range(nest.extent_of(n)) for n in nest.iterator_names} for pe in pes}
    return rec(0, root)


def simulate_mdc_reference(mdc: MdcMapping, nest: LoopNest, hw: AcceleratorConfig) -> SimTrace:
    if nest.macs > MAX_SIM_MACS:
        raise ScaleError(f"'{nest.name}' has {nest.macs} MACs; the simulator stops at {MAX_SIM_MACS}.")
    if hw.num_pes > MAX_SIM_PES:
        raise ScaleError(f"{hw.num_pes} PEs exceed the {MAX_SIM_PES} guard.")
    leaves = _walk(mdc, nest, hw)
    names = nest.iterator_names
    labels = [ref_label(nest, i) for i in range(len(nest.body_refs))]
    per_pe_prev: List[Dict[Pe, Set[Tuple[int, ...]]]] = [{} for _ in nest.body_refs]
    union_prev: List[Set[Tuple[int, ...]]] = [set() for _ in nest.body_refs]
    bytes_per_cycle = hw.noc_bytes_per_cycle

    steps: List[StepRecord] = []
    for t, state in enumerate(leaves):
        pe_points: Dict[Pe, FrozenSet[Point]] = {}
        for pe, win in state.items():
            if all(len(win[n]) > 0 for n in names):
                pe_points[pe] = frozenset(itertools.product(*[win[n] for n in names]))
        annotations = []
        if len(pe_points) < len(state):
            annotations.append("idle")
        if len({len(p) for p in pe_points.values()}) > 1:
            annotations.append("edge")
        record = StepRecord(index=t, pe_points=pe_points, annotations=tuple(annotations))
        traffic = 0
        for r, ref in enumerate(nest.body_refs):
            current: Dict[Pe, Set[Tuple[int, ...]]] = {}
            for pe, points in pe_points.items():
                current[pe] = {tuple(sub.value(dict(zip(names, p))) for sub in ref.subscripts) for p in points}
            union = set().union(*current.values()) if current else set()
            fills = forwarded = 0
            for pe, held in current.items():
                new = held - per_pe_prev[r].get(pe, set())
                fills += len(new)
                forwarded += len(new & union_prev[r])
            unique = len(union - union_prev[r])
            direct = fills - forwarded
            record.fetches[labels[r]] = {"l1_fills": fills, "neighbor_forwarded": forwarded,
                                         "l2_unique": unique, "l2_direct": direct}
            traffic += (unique if hw.multicast else direct) + forwarded
            per_pe_prev[r] = current
            union_prev[r] = union
        record.compute_cycles = max((len(p) for p in pe_points.values()), default=0)
        record.transfer_cycles = math.ceil(Fraction(traffic * nest.bytes_per_element) / bytes_per_cycle)
        steps.append(record)

    latency = 0
    if steps:
        latency = steps[0].transfer_cycles + steps[-1].compute_cycles
        for prev, cur in zip(steps, steps[1:]):
            latency += max(prev.compute_cycles, cur.transfer_cycles)
    trace = SimTrace(steps=steps, num_pes=hw.num_pes, latency_cycles=latency)
    logger.debug(f"Simulated '{nest.name}': {trace.num_steps} steps, {trace.total_macs} MACs")
    return trace


def compare_with_model(mdc: MdcMapping, nest: LoopNest, hw: AcceleratorConfig) -> Dict[str, Any]:
    """Field-by-field diff of the analytical model against the simulator."""
    from mdc_mapper_onchip_cost import analyze_mapping

    report = analyze_mapping(mdc, nest, hw)
    trace = simulate_mdc_reference(mdc, nest, hw)
    fields: Dict[str, Dict[str, Any]] = {}

    def put(key: str, model: Any, oracle: Any) -> None:
        fields[key] = {"model": model, "oracle": oracle, "match": model == oracle}

    put("steps", report.steps, trace.num_steps)
    put("active_pe_steps", report.active_pe_steps, trace.active_pe_steps)
    put("macs", report.macs, trace.total_macs)
    put("latency_cycles", report.latency_cycles, trace.latency_cycles)
    totals = trace.totals()
    for label, counts in totals.items():
        for key, value in counts.items():
            put(f"{label}.{key}", report.access_counts[label][key], value)
    match = all(f["match"] for f in fields.values())
    if not match:
        logger.warning(f"Model and simulator disagree on '{nest.name}': "
                       f"{[k for k, f in fields.items() if not f['match']]}")
    return {"name": nest.name, "match": match, "fields": fields}
