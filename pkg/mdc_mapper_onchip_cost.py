"""
MDC Mapper: On-chip Cost
Analytical latency, energy, access-count and utilization model of a directive
program running in lockstep on the PE array.
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from mdc_mapper_config import AcceleratorConfig, EnergyProfile, PruningFlags
from mdc_mapper_errors import AnalysisError, TransformError
from mdc_mapper_loopnest import LoopNest, tensor_footprint
from mdc_mapper_notation import Directive, DirectiveKind, MdcMapping, iterator_dims, validate_mdc
from mdc_mapper_offchip_cost import dram_traffic, ref_label
from mdc_mapper_space import Layout, default_layout

logger = logging.getLogger(__name__)

# counter columns kept per reference
FILLS, FORWARDED, L2_UNIQUE, L2_DIRECT = range(4)

Geometry = Tuple[np.ndarray, np.ndarray]  # (window starts, window lengths), shape (dims, *grid)


@dataclass(frozen=True)
class CostReport:
    name: str
    latency_cycles: int
    runtime_seconds: float
    energy: float
    edp: float
    pe_utilization: float
    throughput_gops: float
    steps: int
    macs: int
    active_pe_steps: int
    access_counts: Dict[str, Dict[str, int]] = field(default_factory=dict)
    energy_breakdown: Dict[str, float] = field(default_factory=dict)
    l1_required_bytes: int = 0
    l2_required_bytes: int = 0
    dram_tile: Tuple[int, ...] = ()

    def goal_value(self, goal: str) -> float:
        if goal == "runtime":
            return self.runtime_seconds
        if goal == "energy":
            return self.energy
        if goal == "edp":
            return self.edp
        raise ValueError(f"Unknown goal '{goal}'")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "latency_cycles": self.latency_cycles,
            "runtime_seconds": self.runtime_seconds,
            "energy": self.energy,
            "edp": self.edp,
            "pe_utilization": self.pe_utilization,
            "throughput_gops": self.throughput_gops,
            "steps": self.steps,
            "macs": self.macs,
            "active_pe_steps": self.active_pe_steps,
            "access_counts": {k: dict(v) for k, v in self.access_counts.items()},
            "energy_breakdown": dict(self.energy_breakdown),
            "l1_required_bytes": self.l1_required_bytes,
            "l2_required_bytes": self.l2_required_bytes,
            "dram_tile": list(self.dram_tile),
        }


def num_time_steps(d: Directive, extent: int, available_pes: Optional[int] = None) -> int:
    """Windows a directive produces over an extent; for a SpatialMap, the folds over the available PEs."""
    if d.kind == DirectiveKind.CLUSTER:
        raise ValueError("Cluster does not step over a dimension.")
    if extent < 1:
        raise ValueError(f"Extent must be >= 1, got {extent}.")
    windows = 1 + -(-max(0, extent - d.size) // d.offset)
    if d.kind == DirectiveKind.SPATIAL:
        return -(-windows // max(1, available_pes or 1))
    return windows


@dataclass(frozen=True)
class _Loop:
    dim: int
    size: int
    offset: int
    axis: Optional[int] = None  # grid axis for spatial loops
    fanout: int = 1


@dataclass
class _Summary:
    steps: int
    first: Geometry
    last: Geometry
    compute_first: int
    compute_last: int
    latency: int  # over boundaries inside the subtree
    counters: np.ndarray
    macs: int
    active: int
    peak_ws: int

    def translated(self, base: np.ndarray) -> "_Summary":
        return _Summary(self.steps, (self.first[0] + base, self.first[1]), (self.last[0] + base, self.last[1]),
                        self.compute_first, self.compute_last, self.latency, self.counters, self.macs,
                        self.active, self.peak_ws)


def _shift(geom: Geometry, dim: int, delta: int) -> Geometry:
    starts = geom[0].copy()
    starts[dim] += delta
    return starts, geom[1]


def _merge(lo: np.ndarray, hi: np.ndarray, active: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if not active.any():
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    pairs = np.unique(np.stack([lo[active], hi[active]], axis=1), axis=0)
    mlo: List[int] = []
    mhi: List[int] = []
    for a, b in pairs.tolist():
        if mlo and a <= mhi[-1]:
            mhi[-1] = max(mhi[-1], b)
        else:
            mlo.append(a)
            mhi.append(b)
    return np.asarray(mlo, dtype=np.int64), np.asarray(mhi, dtype=np.int64)


def _overlap_with_union(lo: np.ndarray, hi: np.ndarray, union: Tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    ulo, uhi = union
    if ulo.size == 0:
        return np.zeros_like(lo)
    ov = np.minimum(hi[..., None], uhi) - np.maximum(lo[..., None], ulo)
    return np.clip(ov, 0, None).sum(axis=-1)


def _union_overlap(a: Tuple[np.ndarray, np.ndarray], b: Tuple[np.ndarray, np.ndarray]) -> int:
    if a[0].size == 0 or b[0].size == 0:
        return 0
    ov = np.minimum(a[1][:, None], b[1][None, :]) - np.maximum(a[0][:, None], b[0][None, :])
    return int(np.clip(ov, 0, None).sum())


def _union_size(union: Tuple[np.ndarray, np.ndarray]) -> int:
    return int((union[1] - union[0]).sum())


class _Engine:
    """Walks the lockstep loop tree, evaluating one child per run of translated siblings."""

    def __init__(self, nest: LoopNest, hw: AcceleratorConfig, loops: List[_Loop], grid: Tuple[int, ...]):
        self.nest = nest
        self.hw = hw
        self.loops = loops
        self.grid = grid
        self.dims = len(nest.iterators)
        self.base_shape = (self.dims,) + (1,) * len(grid)
        self.bytes_per_cycle = hw.noc_bytes_per_cycle
        self.memo: Dict[Tuple, _Summary] = {}
        index = {name: k for k, name in enumerate(nest.iterator_names)}
        self.refs = [[(sub.constant, [(index[n], c) for n, c in sub.terms]) for sub in ref.subscripts]
                     for ref in nest.body_refs]
        for ref in nest.body_refs:
            per_dim = [set(sub.iterators) for sub in ref.subscripts]
            if any(a & b for i, a in enumerate(per_dim) for b in per_dim[i + 1:]):
                logger.warning(f"Dimensions of {ref.render()} share iterators; array-wide unions are "
                               f"over-approximated")

    # --- geometry ---
    def _intervals(self, geom: Geometry, active: np.ndarray, ref: int) -> List[Tuple[np.ndarray, np.ndarray]]:
        starts, lens = geom
        out = []
        for c0, terms in self.refs[ref]:
            lo = np.full(self.grid, c0, dtype=np.int64)
            hi = np.full(self.grid, c0, dtype=np.int64)
            for k, c in terms:
                first = starts[k]
                last = starts[k] + lens[k] - 1
                if c > 0:
                    lo = lo + c * first
                    hi = hi + c * last
                else:
                    lo = lo + c * last
                    hi = hi + c * first
            out.append((np.where(active, lo, 0), np.where(active, hi + 1, 0)))
        return out

    def transition(self, prev: Optional[Geometry], nxt: Geometry) -> Tuple[np.ndarray, int]:
        counters = np.zeros((len(self.refs), 4), dtype=np.int64)
        n_active = (nxt[1] > 0).all(axis=0)
        p_active = (prev[1] > 0).all(axis=0) if prev is not None else None
        traffic = 0
        for r in range(len(self.refs)):
            n_iv = self._intervals(nxt, n_active, r)
            n_size = np.prod([hi - lo for lo, hi in n_iv], axis=0)
            n_union = [_merge(lo, hi, n_active) for lo, hi in n_iv]
            n_union_size = math.prod(_union_size(u) for u in n_union) if n_active.any() else 0
            if prev is None or not p_active.any():
                fills = int(n_size.sum())
                forwarded = 0
                unique = n_union_size
            else:
                p_iv = self._intervals(prev, p_active, r)
                p_union = [_merge(lo, hi, p_active) for lo, hi in p_iv]
                inter = np.prod([np.clip(np.minimum(nh, ph) - np.maximum(nl, pl), 0, None)
                                 for (nl, nh), (pl, ph) in zip(n_iv, p_iv)], axis=0)
                held = np.prod([_overlap_with_union(lo, hi, u) for (lo, hi), u in zip(n_iv, p_union)], axis=0)
                fills = int((n_size - inter).sum())
                forwarded = int((held - inter).sum())
                kept = math.prod(_union_overlap(a, b) for a, b in zip(n_union, p_union)) if n_active.any() else 0
                unique = n_union_size - kept
            direct = fills - forwarded
            counters[r] = (fills, forwarded, unique, direct)
            traffic += (unique if self.hw.multicast else direct) + forwarded
        cycles = math.ceil(Fraction(traffic * self.nest.bytes_per_element) / self.bytes_per_cycle)
        return counters, cycles

    # --- recursion ---
    def solve(self, level: int, starts: np.ndarray, lens: np.ndarray) -> _Summary:
        active = (lens > 0).all(axis=0)
        lens = np.where(active, lens, 0)
        if active.any():
            base = np.array([s[active].min() for s in starts], dtype=np.int64).reshape(self.base_shape)
        else:
            base = np.zeros(self.base_shape, dtype=np.int64)
        rel = np.where(active, starts - base, 0)
        key = (level, rel.tobytes(), lens.tobytes())
        summary = self.memo.get(key)
        if summary is None:
            summary = self._leaf(rel, lens) if level == len(self.loops) else self._expand(level, rel, lens)
            self.memo[key] = summary
        return summary.translated(base)

    def _leaf(self, starts: np.ndarray, lens: np.ndarray) -> _Summary:
        active = (lens > 0).all(axis=0)
        work = np.prod(lens, axis=0) * active
        compute = int(work.max())
        geom = (starts, lens)
        ws = np.zeros(self.grid, dtype=np.int64)
        for r in range(len(self.refs)):
            ws = ws + np.prod([hi - lo for lo, hi in self._intervals(geom, active, r)], axis=0)
        return _Summary(steps=1, first=geom, last=geom, compute_first=compute, compute_last=compute, latency=0,
                        counters=np.zeros((len(self.refs), 4), dtype=np.int64), macs=int(work.sum()),
                        active=int(active.sum()), peak_ws=int(ws.max()))

    def _expand(self, level: int, starts: np.ndarray, lens: np.ndarray) -> _Summary:
        loop = self.loops[level]
        d, s, o = loop.dim, loop.size, loop.offset
        active = (lens > 0).all(axis=0)
        length = lens[d]
        count = np.where(active, 1 + np.maximum(0, -(-(length - s) // o)), 0)
        full = np.where(active & (length >= s), (length - s) // o + 1, 0)
        if loop.axis is None:
            fanout, slot = 1, np.zeros(self.grid, dtype=np.int64)
        else:
            fanout = loop.fanout
            shape = [1] * len(self.grid)
            shape[loop.axis] = fanout
            slot = np.broadcast_to(np.arange(fanout, dtype=np.int64).reshape(shape), self.grid)
        trips = int(-(-int(count.max()) // fanout))

        points = {0, trips}
        for threshold in (full, count):
            ks = -(-(threshold[active] - slot[active]) // fanout)
            points.update(int(k) for k in np.clip(ks, 0, trips))
        bounds = sorted(points)
        step = fanout * o

        acc: Optional[_Summary] = None
        prev_last: Optional[Geometry] = None
        prev_compute = 0
        for a, b in zip(bounds, bounds[1:]):
            q = a * fanout + slot
            child_starts = starts.copy()
            child_lens = lens.copy()
            child_starts[d] = starts[d] + q * o
            child_lens[d] = np.where(q < count, np.where(q < full, s, length - q * o), 0)
            sub = self.solve(level + 1, child_starts, child_lens)
            runs = b - a
            if acc is None:
                acc = _Summary(0, sub.first, sub.first, sub.compute_first, 0, 0,
                               np.zeros_like(sub.counters), 0, 0, 0)
            else:
                edge, cycles = self.transition(prev_last, sub.first)
                acc.latency += max(prev_compute, cycles)
                acc.counters = acc.counters + edge
            acc.steps += runs * sub.steps
            acc.macs += runs * sub.macs
            acc.active += runs * sub.active
            acc.latency += runs * sub.latency
            acc.counters = acc.counters + runs * sub.counters
            acc.peak_ws = max(acc.peak_ws, sub.peak_ws)
            if runs > 1:
                inner, cycles = self.transition(sub.last, _shift(sub.first, d, step))
                acc.latency += (runs - 1) * max(sub.compute_last, cycles)
                acc.counters = acc.counters + (runs - 1) * inner
            prev_last = _shift(sub.last, d, (runs - 1) * step)
            prev_compute = sub.compute_last
        if acc is None:
            raise AnalysisError(f"Directive on dimension {d} produces no iterations.")
        acc.last = prev_last
        acc.compute_last = prev_compute
        return acc


def _schedule(mdc: MdcMapping, nest: LoopNest, hw: AcceleratorConfig) -> Tuple[List[_Loop], Tuple[int, ...]]:
    violations = validate_mdc(mdc, nest)
    if violations:
        raise AnalysisError(f"Program does not fit '{nest.name}': " + "; ".join(violations))
    try:
        dims = iterator_dims(nest)
    except TransformError as e:
        raise AnalysisError(str(e)) from e
    position = {dims[n]: k for k, n in enumerate(nest.iterator_names)}
    loops: List[_Loop] = []
    grid: List[int] = []
    available = hw.num_pes
    for region in mdc.outermost_first:
        for d in region.directives:
            if d.kind == DirectiveKind.SPATIAL:
                fanout = region.cluster if region.cluster and region.cluster > 1 else available
                if fanout < 1 or fanout > available:
                    raise AnalysisError(f"{d.render()} needs {fanout} PEs but only {available} remain.")
                loops.append(_Loop(position[d.dim_var], d.size, d.offset, axis=len(grid), fanout=fanout))
                grid.append(fanout)
                available //= fanout
            else:
                loops.append(_Loop(position[d.dim_var], d.size, d.offset))
    return loops, tuple(grid)


def _level3_tile(mdc: MdcMapping, nest: LoopNest) -> Tuple[int, ...]:
    dims = iterator_dims(nest)
    outer = mdc.outermost_first[0]
    tile = []
    for it in nest.iterators:
        d = outer.directive_for(dims[it.name])
        tile.append(min(d.size, it.extent) if d is not None else it.extent)
    return tuple(tile)


def analyze_mapping(mdc: MdcMapping, nest: LoopNest, hw: AcceleratorConfig, e: Optional[EnergyProfile] = None,
                    layout: Optional[Layout] = None, flags: Optional[PruningFlags] = None) -> CostReport:
    e = e or hw.energy_profile
    layout = layout or default_layout(nest)
    loops, grid = _schedule(mdc, nest, hw)
    engine = _Engine(nest, hw, loops, grid)

    shape = (len(nest.iterators),) + grid
    starts = np.zeros(shape, dtype=np.int64)
    lens = np.broadcast_to(np.array([it.extent for it in nest.iterators], dtype=np.int64)
                           .reshape((len(nest.iterators),) + (1,) * len(grid)), shape).copy()
    root = engine.solve(0, starts, lens)
    if root.macs != nest.macs:
        raise AnalysisError(f"Program covers {root.macs} MACs but '{nest.name}' has {nest.macs}.")
    fill, fill_cycles = engine.transition(None, root.first)
    counters = root.counters + fill
    latency = fill_cycles + root.latency + root.compute_last

    bpe = nest.bytes_per_element
    t3 = _level3_tile(mdc, nest)
    dram = dram_traffic(nest, t3, layout, hw, flags)
    access: Dict[str, Dict[str, int]] = {}
    fills_total = l2_reads = writebacks = noc_bytes = 0
    for idx, ref in enumerate(nest.body_refs):
        fills, forwarded, unique, direct = (int(x) for x in counters[idx])
        l2 = unique if hw.multicast else direct
        label = ref_label(nest, idx)
        access[label] = {
            "l1_fills": fills,
            "neighbor_forwarded": forwarded,
            "l2_unique": unique,
            "l2_direct": direct,
            "l2_reads": l2 if ref.is_read else 0,
            "l2_writebacks": l2 if ref.is_written else 0,
            "dram_read_bytes": dram[label]["read"],
            "dram_write_bytes": dram[label]["write"],
        }
        fills_total += fills
        l2_reads += l2 if ref.is_read else 0
        writebacks += l2 if ref.is_written else 0
        noc_bytes += (l2 + forwarded) * bpe
    dram_read = sum(v["read"] for v in dram.values())
    dram_write = sum(v["write"] for v in dram.values())
    reads = sum(1 for r in nest.body_refs if r.is_read)
    writes = sum(1 for r in nest.body_refs if r.is_written)

    breakdown = {
        "mac": nest.macs * e.mac,
        "l1_read": nest.macs * reads * bpe * e.l1_read,
        "l1_write": (fills_total + nest.macs * writes) * bpe * e.l1_write,
        "l2_read": l2_reads * bpe * e.l2_read,
        "l2_write": (writebacks * bpe + dram_read) * e.l2_write,
        "dram_read": dram_read * e.dram_read,
        "dram_write": dram_write * e.dram_write,
        "noc": noc_bytes * e.noc_per_byte_per_hop,
    }
    energy = float(sum(breakdown.values()))
    runtime = latency / hw.clock_hz
    report = CostReport(
        name=nest.name,
        latency_cycles=int(latency),
        runtime_seconds=runtime,
        energy=energy,
        edp=energy * runtime,
        pe_utilization=root.active / (hw.num_pes * root.steps),
        throughput_gops=2 * nest.macs / runtime / 1e9,
        steps=root.steps,
        macs=root.macs,
        active_pe_steps=root.active,
        access_counts=access,
        energy_breakdown={k: float(v) for k, v in breakdown.items()},
        l1_required_bytes=2 * root.peak_ws * bpe,
        l2_required_bytes=2 * sum(tensor_footprint(nest, dict(zip(nest.iterator_names, t3))).values()) * bpe,
        dram_tile=t3,
    )
    logger.debug(f"'{nest.name}': {report.steps} steps, {report.latency_cycles} cycles, "
                 f"utilization {report.pe_utilization:.3f}, energy {report.energy:.4g}")
    return report
