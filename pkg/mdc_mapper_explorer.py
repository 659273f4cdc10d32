"""
MDC Mapper: Explorer
Decoupled off-chip then on-chip search, mapping-style baselines and roofline
bounds.
"""

import concurrent.futures
import itertools
import logging
import math
import time
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from mdc_mapper_config import AcceleratorConfig, PruningFlags
from mdc_mapper_errors import InfeasibleError, StyleError
from mdc_mapper_loopnest import LoopNest
from mdc_mapper_notation import MdcMapping, render_mdc, transform_to_mdc
from mdc_mapper_offchip_cost import OffchipPlan, optimize_offchip
from mdc_mapper_onchip_cost import CostReport, analyze_mapping
from mdc_mapper_space import Mapping, iter_onchip_tiles, validate_mapping
from mdc_mapper_workloads import conv2d_equivalent_dims

logger = logging.getLogger(__name__)

TILES_PER_TASK = 64


class SearchGoal(Enum):
    RUNTIME = "runtime"
    ENERGY = "energy"
    EDP = "edp"


ALL_GOALS = tuple(SearchGoal)


class BaselineStyle(Enum):
    ROW_STATIONARY = "row_stationary"
    WEIGHT_STATIONARY = "weight_stationary"
    OUTPUT_STATIONARY = "output_stationary"
    INTERSTELLAR_LIKE = "interstellar_like"
    DMAZE_LIKE = "dmaze_like"


# parallel dims allowed, dims that must close the level-2 order (CONV2D names)
STYLE_RULES: Dict[BaselineStyle, Tuple[FrozenSet[str], FrozenSet[str]]] = {
    BaselineStyle.ROW_STATIONARY: (frozenset("RP"), frozenset("Q")),
    BaselineStyle.WEIGHT_STATIONARY: (frozenset("KC"), frozenset("KCRS")),
    BaselineStyle.OUTPUT_STATIONARY: (frozenset("PQ"), frozenset("CRS")),
    BaselineStyle.INTERSTELLAR_LIKE: (frozenset("CK"), frozenset()),
    BaselineStyle.DMAZE_LIKE: (frozenset("K"), frozenset()),
}


@dataclass(frozen=True)
class Candidate:
    mapping: Mapping
    mdc: MdcMapping
    report: CostReport

    def to_dict(self) -> Dict[str, Any]:
        return {"mapping": self.mapping.to_dict(), "mdc": render_mdc(self.mdc), "cost": self.report.to_dict()}


@dataclass(frozen=True)
class SearchResult:
    name: str
    best: Dict[str, Candidate]
    plan: OffchipPlan
    evaluated: int
    onchip_tiles: int
    style: Optional[str] = None
    utilization_relaxed: bool = False
    search_seconds: float = 0.0

    def for_goal(self, goal: "SearchGoal | str") -> Candidate:
        return self.best[goal.value if isinstance(goal, SearchGoal) else goal]

    def to_dict(self, include_time: bool = False) -> Dict[str, Any]:
        data = {
            "name": self.name,
            "style": self.style,
            "offchip": self.plan.to_dict(),
            "evaluated": self.evaluated,
            "onchip_tiles": self.onchip_tiles,
            "utilization_relaxed": self.utilization_relaxed,
            "best": {goal: cand.to_dict() for goal, cand in sorted(self.best.items())},
        }
        if include_time:
            data["search_seconds"] = self.search_seconds
        return data


@dataclass(frozen=True)
class RooflinePeak:
    compute_seconds: float
    bandwidth_seconds: float
    peak_gops: float
    arithmetic_intensity: float

    @property
    def runtime_seconds(self) -> float:
        return max(self.compute_seconds, self.bandwidth_seconds)

    @property
    def bound(self) -> str:
        return "compute" if self.compute_seconds >= self.bandwidth_seconds else "bandwidth"

    def to_dict(self) -> Dict[str, Any]:
        return {"compute_seconds": self.compute_seconds, "bandwidth_seconds": self.bandwidth_seconds,
                "runtime_seconds": self.runtime_seconds, "bound": self.bound, "peak_gops": self.peak_gops,
                "arithmetic_intensity": self.arithmetic_intensity}


# --- level-2 orders ---

def representative_orders(names: Sequence[str], trips: Sequence[int],
                          closing: FrozenSet[str] = frozenset()) -> List[Tuple[str, ...]]:
    """One level-2 order per class of orders that differ only in where single-trip loops sit.

    Each representative is the lexicographically smallest (by nest position)
    order of its class that ends with the ``closing`` iterators.
    """
    position = {n: k for k, n in enumerate(names)}
    multi = [n for n, t in zip(names, trips) if t > 1]
    single = [n for n, t in zip(names, trips) if t <= 1]

    def merge(fixed: List[str], free: List[str]) -> List[str]:
        out: List[str] = []
        i = j = 0
        while i < len(fixed) or j < len(free):
            if j < len(free) and (i == len(fixed) or position[free[j]] < position[fixed[i]]):
                out.append(free[j])
                j += 1
            else:
                out.append(fixed[i])
                i += 1
        return out

    orders = []
    for perm in itertools.permutations(multi):
        head = [n for n in perm if n not in closing]
        tail = [n for n in perm if n in closing]
        if list(perm) != head + tail:
            continue
        order = merge(head, [n for n in single if n not in closing]) + \
            merge(tail, [n for n in single if n in closing])
        orders.append(tuple(order))
    return sorted(set(orders), key=lambda o: tuple(position[n] for n in o))


# --- scoring ---

def _score_tiles(nest: LoopNest, hw: AcceleratorConfig, flags: PruningFlags, plan: OffchipPlan,
                 closing: FrozenSet[str], goals: Tuple[str, ...],
                 tiles: Sequence[Tuple[Tuple[int, ...], Tuple[int, ...]]]
                 ) -> Tuple[int, Dict[str, Tuple[Tuple, Mapping, CostReport]]]:
    """Scores every (t2, t1) with each representative level-2 order; returns per-goal minima."""
    best: Dict[str, Tuple[Tuple, Mapping, CostReport]] = {}
    scored = 0
    for t2, t1 in tiles:
        trips = [-(-t3 // (a * b)) for t3, a, b in zip(plan.t3, t2, t1)]
        for order2 in representative_orders(nest.iterator_names, trips, closing):
            m = Mapping(t1=t1, t2=t2, order2=order2, t3=plan.t3, order3=plan.order3, layout=plan.layout)
            violations = validate_mapping(m, nest, hw, flags)
            if violations:
                logger.warning(f"Skipping invalid candidate {m.to_dict()}: {violations}")
                continue
            report = analyze_mapping(transform_to_mdc(m, nest), nest, hw, layout=plan.layout, flags=flags)
            scored += 1
            encoding = m.encoding(nest)
            for goal in goals:
                key = (report.goal_value(goal), report.runtime_seconds, encoding)
                if goal not in best or key < best[goal][0]:
                    best[goal] = (key, m, report)
    return scored, best


def _score_task(args) -> Tuple[int, Dict[str, Tuple[Tuple, Mapping, CostReport]]]:
    return _score_tiles(*args)


def _reduce(parts: Iterable[Tuple[int, Dict[str, Tuple[Tuple, Mapping, CostReport]]]]
            ) -> Tuple[int, Dict[str, Tuple[Tuple, Mapping, CostReport]]]:
    total = 0
    best: Dict[str, Tuple[Tuple, Mapping, CostReport]] = {}
    for scored, part in parts:
        total += scored
        for goal, entry in part.items():
            if goal not in best or entry[0] < best[goal][0]:
                best[goal] = entry
    return total, best


def _normalize_goals(goals: Optional[Iterable["SearchGoal | str"]]) -> Tuple[str, ...]:
    if not goals:
        return tuple(g.value for g in ALL_GOALS)
    return tuple(sorted({SearchGoal(g).value if not isinstance(g, SearchGoal) else g.value for g in goals}))


def _search(nest: LoopNest, hw: AcceleratorConfig, goals: Tuple[str, ...], flags: PruningFlags,
            workers: int, allowed: Optional[Callable[[str, int], bool]], closing: FrozenSet[str],
            style: Optional[str]) -> SearchResult:
    started = time.perf_counter()
    plan = optimize_offchip(nest, hw, flags)
    tiles = list(iter_onchip_tiles(nest, hw, plan.t3, flags, allowed))
    relaxed = False
    if not tiles and flags.utilization:
        logger.warning(f"No on-chip candidate of '{nest.name}' reaches {hw.utilization_bound:.0%} PE "
                       f"utilization; searching without the utilization bound")
        flags = replace(flags, utilization=False)
        tiles = list(iter_onchip_tiles(nest, hw, plan.t3, flags, allowed))
        relaxed = True
    if not tiles:
        raise InfeasibleError(f"No on-chip mapping of '{nest.name}' fits the {hw.l1_bytes} B L1 buffer "
                              f"at level-3 tile {list(plan.t3)}.")

    chunks = [tiles[i:i + TILES_PER_TASK] for i in range(0, len(tiles), TILES_PER_TASK)]
    tasks = [(nest, hw, flags, plan, closing, goals, chunk) for chunk in chunks]
    if workers > 1 and len(tasks) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as executor:
            scored, best = _reduce(executor.map(_score_task, tasks))
    else:
        scored, best = _reduce(_score_task(t) for t in tasks)
    if not best:
        raise InfeasibleError(f"Every on-chip candidate of '{nest.name}' was rejected.")

    chosen = {goal: Candidate(m, transform_to_mdc(m, nest), report) for goal, (_, m, report) in best.items()}
    elapsed = time.perf_counter() - started
    for goal, cand in sorted(chosen.items()):
        logger.info(f"'{nest.name}'{f' [{style}]' if style else ''} best {goal}: "
                    f"{cand.report.latency_cycles} cycles, energy {cand.report.energy:.4g}, "
                    f"utilization {cand.report.pe_utilization:.2f}")
    logger.info(f"Scored {scored} candidates of '{nest.name}' from {len(tiles)} tile pairs in {elapsed:.2f}s")
    return SearchResult(name=nest.name, best=chosen, plan=plan, evaluated=scored, onchip_tiles=len(tiles),
                        style=style, utilization_relaxed=relaxed, search_seconds=elapsed)


def decoupled_optimize(nest: LoopNest, hw: AcceleratorConfig, goals: Optional[Iterable["SearchGoal | str"]] = None,
                       flags: Optional[PruningFlags] = None, workers: int = 1) -> SearchResult:
    return _search(nest, hw, _normalize_goals(goals), flags or PruningFlags(), workers, None, frozenset(), None)


def style_constraints(nest: LoopNest, style: BaselineStyle) -> Tuple[FrozenSet[str], FrozenSet[str]]:
    """Iterator names a style may parallelize, and those that must close the level-2 order."""
    view = conv2d_equivalent_dims(nest)
    if view is None:
        raise StyleError(f"{style.value} needs a CONV2D- or GEMM-shaped operator; '{nest.name}' is {nest.kind}.")
    parallel_dims, closing_dims = STYLE_RULES[style]
    parallel = frozenset(view[d] for d in parallel_dims if view.get(d) and nest.extent_of(view[d]) > 1)
    if not parallel and style == BaselineStyle.DMAZE_LIKE:
        # one parallel loop of its own choosing: the longest, first in nest order on ties
        longest = max(nest.iterators, key=lambda it: it.extent)
        if longest.extent > 1:
            logger.info(f"{style.value}: '{nest.name}' has no non-unit {sorted(parallel_dims)} loop; "
                        f"parallelizing '{longest.name}'")
            parallel = frozenset({longest.name})
    if not parallel:
        raise StyleError(f"{style.value} parallelizes {sorted(parallel_dims)}, none of which '{nest.name}' "
                         f"has with extent > 1.")
    closing = frozenset(view[d] for d in closing_dims if view.get(d))
    return parallel, closing


def constrained_baseline(nest: LoopNest, hw: AcceleratorConfig, style: "BaselineStyle | str",
                         goals: Optional[Iterable["SearchGoal | str"]] = None,
                         flags: Optional[PruningFlags] = None, workers: int = 1) -> SearchResult:
    style = BaselineStyle(style) if not isinstance(style, BaselineStyle) else style
    parallel, closing = style_constraints(nest, style)
    logger.debug(f"{style.value} on '{nest.name}': parallel {sorted(parallel)}, closing {sorted(closing)}")
    return _search(nest, hw, _normalize_goals(goals), flags or PruningFlags(), workers,
                   lambda name, degree: name in parallel, closing, style.value)


def roofline_peak(nest: LoopNest, hw: AcceleratorConfig) -> RooflinePeak:
    compute = 2 * nest.macs / (hw.num_pes * 2 * hw.clock_hz)
    traffic = sum(nest.tensor_sizes().values()) * nest.bytes_per_element
    bandwidth = traffic / hw.noc_bandwidth_bytes_per_sec
    return RooflinePeak(compute_seconds=compute, bandwidth_seconds=bandwidth, peak_gops=hw.peak_gops,
                        arithmetic_intensity=2 * nest.macs / traffic)


def roofline_comparison(nest: LoopNest, hw: AcceleratorConfig, report: CostReport) -> Dict[str, Any]:
    peak = roofline_peak(nest, hw)
    return {
        "operator": nest.name,
        "achieved_gops": report.throughput_gops,
        "peak_gops": peak.peak_gops,
        "roofline_seconds": peak.runtime_seconds,
        "achieved_seconds": report.runtime_seconds,
        "bound": peak.bound,
        "efficiency": peak.runtime_seconds / report.runtime_seconds,
    }


def baseline_ratios(decoupled: SearchResult, baseline: SearchResult) -> Dict[str, float]:
    """How much faster / more energy efficient the decoupled search is than a style."""
    ours_rt = decoupled.for_goal(SearchGoal.RUNTIME).report
    theirs_rt = baseline.for_goal(SearchGoal.RUNTIME).report
    ours_en = decoupled.for_goal(SearchGoal.ENERGY).report
    theirs_en = baseline.for_goal(SearchGoal.ENERGY).report
    return {"speedup": theirs_rt.runtime_seconds / ours_rt.runtime_seconds,
            "energy_reduction": theirs_en.energy / ours_en.energy}


def geomean(values: Sequence[float]) -> float:
    if not values:
        return float("nan")
    return math.exp(sum(math.log(v) for v in values) / len(values))
