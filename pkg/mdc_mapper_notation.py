"""
MDC Mapper: Notation
TemporalMap / SpatialMap / Cluster directive programs, the Mapping-to-directive
transform, and the textual form.
"""

import functools
import logging
import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Mapping as MappingT, Optional, Sequence, Tuple

from mdc_mapper_conformability import DimensionDependenceGraph, build_ddg, check_conformable
from mdc_mapper_errors import MdcParseError, TransformError
from mdc_mapper_loopnest import LoopNest, Subscript
from mdc_mapper_space import Mapping

logger = logging.getLogger(__name__)


class DirectiveKind(Enum):
    TEMPORAL = "TemporalMap"
    SPATIAL = "SpatialMap"
    CLUSTER = "Cluster"


@dataclass(frozen=True)
class Directive:
    kind: DirectiveKind
    size: int
    offset: Optional[int] = None
    dim_var: Optional[str] = None

    def render(self) -> str:
        if self.kind == DirectiveKind.CLUSTER:
            return f"Cluster({self.size})"
        return f"{self.kind.value}({self.size},{self.offset}) {self.dim_var}"


def TemporalMap(size: int, offset: int, dim_var: str) -> Directive:
    return Directive(DirectiveKind.TEMPORAL, size, offset, dim_var)


def SpatialMap(size: int, offset: int, dim_var: str) -> Directive:
    return Directive(DirectiveKind.SPATIAL, size, offset, dim_var)


@dataclass(frozen=True)
class Region:
    directives: Tuple[Directive, ...]
    cluster: Optional[int] = None  # Cluster printed right after this region; None for the innermost

    @property
    def spatial(self) -> Optional[Directive]:
        for d in self.directives:
            if d.kind == DirectiveKind.SPATIAL:
                return d
        return None

    def directive_for(self, dim_var: str) -> Optional[Directive]:
        for d in self.directives:
            if d.dim_var == dim_var:
                return d
        return None


@dataclass(frozen=True)
class MdcMapping:
    """Regions are stored innermost first, so regions[0] is R1."""
    computation: str
    regions: Tuple[Region, ...]

    def labels(self) -> List[str]:
        return [f"R{i + 1}" for i in range(len(self.regions))]

    @property
    def outermost_first(self) -> Tuple[Region, ...]:
        return tuple(reversed(self.regions))

    @property
    def dim_vars(self) -> Tuple[str, ...]:
        seen: List[str] = []
        for region in self.outermost_first:
            for d in region.directives:
                if d.dim_var not in seen:
                    seen.append(d.dim_var)
        return tuple(seen)


# --- dimension ownership ---

@functools.lru_cache(maxsize=128)
def dim_iterator_map(nest: LoopNest) -> Tuple[Tuple[str, str], ...]:
    """(independent dim_var, iterator) pairs in topological order."""
    report = check_conformable(nest)
    if not report.verdict:
        raise TransformError(f"'{nest.name}' is not MDC-conformable (fails {', '.join(report.failing_rules)}).")
    owners: Dict[str, str] = {}
    pairs: List[Tuple[str, str]] = []
    for dim_var in report.independent_dims:
        iterators = report.dim_iterators.get(dim_var, ())
        if len(iterators) != 1:
            raise TransformError(f"Independent dimension {dim_var} spans iterators {list(iterators)}; "
                                 f"fuse them into one loop first.")
        it = iterators[0]
        if it in owners:
            raise TransformError(f"Iterator '{it}' is owned by both {owners[it]} and {dim_var}.")
        owners[it] = dim_var
        pairs.append((dim_var, it))
    missing = [n for n in nest.iterator_names if n not in owners]
    if missing:
        raise TransformError(f"Iterators {missing} of '{nest.name}' have no independent dimension variable.")
    return tuple(pairs)


def iterator_dims(nest: LoopNest) -> Dict[str, str]:
    return {it: dim for dim, it in dim_iterator_map(nest)}


# --- transform ---

def transform_to_mdc(m: Mapping, nest: LoopNest, ddg: Optional[DimensionDependenceGraph] = None) -> MdcMapping:
    names = nest.iterator_names
    if len(m.t1) != len(names) or len(m.t2) != len(names) or len(m.t3) != len(names):
        raise TransformError(f"Mapping tile vectors do not match the {len(names)} iterators of '{nest.name}'.")
    if sorted(m.order2) != sorted(names) or sorted(m.order3) != sorted(names):
        raise TransformError("Mapping orders are not permutations of the nest iterators.")
    dims = iterator_dims(nest)
    ddg = ddg or build_ddg(nest)
    for dim_var in dims.values():
        if dim_var not in ddg.independent:
            raise TransformError(f"Dimension variable {dim_var} is not independent.")

    t1 = dict(zip(names, m.t1))
    t2 = dict(zip(names, m.t2))
    blk = dict(zip(names, m.t2_block))
    t3 = dict(zip(names, m.t3))

    outer_first: List[Region] = []
    outer_first.append(Region(tuple(TemporalMap(t3[n], t3[n], dims[n]) for n in m.order3), cluster=1))
    outer_first.append(Region(tuple(TemporalMap(blk[n], blk[n], dims[n]) for n in m.order2), cluster=1))

    parallel = [n for n in names if t2[n] > 1]
    split: set = set()
    for idx, p in enumerate(parallel):
        directives = []
        for n in names:
            if n == p:
                directives.append(SpatialMap(t1[n], t1[n], dims[n]))
            else:
                window = blk[n] if (n in parallel and n not in split) else t1[n]
                directives.append(TemporalMap(window, window, dims[n]))
        split.add(p)
        innermost_parallel = idx == len(parallel) - 1
        outer_first.append(Region(tuple(directives), cluster=1 if innermost_parallel else t2[p]))

    outer_first.append(Region(tuple(TemporalMap(t1[n], t1[n], dims[n]) for n in names), cluster=None))
    mdc = MdcMapping(nest.statement(), tuple(reversed(outer_first)))
    logger.debug(f"Transformed mapping of '{nest.name}' into {len(mdc.regions)} regions")
    return mdc


def dependent_extent(subscript: Subscript, mapped_sizes: MappingT[str, int]) -> int:
    return subscript.span(mapped_sizes)


def pe_tile_volumes(mdc: MdcMapping, nest: LoopNest) -> Dict[str, int]:
    """Per-PE per-step element count of each tensor, derived from the point region's windows."""
    dims = iterator_dims(nest)
    point = mdc.regions[0]
    sizes = {}
    for n in nest.iterator_names:
        d = point.directive_for(dims[n])
        sizes[n] = d.size if d is not None else nest.extent_of(n)
    volumes: Dict[str, int] = {}
    for tensor in nest.tensors:
        ref = nest.refs_of(tensor)[0]
        volumes[tensor] = math.prod(dependent_extent(sub, sizes) for sub in ref.subscripts)
    return volumes


def validate_mdc(mdc: MdcMapping, nest: LoopNest) -> List[str]:
    violations: List[str] = []
    try:
        known = set(iterator_dims(nest).values())
    except TransformError as e:
        return [str(e)]
    if not mdc.regions:
        return ["program has no regions"]
    for label, region in zip(mdc.labels(), mdc.regions):
        spatial = [d for d in region.directives if d.kind == DirectiveKind.SPATIAL]
        if len(spatial) > 1:
            violations.append(f"{label}: more than one SpatialMap")
        seen = set()
        for d in region.directives:
            if d.kind == DirectiveKind.CLUSTER:
                violations.append(f"{label}: Cluster inside a region")
                continue
            if d.dim_var not in known:
                violations.append(f"{label}: {d.dim_var} is not an independent dimension of '{nest.name}'")
            if d.dim_var in seen:
                violations.append(f"{label}: {d.dim_var} mapped twice")
            seen.add(d.dim_var)
            if d.size < 1 or (d.offset or 0) < 1:
                violations.append(f"{label}: {d.render()} needs size and offset >= 1")
        if region.cluster is not None and region.cluster < 1:
            violations.append(f"{label}: Cluster({region.cluster}) must be >= 1")
    if mdc.regions[0].cluster is not None:
        violations.append("innermost region must not be followed by a Cluster")
    return violations


# --- text ---

def render_mdc(mdc: MdcMapping) -> str:
    lines: List[str] = []
    if mdc.computation:
        lines.append(f"# {mdc.computation}")
    for region in mdc.outermost_first:
        lines.extend(d.render() for d in region.directives)
        if region.cluster is not None:
            lines.append(f"Cluster({region.cluster})")
    return "\n".join(lines) + "\n"


_MAP_RE = re.compile(r"^(TemporalMap|SpatialMap)\s*\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)\s+([A-Za-z_][\w]*)\s*$")
_CLUSTER_RE = re.compile(r"^Cluster\s*\(\s*(-?\d+)\s*\)\s*$")


def parse_mdc(text: str) -> MdcMapping:
    computation = ""
    regions: List[Region] = []
    current: List[Directive] = []
    saw_directive = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        column = len(raw) - len(raw.lstrip()) + 1
        if not stripped:
            continue
        if stripped.startswith("#"):
            if not saw_directive and not computation:
                computation = stripped[1:].strip()
            continue
        saw_directive = True
        match = _MAP_RE.match(stripped)
        if match:
            kind, size, offset, dim_var = match.groups()
            size_i, offset_i = int(size), int(offset)
            if size_i < 1:
                raise MdcParseError(f"{kind} size must be >= 1, got {size_i}", lineno, column + stripped.index("(") + 1)
            if offset_i < 1:
                raise MdcParseError(f"{kind} offset must be >= 1, got {offset_i}", lineno,
                                    column + stripped.index(",") + 1)
            directive = Directive(DirectiveKind(kind), size_i, offset_i, dim_var)
            if any(d.dim_var == dim_var for d in current):
                raise MdcParseError(f"{dim_var} mapped twice in one region", lineno, column + match.start(4))
            if directive.kind == DirectiveKind.SPATIAL and any(d.kind == DirectiveKind.SPATIAL for d in current):
                raise MdcParseError("more than one SpatialMap in one region", lineno, column)
            current.append(directive)
            continue
        match = _CLUSTER_RE.match(stripped)
        if match:
            size_i = int(match.group(1))
            if size_i < 1:
                raise MdcParseError(f"Cluster size must be >= 1, got {size_i}", lineno, column + stripped.index("(") + 1)
            if not current:
                raise MdcParseError("Cluster without a preceding region", lineno, column)
            regions.append(Region(tuple(current), cluster=size_i))
            current = []
            continue
        raise MdcParseError(f"unrecognized directive '{stripped}'", lineno, column)

    if not current:
        raise MdcParseError("program must end with a region", max(1, len(text.splitlines())), 1)
    regions.append(Region(tuple(current), cluster=None))
    return MdcMapping(computation, tuple(reversed(regions)))
