"""
MDC Mapper: Conformability
Dimension dependence graph construction and the four-rule conformability check.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, Optional, Tuple

import networkx as nx

from mdc_mapper_loopnest import Direction, LoopNest, Subscript, SubscriptKind, classify_subscript

logger = logging.getLogger(__name__)

ALLOWED_REDUCTION_OPS = ("+", "max", "min")


@dataclass(frozen=True)
class DdgNode:
    index: int
    tensor: str
    position: int
    ref_index: int
    dim_var: str
    subscript: Subscript

    @property
    def label(self) -> str:
        return f"{self.dim_var}:{self.subscript.render()}"


@dataclass
class DimensionDependenceGraph:
    nodes: Tuple[DdgNode, ...]
    edges: Tuple[Tuple[int, int], ...]
    graph: nx.DiGraph = field(repr=False, compare=False)

    @property
    def source_nodes(self) -> Tuple[DdgNode, ...]:
        return tuple(n for n in self.nodes if self.graph.in_degree(n.index) == 0)

    @property
    def independent(self) -> Tuple[str, ...]:
        """Zero in-degree dimension variables, in topological order when one exists."""
        sources = {n.index for n in self.source_nodes}
        order = self.topological_order() or [n.index for n in self.nodes]
        seen: List[str] = []
        for idx in order:
            if idx in sources and self.nodes[idx].dim_var not in seen:
                seen.append(self.nodes[idx].dim_var)
        return tuple(seen)

    def topological_order(self) -> Optional[List[int]]:
        if not nx.is_directed_acyclic_graph(self.graph):
            return None
        return list(nx.lexicographical_topological_sort(self.graph))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "nodes": [{"tensor": n.tensor, "position": n.position, "label": n.label} for n in self.nodes],
            "edges": [[self.nodes[a].label, self.nodes[b].label] for a, b in self.edges],
            "independent": list(self.independent),
        }


def _rule2_key(node: DdgNode, written: frozenset) -> Tuple:
    return (node.subscript.constant, node.tensor in written, node.index)


def build_ddg(nest: LoopNest) -> DimensionDependenceGraph:
    nodes: List[DdgNode] = []
    for ref_index, ref in enumerate(nest.body_refs):
        for position, (dim_var, sub) in enumerate(ref.dims):
            nodes.append(DdgNode(len(nodes), ref.tensor, position, ref_index, dim_var, sub))

    graph = nx.DiGraph()
    graph.add_nodes_from(n.index for n in nodes)
    edges: List[Tuple[int, int]] = []

    def add(a: int, b: int):
        if a != b and not graph.has_edge(a, b):
            graph.add_edge(a, b)
            edges.append((a, b))

    kinds = {n.index: classify_subscript(n.subscript) for n in nodes}

    # rule 1: SIV/MIV -> MIV sharing an iterator
    for u in nodes:
        if kinds[u.index] == SubscriptKind.CONSTANT:
            continue
        for v in nodes:
            if v.index == u.index or kinds[v.index] != SubscriptKind.MIV:
                continue
            if set(u.subscript.iterators) & set(v.subscript.iterators):
                add(u.index, v.index)

    # rule 2: one source per SIV group
    written = frozenset(nest.output_tensors)
    groups: Dict[str, List[DdgNode]] = defaultdict(list)
    for n in nodes:
        if kinds[n.index] == SubscriptKind.SIV:
            groups[n.subscript.iterators[0]].append(n)
    for iterator in nest.iterator_names:
        group = groups.get(iterator, [])
        if len(group) < 2:
            continue
        source = min(group, key=lambda n: _rule2_key(n, written))
        for n in group:
            add(source.index, n.index)

    # rule 3: bound dependences
    for it in nest.iterators:
        for dep in it.bound_dependency:
            for u in nodes:
                if not u.subscript.uses(it.name):
                    continue
                for v in nodes:
                    if v.subscript.uses(dep):
                        add(u.index, v.index)

    ddg = DimensionDependenceGraph(tuple(nodes), tuple(edges), graph)
    logger.debug(f"DDG for '{nest.name}': {len(nodes)} nodes, {len(edges)} edges, independent {ddg.independent}")
    return ddg


@dataclass(frozen=True)
class RuleResult:
    passed: bool
    reason: str = ""


@dataclass
class ConformabilityReport:
    name: str
    r1: RuleResult
    r2: RuleResult
    r3: RuleResult
    r4: RuleResult
    independent_dims: Tuple[str, ...] = ()
    topological_order: Optional[Tuple[str, ...]] = None
    dim_iterators: Dict[str, Tuple[str, ...]] = field(default_factory=dict)

    @property
    def verdict(self) -> bool:
        return self.r1.passed and self.r2.passed and self.r3.passed and self.r4.passed

    @property
    def failing_rules(self) -> Tuple[str, ...]:
        return tuple(tag for tag, r in (("R1", self.r1), ("R2", self.r2), ("R3", self.r3), ("R4", self.r4))
                     if not r.passed)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["verdict"] = "conformable" if self.verdict else "non-conformable"
        data["failing_rules"] = list(self.failing_rules)
        data["independent_dims"] = list(self.independent_dims)
        data["topological_order"] = list(self.topological_order) if self.topological_order else None
        data["dim_iterators"] = {k: list(v) for k, v in self.dim_iterators.items()}
        return data


def _check_r1(nest: LoopNest) -> RuleResult:
    if not nest.perfectly_nested:
        return RuleResult(False, "loop nest is not perfectly nested")
    if nest.has_conditionals:
        return RuleResult(False, "loop body contains conditional statements")
    if nest.statement_count != 1:
        return RuleResult(False, f"loop body has {nest.statement_count} statements, expected 1")
    return RuleResult(True, "perfect nest with a single unconditional statement")


def _check_r2(nest: LoopNest) -> RuleResult:
    for tensor in nest.tensors:
        refs = nest.refs_of(tensor)
        reads = [r for r in refs if r.direction == Direction.READ]
        writes = [r for r in refs if r.is_written]
        if writes and reads:
            return RuleResult(False, f"flow dependence: tensor '{tensor}' is both read and written")
        if len(writes) > 1:
            return RuleResult(False, f"output dependence: tensor '{tensor}' is written by {len(writes)} references")
        if any(r.direction == Direction.READ_WRITE for r in writes) and nest.reduction_op not in ALLOWED_REDUCTION_OPS:
            return RuleResult(False, f"reduction on '{tensor}' uses unsupported operator '{nest.reduction_op}'")
    return RuleResult(True, "only reduction dependences")


def _check_r3(nest: LoopNest, ddg: DimensionDependenceGraph) -> RuleResult:
    order = ddg.topological_order()
    if order is None:
        cycle = nx.find_cycle(ddg.graph)
        labels = " -> ".join(ddg.nodes[a].label for a, _ in cycle)
        return RuleResult(False, f"dimension dependence graph has a cycle ({labels})")
    sources = {n.index for n in ddg.source_nodes}
    for n in ddg.nodes:
        if n.index not in sources and not n.subscript.affine:
            return RuleResult(False, f"dependent dimension {n.label} has a non-affine subscript")
    owners: Dict[str, List[DdgNode]] = defaultdict(list)
    for n in ddg.source_nodes:
        owners[n.dim_var].append(n)
    for dim_var, owned in owners.items():
        if len(owned) > 1:
            return RuleResult(False, f"dimension variable {dim_var} has {len(owned)} zero in-degree nodes "
                                     f"({', '.join(n.label for n in owned)})")
    return RuleResult(True, "dimension dependence graph has a topological order")


def _iterator_uses(nest: LoopNest) -> Dict[str, int]:
    uses: Dict[str, int] = defaultdict(int)
    for ref in nest.body_refs:
        for sub in ref.subscripts:
            for name in set(sub.iterators):
                uses[name] += 1
    return uses


def _check_r4(nest: LoopNest, ddg: DimensionDependenceGraph) -> Tuple[RuleResult, Dict[str, Tuple[str, ...]]]:
    uses = _iterator_uses(nest)
    dim_iterators: Dict[str, Tuple[str, ...]] = {}
    for n in ddg.source_nodes:
        sub = n.subscript
        if not sub.affine:
            return RuleResult(False, f"independent dimension {n.label} has a non-affine subscript"), {}
        if sub.constant != 0:
            return RuleResult(False, f"independent dimension {n.label} has constant {sub.constant}"), {}
        kind = classify_subscript(sub)
        if kind == SubscriptKind.CONSTANT:
            return RuleResult(False, f"independent dimension {n.label} has a constant subscript"), {}
        if any(c != 1 for _, c in sub.terms):
            return RuleResult(False, f"independent dimension {n.label} has a non-unit coefficient"), {}
        if kind == SubscriptKind.MIV and any(uses[name] > 1 for name in sub.iterators):
            return RuleResult(False, f"independent dimension {n.label} couples iterators used elsewhere"), {}
        dim_iterators[n.dim_var] = sub.iterators
    return RuleResult(True, "independent dimensions have unit-coefficient single-iterator subscripts"), dim_iterators


def check_conformable(nest: LoopNest) -> ConformabilityReport:
    r1 = _check_r1(nest)
    r2 = _check_r2(nest)
    ddg = build_ddg(nest)
    r3 = _check_r3(nest, ddg)
    r4, dim_iterators = _check_r4(nest, ddg)
    order = ddg.topological_order()
    report = ConformabilityReport(
        name=nest.name,
        r1=r1, r2=r2, r3=r3, r4=r4,
        independent_dims=ddg.independent,
        topological_order=tuple(ddg.nodes[i].label for i in order) if order is not None else None,
        dim_iterators=dim_iterators,
    )
    logger.info(f"Conformability of '{nest.name}': "
                f"{'conformable' if report.verdict else 'non-conformable ' + str(list(report.failing_rules))}")
    return report
