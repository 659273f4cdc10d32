"""
MDC Mapper: Reports
JSON, CSV and table emission for every CLI result, plus mapping files.
"""

import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping as MappingT, Optional, Sequence, Union

import pandas as pd

from mdc_mapper_conformability import ConformabilityReport
from mdc_mapper_errors import WorkloadError
from mdc_mapper_loopnest import LoopNest
from mdc_mapper_onchip_cost import CostReport
from mdc_mapper_space import Mapping

logger = logging.getLogger(__name__)


class OutputFormat(Enum):
    TABLE = "table"
    CSV = "csv"
    JSON = "json"


def to_json(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def render(data: Any, frame: pd.DataFrame, fmt: Union[OutputFormat, str]) -> str:
    """JSON gets the full nested data; CSV and tables get the flat rows."""
    fmt = OutputFormat(fmt)
    if fmt == OutputFormat.JSON:
        return to_json(data)
    if fmt == OutputFormat.CSV:
        return frame.to_csv(index=False)
    if frame.empty:
        return "(no rows)\n"
    return frame.to_string(index=False) + "\n"


# --- row builders ---

def check_frame(reports: Sequence[ConformabilityReport]) -> pd.DataFrame:
    rows = []
    for r in reports:
        rows.append({
            "operator": r.name,
            "conformable": "Y" if r.verdict else "N",
            "R1": r.r1.passed, "R2": r.r2.passed, "R3": r.r3.passed, "R4": r.r4.passed,
            "failing": ",".join(r.failing_rules),
            "independent_dims": " ".join(r.independent_dims),
        })
    return pd.DataFrame(rows, columns=["operator", "conformable", "R1", "R2", "R3", "R4", "failing",
                                       "independent_dims"])


def cost_row(report: CostReport, goal: Optional[str] = None, style: Optional[str] = None) -> Dict[str, Any]:
    row: Dict[str, Any] = {"operator": report.name}
    if style is not None:
        row["style"] = style
    if goal is not None:
        row["goal"] = goal
    row.update({
        "latency_cycles": report.latency_cycles,
        "runtime_s": report.runtime_seconds,
        "energy": report.energy,
        "edp": report.edp,
        "utilization": round(report.pe_utilization, 6),
        "gops": report.throughput_gops,
    })
    return row


def cost_frame(reports: Sequence[CostReport]) -> pd.DataFrame:
    return pd.DataFrame([cost_row(r) for r in reports])


def search_frame(results: Iterable[Any]) -> pd.DataFrame:
    """One row per operator × goal (optionally × style)."""
    rows = []
    for res in results:
        for goal, cand in sorted(res.best.items()):
            row = cost_row(cand.report, goal=goal, style=res.style)
            row["t1"] = "x".join(map(str, cand.mapping.t1))
            row["t2"] = "x".join(map(str, cand.mapping.t2))
            row["t3"] = "x".join(map(str, cand.mapping.t3))
            row["order2"] = ">".join(cand.mapping.order2)
            rows.append(row)
    return pd.DataFrame(rows)


def space_frame(named: Sequence[tuple]) -> pd.DataFrame:
    rows = [{"operator": name, **stats.to_dict()} for name, stats in named]
    return pd.DataFrame(rows, columns=["operator", "original_count", "offchip_count", "onchip_count", "reduction"])


def frame(rows: Sequence[MappingT[str, Any]]) -> pd.DataFrame:
    return pd.DataFrame(list(rows))


# --- mapping files ---

def save_mapping(mapping: Mapping, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(to_json(mapping.to_dict()))


def load_mapping(path: Union[str, Path], nest: LoopNest) -> Mapping:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise WorkloadError(f"Could not read mapping file {path}: {e}") from e
    if isinstance(data, dict) and "mapping" in data:
        data = data["mapping"]
    try:
        mapping = Mapping.from_dict(data)
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise WorkloadError(f"Mapping file {path} is missing or mistypes a field: {e}") from e
    n = len(nest.iterators)
    problems: List[str] = []
    for key in ("t1", "t2", "t3"):
        if len(getattr(mapping, key)) != n:
            problems.append(f"{key} has {len(getattr(mapping, key))} entries, '{nest.name}' has {n} loops")
    for key in ("order2", "order3"):
        if sorted(getattr(mapping, key)) != sorted(nest.iterator_names):
            problems.append(f"{key} is not a permutation of {list(nest.iterator_names)}")
    layout = mapping.layout_dict()
    for tensor in nest.tensors:
        rank = len(nest.tensor_shape(tensor))
        if tensor not in layout:
            problems.append(f"layout has no entry for tensor {tensor}")
        elif not 0 <= layout[tensor] < rank:
            problems.append(f"layout puts dimension {layout[tensor]} of {tensor} innermost (rank {rank})")
    if problems:
        raise WorkloadError(f"Mapping file {path} does not fit '{nest.name}': " + "; ".join(problems))
    # keep the nest's tensor order so equal mappings compare equal
    return Mapping(mapping.t1, mapping.t2, mapping.order2, mapping.t3, mapping.order3,
                   tuple((t, layout[t]) for t in nest.tensors))


def space_summary_frame(summary: MappingT[str, MappingT[str, float]]) -> pd.DataFrame:
    rows = [{"count": key, **values} for key, values in summary.items()]
    return pd.DataFrame(rows)

