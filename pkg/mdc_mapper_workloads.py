"""
MDC Mapper: Workloads
Loop nest generators for DNN operator families and the workload file reader.
"""

import json
import logging
from dataclasses import dataclass, asdict
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from mdc_mapper_errors import MdcMapperError, WorkloadError
from mdc_mapper_loopnest import LoopNest, normalize

logger = logging.getLogger(__name__)

WORKLOADS_DIR = Path(__file__).parent.resolve() / "workloads"
CONV2D_DIMS = ("N", "K", "C", "P", "Q", "R", "S")


class Conv2dVariant(Enum):
    REGULAR = "regular"
    POINTWISE = "pointwise"
    DEPTHWISE = "depthwise"
    STRIDED = "strided"
    DILATED = "dilated"


@dataclass(frozen=True)
class Conv2dParams:
    N: int = 1
    K: int = 1
    C: int = 1
    P: int = 1
    Q: int = 1
    R: int = 1
    S: int = 1
    stride: int = 1
    dilation: int = 1
    variant: Conv2dVariant = Conv2dVariant.REGULAR

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["variant"] = self.variant.value
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Conv2dParams":
        valid = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        if "variant" in valid:
            try:
                valid["variant"] = Conv2dVariant(valid["variant"])
            except ValueError:
                raise WorkloadError(f"Unknown CONV2D variant '{valid['variant']}'.")
        return cls(**valid)


@dataclass(frozen=True)
class GemmParams:
    M: int
    N: int
    K: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _positive(name: str, **values: int) -> None:
    for key, value in values.items():
        if not isinstance(value, int) or value < 1:
            raise WorkloadError(f"{name}: parameter {key}={value!r} must be a positive integer.")


def make_conv2d(p: Conv2dParams, name: str = "conv2d", bytes_per_element: int = 1) -> LoopNest:
    _positive(name, N=p.N, K=p.K, C=p.C, P=p.P, Q=p.Q, R=p.R, S=p.S, stride=p.stride, dilation=p.dilation)
    variant = p.variant
    if variant == Conv2dVariant.POINTWISE and (p.R != 1 or p.S != 1):
        raise WorkloadError(f"{name}: pointwise convolution needs R=S=1, got R={p.R}, S={p.S}.")
    if variant == Conv2dVariant.DEPTHWISE and p.K != p.C:
        raise WorkloadError(f"{name}: depthwise convolution needs K=C, got K={p.K}, C={p.C}.")
    if variant == Conv2dVariant.STRIDED and p.stride == 1:
        raise WorkloadError(f"{name}: strided variant needs stride > 1.")
    if variant == Conv2dVariant.DILATED and p.dilation == 1:
        raise WorkloadError(f"{name}: dilated variant needs dilation > 1.")
    if variant == Conv2dVariant.POINTWISE and (p.stride != 1 or p.dilation != 1):
        raise WorkloadError(f"{name}: pointwise convolution is unit-stride.")

    batch = p.N > 1
    loops: List[Dict[str, Any]] = []
    if batch:
        loops.append({"name": "n", "upper": p.N})
    if variant != Conv2dVariant.DEPTHWISE:
        loops.append({"name": "k", "upper": p.K})
    loops.append({"name": "c", "upper": p.C})
    loops += [{"name": "p", "upper": p.P}, {"name": "q", "upper": p.Q}]
    if variant != Conv2dVariant.POINTWISE:
        loops += [{"name": "r", "upper": p.R}, {"name": "s", "upper": p.S}]

    out_channel = "c" if variant == Conv2dVariant.DEPTHWISE else "k"
    if variant == Conv2dVariant.POINTWISE:
        y, x = "p", "q"
    else:
        y = f"{p.stride}*p + {p.dilation}*r"
        x = f"{p.stride}*q + {p.dilation}*s"
    n_dim = [["N", "n"]] if batch else []

    weight_dims = [] if variant == Conv2dVariant.DEPTHWISE else [["K", "k"]]
    weight_dims.append(["C", "c"])
    if variant != Conv2dVariant.POINTWISE:
        weight_dims += [["R", "r"], ["S", "s"]]

    raw = {
        "name": name,
        "kind": "conv2d",
        "loops": loops,
        "refs": [
            {"tensor": "O", "direction": "read_write", "dims": n_dim + [["K", out_channel], ["P", "p"], ["Q", "q"]]},
            {"tensor": "W", "direction": "read", "dims": weight_dims},
            {"tensor": "I", "direction": "read", "dims": n_dim + [["C", "c"], ["Y", y], ["X", x]]},
        ],
        "bytes_per_element": bytes_per_element,
        "meta": {"variant": variant.value, "stride": p.stride, "dilation": p.dilation},
    }
    return normalize(raw)


def make_gemm(p: GemmParams, name: str = "gemm", kind: str = "gemm", bytes_per_element: int = 1) -> LoopNest:
    _positive(name, M=p.M, N=p.N, K=p.K)
    return normalize({
        "name": name,
        "kind": kind,
        "loops": [{"name": "m", "upper": p.M}, {"name": "n", "upper": p.N}, {"name": "k", "upper": p.K}],
        "refs": [
            {"tensor": "C", "direction": "read_write", "dims": [["M", "m"], ["N", "n"]]},
            {"tensor": "A", "direction": "read", "dims": [["M", "m"], ["K", "k"]]},
            {"tensor": "B", "direction": "read", "dims": [["K", "k"], ["N", "n"]]},
        ],
        "bytes_per_element": bytes_per_element,
    })


def lstm_to_gemm(embedding: int, batch: int) -> GemmParams:
    """A single LSTM cell is one GEMM over the concatenated input and hidden vectors."""
    _positive("lstm", E=embedding, B=batch)
    return GemmParams(M=batch, N=embedding, K=2 * embedding)


def make_lstm(embedding: int, batch: int, name: str = "lstm", bytes_per_element: int = 1) -> LoopNest:
    return make_gemm(lstm_to_gemm(embedding, batch), name=name, kind="lstm", bytes_per_element=bytes_per_element)


def make_mlp(in_channels: int, out_channels: int, batch: int, name: str = "mlp",
             bytes_per_element: int = 1) -> LoopNest:
    return make_gemm(GemmParams(M=batch, N=out_channels, K=in_channels), name=name, kind="mlp",
                     bytes_per_element=bytes_per_element)


def make_conv1d(outputs: int, taps: int, name: str = "conv1d") -> LoopNest:
    _positive(name, outputs=outputs, taps=taps)
    return normalize({
        "name": name,
        "kind": "conv1d",
        "loops": [{"name": "i0", "upper": outputs}, {"name": "i1", "upper": taps}],
        "refs": [
            {"tensor": "O", "direction": "read_write", "dims": [["d_O", "i0"]]},
            {"tensor": "W", "direction": "read", "dims": [["d_W", "i1"]]},
            {"tensor": "I", "direction": "read", "dims": [["d_I", "i0 + i1"]]},
        ],
    })


def make_stencil(points: int, name: str = "stencil") -> LoopNest:
    """Three-point stencil O[i] = I[i] + I[i+1] + I[i+2]."""
    _positive(name, points=points)
    return normalize({
        "name": name,
        "kind": "stencil",
        "statement_kind": "stencil",
        "loops": [{"name": "i0", "upper": points}],
        "refs": [
            {"tensor": "O", "direction": "write", "dims": [["d_O", "i0"]]},
            {"tensor": "I", "direction": "read", "dims": [["d_I", "i0"]]},
            {"tensor": "I", "direction": "read", "dims": [["d_I", "i0 + 1"]]},
            {"tensor": "I", "direction": "read", "dims": [["d_I", "i0 + 2"]]},
        ],
        "reduction_op": None,
    })


def make_pooling(C: int, P: int, Q: int, R: int, S: int, stride: int = 1, op: str = "max",
                 name: str = "pooling") -> LoopNest:
    _positive(name, C=C, P=P, Q=Q, R=R, S=S, stride=stride)
    if op not in ("max", "avg"):
        raise WorkloadError(f"{name}: pooling op must be 'max' or 'avg', got '{op}'.")
    return normalize({
        "name": name,
        "kind": "pooling",
        "statement_kind": f"{op}_pool",
        "loops": [{"name": "c", "upper": C}, {"name": "p", "upper": P}, {"name": "q", "upper": Q},
                  {"name": "r", "upper": R}, {"name": "s", "upper": S}],
        "refs": [
            {"tensor": "O", "direction": "read_write", "dims": [["C", "c"], ["P", "p"], ["Q", "q"]]},
            {"tensor": "I", "direction": "read", "dims": [["C", "c"], ["Y", f"{stride}*p + r"], ["X", f"{stride}*q + s"]]},
        ],
        "reduction_op": "max" if op == "max" else "+",
    })


def make_elementwise(M: int, N: int, op: str = "residual", name: str = "elementwise") -> LoopNest:
    _positive(name, M=M, N=N)
    if op == "residual":
        refs = [
            {"tensor": "O", "direction": "write", "dims": [["M", "m"], ["N", "n"]]},
            {"tensor": "A", "direction": "read", "dims": [["M", "m"], ["N", "n"]]},
            {"tensor": "B", "direction": "read", "dims": [["M", "m"], ["N", "n"]]},
        ]
    elif op == "relu":
        refs = [
            {"tensor": "O", "direction": "write", "dims": [["M", "m"], ["N", "n"]]},
            {"tensor": "I", "direction": "read", "dims": [["M", "m"], ["N", "n"]]},
        ]
    else:
        raise WorkloadError(f"{name}: elementwise op must be 'residual' or 'relu', got '{op}'.")
    return normalize({
        "name": name, "kind": "elementwise", "statement_kind": op,
        "loops": [{"name": "m", "upper": M}, {"name": "n", "upper": N}],
        "refs": refs, "reduction_op": None,
    })


def make_triangular_gemm(M: int, K: int, name: str = "triangular_gemm") -> LoopNest:
    """Lower-triangular C[m][n] += A[m][k] * B[k][n] for n <= m."""
    _positive(name, M=M, K=K)
    return normalize({
        "name": name, "kind": "triangular_gemm",
        "loops": [{"name": "m", "upper": M}, {"name": "n", "upper": "m + 1"}, {"name": "k", "upper": K}],
        "refs": [
            {"tensor": "C", "direction": "read_write", "dims": [["M", "m"], ["N", "n"]], "extents": [M, M]},
            {"tensor": "A", "direction": "read", "dims": [["M", "m"], ["K", "k"]]},
            {"tensor": "B", "direction": "read", "dims": [["K", "k"], ["N", "n"]], "extents": [K, M]},
        ],
    })


def make_multicell_lstm(cells: int, batch: int, embedding: int, name: str = "multicell_lstm") -> LoopNest:
    """Cells chained through the hidden state: H[t+1][b][e] += W[e][k] * H[t][b][k]."""
    _positive(name, cells=cells, batch=batch, embedding=embedding)
    return normalize({
        "name": name, "kind": "multicell_lstm",
        "loops": [{"name": "t", "upper": cells}, {"name": "b", "upper": batch},
                  {"name": "e", "upper": embedding}, {"name": "k", "upper": embedding}],
        "refs": [
            {"tensor": "H", "direction": "read_write", "dims": [["T", "t + 1"], ["B", "b"], ["E", "e"]]},
            {"tensor": "W", "direction": "read", "dims": [["E", "e"], ["K", "k"]]},
            {"tensor": "H", "direction": "read", "dims": [["T", "t"], ["B", "b"], ["E", "k"]]},
        ],
    })


@dataclass(frozen=True)
class SuiteRow:
    operator: str
    variant: str
    nest: LoopNest
    conformable: bool
    failing_rules: Tuple[str, ...] = ()


def conformability_suite() -> List[SuiteRow]:
    """Small instances of every operator family with their expected verdicts."""
    rows = [
        SuiteRow("CONV1D", "regular", make_conv1d(6, 3), True),
        SuiteRow("CONV2D", "regular", make_conv2d(Conv2dParams(N=2, K=4, C=3, P=5, Q=5, R=3, S=3)), True),
        SuiteRow("CONV2D", "pointwise", make_conv2d(Conv2dParams(K=8, C=8, P=4, Q=4,
                                                                  variant=Conv2dVariant.POINTWISE)), True),
        SuiteRow("CONV2D", "depthwise", make_conv2d(Conv2dParams(K=4, C=4, P=4, Q=4, R=3, S=3,
                                                                  variant=Conv2dVariant.DEPTHWISE)), True),
        SuiteRow("CONV2D", "strided", make_conv2d(Conv2dParams(K=4, C=3, P=4, Q=4, R=3, S=3, stride=2,
                                                                variant=Conv2dVariant.STRIDED)), True),
        SuiteRow("CONV2D", "dilated", make_conv2d(Conv2dParams(K=4, C=3, P=4, Q=4, R=3, S=3, dilation=2,
                                                                variant=Conv2dVariant.DILATED)), True),
        SuiteRow("MLP", "fully connected", make_mlp(16, 8, 4), True),
        SuiteRow("Pooling", "max", make_pooling(4, 4, 4, 2, 2, stride=2, op="max"), True),
        SuiteRow("Pooling", "avg", make_pooling(4, 4, 4, 2, 2, stride=2, op="avg"), True),
        SuiteRow("GEMM", "regular", make_gemm(GemmParams(8, 8, 8)), True),
        SuiteRow("GEMM", "triangular", make_triangular_gemm(8, 8), True),
        SuiteRow("LSTM", "single cell", make_lstm(8, 4), True),
        SuiteRow("LSTM", "parametric multi-cell", make_multicell_lstm(3, 4, 8), False, ("R2",)),
        SuiteRow("Elementwise", "residual", make_elementwise(8, 8, "residual"), True),
        SuiteRow("Elementwise", "relu", make_elementwise(8, 8, "relu"), True),
        SuiteRow("Stencil", "regular", make_stencil(16), True),
    ]
    return rows


def conv2d_equivalent_dims(nest: LoopNest) -> Optional[Dict[str, Optional[str]]]:
    """Map CONV2D dimension letters to this nest's iterators, or None when no equivalent exists."""
    names = set(nest.iterator_names)
    if nest.kind == "conv2d":
        variant = dict(nest.params).get("variant", "regular")
        table = {"N": "n", "K": "k", "C": "c", "P": "p", "Q": "q", "R": "r", "S": "s"}
        if variant == Conv2dVariant.DEPTHWISE.value:
            table["K"] = "c"
        return {dim: (it if it in names else None) for dim, it in table.items()}
    if nest.kind in ("gemm", "mlp", "lstm"):
        return {"N": "m", "K": "n", "C": "k", "P": None, "Q": None, "R": None, "S": None}
    return None


# --- Workload files ---

def nest_from_entry(entry: Mapping[str, Any], bytes_per_element: int = 1) -> LoopNest:
    kind = str(entry.get("kind", "")).lower()
    name = str(entry.get("name", kind))
    bpe = int(entry.get("bytes_per_element", bytes_per_element))
    try:
        if kind == "conv2d":
            return make_conv2d(Conv2dParams.from_dict(entry), name=name, bytes_per_element=bpe)
        if kind == "gemm":
            return make_gemm(GemmParams(int(entry["M"]), int(entry["N"]), int(entry["K"])), name=name,
                             bytes_per_element=bpe)
        if kind == "mlp":
            return make_mlp(int(entry["in_channels"]), int(entry["out_channels"]), int(entry.get("batch", 1)),
                            name=name, bytes_per_element=bpe)
        if kind == "lstm":
            return make_lstm(int(entry["embedding"]), int(entry["batch"]), name=name, bytes_per_element=bpe)
        if kind == "conv1d":
            return make_conv1d(int(entry["outputs"]), int(entry["taps"]), name=name)
        if kind == "custom":
            return normalize({**entry, "name": name})
    except KeyError as e:
        raise WorkloadError(f"Workload '{name}' ({kind}) is missing field {e}.") from e
    except TypeError as e:
        raise WorkloadError(f"Workload '{name}' ({kind}) has invalid fields: {e}") from e
    raise WorkloadError(f"Workload '{name}' has unknown kind '{kind}'.")


def resolve_workload_path(path_or_name: Union[str, Path]) -> Path:
    path = Path(path_or_name)
    if path.is_file():
        return path
    bundled = WORKLOADS_DIR / f"{path_or_name}.json"
    if bundled.is_file():
        return bundled
    raise WorkloadError(f"Workload file '{path_or_name}' not found.")


def load_workload_file(path_or_name: Union[str, Path]) -> List[LoopNest]:
    path = resolve_workload_path(path_or_name)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise WorkloadError(f"Could not read workload file {path}: {e}") from e
    entries = data.get("workloads") if isinstance(data, dict) else data
    if not isinstance(entries, list) or not entries:
        raise WorkloadError(f"Workload file {path} has no 'workloads' list.")
    bpe = int(data.get("bytes_per_element", 1)) if isinstance(data, dict) else 1
    nests = []
    for entry in entries:
        try:
            nests.append(nest_from_entry(entry, bytes_per_element=bpe))
        except WorkloadError:
            raise
        except MdcMapperError as e:
            raise WorkloadError(f"Workload entry {entry.get('name', '?')} in {path}: {e.message}") from e
    logger.info(f"Loaded {len(nests)} workloads from {path.name}")
    return nests


def bundled_workload_files() -> List[Path]:
    return sorted(WORKLOADS_DIR.glob("*.json"))
