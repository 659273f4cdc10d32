"""
MDC Mapper: Loop Nest IR
Normalized perfectly nested loops with affine tensor subscripts, plus the
footprint arithmetic both cost models share.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import parse_expr

from mdc_mapper_errors import NormalizationError, TileRangeError

logger = logging.getLogger(__name__)


class Direction(Enum):
    READ = "read"
    WRITE = "write"
    READ_WRITE = "read_write"  # reduction target


class SubscriptKind(Enum):
    CONSTANT = "Constant"
    SIV = "SIV"
    MIV = "MIV"


@dataclass(frozen=True)
class LoopIterator:
    name: str
    extent: int
    bound_dependency: Tuple[str, ...] = ()
    upper_expr: Optional[str] = None  # only kept for bounds that depend on outer iterators

    def __post_init__(self):
        if self.extent < 1:
            raise NormalizationError(f"Iterator '{self.name}' has extent {self.extent}; must be >= 1.")


@dataclass(frozen=True)
class Subscript:
    terms: Tuple[Tuple[str, int], ...] = ()
    constant: int = 0
    affine: bool = True
    expression: Optional[str] = None

    @property
    def iterators(self) -> Tuple[str, ...]:
        return tuple(name for name, _ in self.terms)

    @property
    def kind(self) -> SubscriptKind:
        return classify_subscript(self)

    def coefficient(self, iterator: str) -> int:
        for name, coeff in self.terms:
            if name == iterator:
                return coeff
        return 0

    def uses(self, iterator: str) -> bool:
        return any(name == iterator for name, _ in self.terms)

    def value(self, point: Mapping[str, int]) -> int:
        return self.constant + sum(coeff * point[name] for name, coeff in self.terms)

    def span(self, sizes: Mapping[str, int]) -> int:
        """Number of index positions covered when each iterator sweeps sizes[i] values."""
        return sum(abs(coeff) * (sizes[name] - 1) for name, coeff in self.terms) + 1

    def render(self) -> str:
        if not self.affine and self.expression:
            return self.expression
        parts: List[str] = []
        for name, coeff in self.terms:
            body = name if abs(coeff) == 1 else f"{abs(coeff)}*{name}"
            if not parts:
                parts.append(body if coeff > 0 else f"-{body}")
            else:
                parts.append(f"+ {body}" if coeff > 0 else f"- {body}")
        if self.constant or not parts:
            if not parts:
                parts.append(str(self.constant))
            else:
                parts.append(f"+ {self.constant}" if self.constant > 0 else f"- {-self.constant}")
        return " ".join(parts)

    def __str__(self) -> str:
        return self.render()


def classify_subscript(s: Subscript) -> SubscriptKind:
    distinct = {name for name, _ in s.terms}
    if not distinct:
        return SubscriptKind.CONSTANT
    if len(distinct) == 1:
        return SubscriptKind.SIV
    return SubscriptKind.MIV


@dataclass(frozen=True)
class TensorRef:
    tensor: str
    direction: Direction
    dims: Tuple[Tuple[str, Subscript], ...]
    dim_extents: Tuple[int, ...]

    def __post_init__(self):
        if not self.dims:
            raise NormalizationError(f"Reference to '{self.tensor}' has no dimensions.")
        if len(self.dims) != len(self.dim_extents):
            raise NormalizationError(f"Reference to '{self.tensor}' lists {len(self.dims)} dims but "
                                     f"{len(self.dim_extents)} extents.")

    @property
    def dim_vars(self) -> Tuple[str, ...]:
        return tuple(dim_var for dim_var, _ in self.dims)

    @property
    def subscripts(self) -> Tuple[Subscript, ...]:
        return tuple(sub for _, sub in self.dims)

    @property
    def iterators(self) -> Tuple[str, ...]:
        seen: List[str] = []
        for sub in self.subscripts:
            for name in sub.iterators:
                if name not in seen:
                    seen.append(name)
        return tuple(seen)

    @property
    def is_read(self) -> bool:
        return self.direction in (Direction.READ, Direction.READ_WRITE)

    @property
    def is_written(self) -> bool:
        return self.direction in (Direction.WRITE, Direction.READ_WRITE)

    def render(self) -> str:
        return self.tensor + "".join(f"[{sub.render()}]" for sub in self.subscripts)


@dataclass(frozen=True)
class LoopNest:
    iterators: Tuple[LoopIterator, ...]
    body_refs: Tuple[TensorRef, ...]
    reduction_dims: Tuple[str, ...] = ()
    statement_kind: str = "mac"
    bytes_per_element: int = 1
    name: str = ""
    kind: str = "custom"
    reduction_op: Optional[str] = "+"
    perfectly_nested: bool = True
    has_conditionals: bool = False
    statement_count: int = 1
    params: Tuple[Tuple[str, Any], ...] = ()

    def __post_init__(self):
        if self.bytes_per_element < 1:
            raise NormalizationError(f"bytes_per_element must be >= 1, got {self.bytes_per_element}.")
        names = [it.name for it in self.iterators]
        if len(set(names)) != len(names):
            raise NormalizationError(f"Duplicate iterator names in {names}.")

    # --- lookups ---
    @property
    def iterator_names(self) -> Tuple[str, ...]:
        return tuple(it.name for it in self.iterators)

    @property
    def extents(self) -> Dict[str, int]:
        return {it.name: it.extent for it in self.iterators}

    def extent_of(self, name: str) -> int:
        for it in self.iterators:
            if it.name == name:
                return it.extent
        raise KeyError(name)

    def index_of(self, name: str) -> int:
        return self.iterator_names.index(name)

    @property
    def macs(self) -> int:
        return math.prod(it.extent for it in self.iterators)

    @property
    def tensors(self) -> Tuple[str, ...]:
        seen: List[str] = []
        for ref in self.body_refs:
            if ref.tensor not in seen:
                seen.append(ref.tensor)
        return tuple(seen)

    def refs_of(self, tensor: str) -> Tuple[TensorRef, ...]:
        return tuple(ref for ref in self.body_refs if ref.tensor == tensor)

    def tensor_shape(self, tensor: str) -> Tuple[int, ...]:
        return self.refs_of(tensor)[0].dim_extents

    def tensor_sizes(self) -> Dict[str, int]:
        return {t: math.prod(self.tensor_shape(t)) for t in self.tensors}

    @property
    def vacuous_iterators(self) -> Tuple[str, ...]:
        used = {name for ref in self.body_refs for name in ref.iterators}
        return tuple(name for name in self.iterator_names if name not in used)

    @property
    def output_tensors(self) -> Tuple[str, ...]:
        return tuple(t for t in self.tensors if any(r.is_written for r in self.refs_of(t)))

    def statement(self) -> str:
        writes = [r for r in self.body_refs if r.is_written]
        reads = [r for r in self.body_refs if r.direction == Direction.READ]
        lhs = ", ".join(r.render() for r in writes) or "_"
        op = f"{self.reduction_op}=" if any(r.direction == Direction.READ_WRITE for r in writes) else "="
        rhs = " * ".join(r.render() for r in reads) or "0"
        return f"{lhs} {op} {rhs}"

    def to_dict(self) -> Dict[str, Any]:
        return to_raw(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "LoopNest":
        return normalize(data)


# --- Raw description handling ---

RawNest = Mapping[str, Any]


def _symbols(names: Iterable[str]) -> Dict[str, sp.Symbol]:
    return {name: sp.Symbol(name, integer=True) for name in names}


def _parse(text: Union[str, int], local: Mapping[str, Any], what: str) -> sp.Expr:
    if isinstance(text, int):
        return sp.Integer(text)
    try:
        return sp.sympify(parse_expr(str(text), local_dict=dict(local)))
    except Exception as e:
        raise NormalizationError(f"Cannot parse {what} '{text}': {e}") from e


def _affine_terms(expr: sp.Expr, syms: Sequence[sp.Symbol]) -> Optional[Tuple[List[Tuple[str, sp.Rational]], sp.Rational]]:
    """Returns (terms, constant) when expr is affine in syms with numeric coefficients."""
    expr = sp.expand(expr)
    if not syms:
        return ([], expr) if expr.is_number else None
    free = expr.free_symbols - set(syms)
    if free:
        return None
    try:
        poly = sp.Poly(expr, *syms)
    except sp.PolynomialError:
        return None
    if poly.total_degree() > 1:
        return None
    terms = []
    for sym in syms:
        coeff = poly.coeff_monomial(sym)
        if coeff != 0:
            terms.append((sym.name, coeff))
    constant = poly.coeff_monomial(1)
    return terms, constant


def _subscript_from_expr(expr: sp.Expr, order: Sequence[str], syms: Mapping[str, sp.Symbol]) -> Subscript:
    used = [name for name in order if syms[name] in expr.free_symbols]
    affine = _affine_terms(expr, [syms[n] for n in used])
    if affine is not None:
        terms, constant = affine
        if all(c.is_integer for _, c in terms) and constant.is_integer:
            return Subscript(tuple((name, int(c)) for name, c in terms), int(constant))
    logger.debug(f"Non-affine subscript kept as expression: {expr}")
    return Subscript(tuple((name, 1) for name in used), 0, affine=False, expression=str(expr))


def normalize(raw: Union[RawNest, LoopNest]) -> LoopNest:
    """Rewrite a raw loop description so every iterator starts at 0 with stride 1.

    Raw loops are ``{"name", "lower", "upper", "step"}`` with an exclusive upper
    bound; bounds may be affine in outer iterators and in ``params``.
    """
    if isinstance(raw, LoopNest):
        raw = to_raw(raw)

    params = dict(raw.get("params", {}) or {})
    loops = list(raw.get("loops", []))
    names = [str(loop["name"]) for loop in loops]
    if len(set(names)) != len(names):
        raise NormalizationError(f"Duplicate loop names: {names}")
    syms = _symbols(names)
    param_syms = {k: sp.Integer(int(v)) for k, v in params.items()}

    substitution: Dict[sp.Symbol, sp.Expr] = {}   # original iterator -> expression in normalized ones
    ranges: Dict[str, Tuple[int, int]] = {}       # original-value min/max per iterator
    iterators: List[LoopIterator] = []

    for idx, loop in enumerate(loops):
        name = names[idx]
        outer = names[:idx]
        local = {**param_syms, **{n: syms[n] for n in outer}}
        lower = _parse(loop.get("lower", 0), local, f"lower bound of '{name}'")
        upper = _parse(loop["upper"], local, f"upper bound of '{name}'")
        step = _parse(loop.get("step", 1), {**param_syms}, f"step of '{name}'")
        if not (step.is_number and step.is_integer and step > 0):
            raise NormalizationError(f"Loop '{name}' has non-constant or non-positive step '{loop.get('step')}'.")
        step_i = int(step)

        outer_syms = [syms[n] for n in outer]
        for bound, label in ((lower, "lower"), (upper, "upper")):
            if _affine_terms(bound, [s for s in outer_syms if s in bound.free_symbols]) is None:
                raise NormalizationError(f"Loop '{name}' has non-affine {label} bound '{bound}'.")
        depends = tuple(n for n in outer if syms[n] in (lower.free_symbols | upper.free_symbols))

        # extent is the maximum trip count over the corners of the outer iterators it depends on
        trip = (upper - lower) / step_i
        if depends:
            corners = itertools.product(*(ranges[n] for n in depends))
            extent = max(int(sp.ceiling(trip.subs({syms[n]: v for n, v in zip(depends, corner)})))
                         for corner in corners)
        elif trip.is_number:
            extent = int(sp.ceiling(trip))
        else:
            raise NormalizationError(f"Loop '{name}' bounds use unknown symbols {sorted(map(str, trip.free_symbols))}.")
        if extent < 1:
            raise NormalizationError(f"Loop '{name}' has empty range ({lower}..{upper} step {step_i}).")

        lower_in_new = lower.subs(substitution)
        substitution[syms[name]] = sp.expand(lower_in_new + step_i * syms[name])
        lo_vals = [int(lower.subs({syms[n]: v for n, v in zip(depends, c)}))
                   for c in itertools.product(*(ranges[n] for n in depends))] if depends else [int(lower)]
        ranges[name] = (min(lo_vals), max(lo_vals) + step_i * (extent - 1))

        upper_expr = None
        if depends:
            new_upper = sp.expand(((upper - lower) / step_i).subs(substitution))
            upper_expr = str(new_upper)
        iterators.append(LoopIterator(name, extent, depends, upper_expr))

    extents = {it.name: it.extent for it in iterators}
    refs: List[TensorRef] = []
    for ref in raw.get("refs", []):
        tensor = str(ref["tensor"])
        direction = Direction(ref.get("direction", "read"))
        dims: List[Tuple[str, Subscript]] = []
        for dim_var, text in ref["dims"]:
            expr = _parse(text, {**param_syms, **syms}, f"subscript of '{tensor}'").subs(substitution)
            dims.append((str(dim_var), _subscript_from_expr(sp.expand(expr), names, syms)))
        given = ref.get("extents")
        dim_extents: List[int] = []
        for pos, (dim_var, sub) in enumerate(dims):
            if sub.affine:
                low = sub.constant + sum(min(0, c) * (extents[n] - 1) for n, c in sub.terms)
                high = sub.constant + sum(max(0, c) * (extents[n] - 1) for n, c in sub.terms)
                if low < 0:
                    raise NormalizationError(f"Subscript '{sub}' of '{tensor}' reaches negative index {low}.")
                if given is not None and int(given[pos]) <= high:
                    raise NormalizationError(f"Extent {given[pos]} of '{tensor}' dim {pos} too small "
                                             f"for subscript '{sub}' (max {high}).")
                dim_extents.append(int(given[pos]) if given is not None else high + 1)
            else:
                if given is None:
                    raise NormalizationError(f"Non-affine subscript '{sub}' of '{tensor}' needs explicit extents.")
                dim_extents.append(int(given[pos]))
        refs.append(TensorRef(tensor, direction, tuple(dims), tuple(dim_extents)))

    # all references to one tensor share its shape
    shapes: Dict[str, Tuple[int, ...]] = {}
    for ref in refs:
        prev = shapes.get(ref.tensor)
        if prev is not None and len(prev) != len(ref.dim_extents):
            raise NormalizationError(f"Tensor '{ref.tensor}' referenced with different ranks.")
        shapes[ref.tensor] = ref.dim_extents if prev is None else tuple(map(max, prev, ref.dim_extents))
    refs = [TensorRef(r.tensor, r.direction, r.dims, shapes[r.tensor]) for r in refs]

    reduction_dims = tuple(raw.get("reduction_dims", ()) or ())
    if not reduction_dims:
        written = {n for r in refs if r.is_written for n in r.iterators}
        reduction_dims = tuple(n for n in names if n not in written
                               and any(r.direction == Direction.READ_WRITE for r in refs))

    nest = LoopNest(
        iterators=tuple(iterators),
        body_refs=tuple(refs),
        reduction_dims=reduction_dims,
        statement_kind=str(raw.get("statement_kind", "mac")),
        bytes_per_element=int(raw.get("bytes_per_element", 1)),
        name=str(raw.get("name", "")),
        kind=str(raw.get("kind", "custom")),
        reduction_op=raw.get("reduction_op", "+"),
        perfectly_nested=bool(raw.get("perfectly_nested", True)),
        has_conditionals=bool(raw.get("has_conditionals", False)),
        statement_count=int(raw.get("statement_count", 1)),
        params=tuple(sorted((str(k), v) for k, v in (raw.get("meta", {}) or {}).items())),
    )
    vacuous = nest.vacuous_iterators
    if vacuous:
        logger.warning(f"Nest '{nest.name}' has vacuous iterators {list(vacuous)}.")
    return nest


def to_raw(nest: LoopNest) -> Dict[str, Any]:
    """Inverse of normalize for an already normalized nest."""
    return {
        "name": nest.name,
        "kind": nest.kind,
        "loops": [{"name": it.name, "lower": 0,
                   "upper": it.upper_expr if it.upper_expr is not None else it.extent, "step": 1}
                  for it in nest.iterators],
        "refs": [{"tensor": ref.tensor, "direction": ref.direction.value,
                  "dims": [[dim_var, sub.render()] for dim_var, sub in ref.dims],
                  "extents": list(ref.dim_extents)}
                 for ref in nest.body_refs],
        "reduction_dims": list(nest.reduction_dims),
        "statement_kind": nest.statement_kind,
        "bytes_per_element": nest.bytes_per_element,
        "reduction_op": nest.reduction_op,
        "perfectly_nested": nest.perfectly_nested,
        "has_conditionals": nest.has_conditionals,
        "statement_count": nest.statement_count,
        "meta": dict(nest.params),
    }


# --- Footprints ---

def check_tile(nest: LoopNest, tile: Mapping[str, int]) -> None:
    for it in nest.iterators:
        if it.name not in tile:
            raise TileRangeError(f"Tile has no size for iterator '{it.name}'.")
        size = tile[it.name]
        if not (1 <= int(size) <= it.extent):
            raise TileRangeError(f"Tile size {size} for '{it.name}' outside [1, {it.extent}].")


def ref_footprint(ref: TensorRef, tile: Mapping[str, int]) -> int:
    return math.prod(min(sub.span(tile), extent) for sub, extent in zip(ref.subscripts, ref.dim_extents))


def tensor_footprint(nest: LoopNest, tile: Mapping[str, int]) -> Dict[str, int]:
    """Elements of each tensor touched by one tile.

    References to the same tensor with identical iterator terms are merged into
    their bounding box; otherwise their footprints are summed.
    """
    check_tile(nest, tile)
    footprint: Dict[str, int] = {}
    for tensor in nest.tensors:
        refs = nest.refs_of(tensor)
        shape = refs[0].dim_extents
        if len(refs) == 1:
            footprint[tensor] = ref_footprint(refs[0], tile)
            continue
        same_terms = all(tuple(s.terms for s in r.subscripts) == tuple(s.terms for s in refs[0].subscripts)
                         for r in refs)
        if same_terms:
            per_dim = []
            for pos, sub in enumerate(refs[0].subscripts):
                consts = [r.subscripts[pos].constant for r in refs]
                per_dim.append(min(max(consts) - min(consts) + sub.span(tile), shape[pos]))
            footprint[tensor] = math.prod(per_dim)
        else:
            footprint[tensor] = min(sum(ref_footprint(r, tile) for r in refs), math.prod(shape))
    return footprint


def tensor_footprint_matrix(nest: LoopNest, tiles: np.ndarray) -> Dict[str, np.ndarray]:
    """Vectorized tensor_footprint over the rows of ``tiles`` (one column per iterator, nest order)."""
    index = {name: k for k, name in enumerate(nest.iterator_names)}

    def spans(sub: Subscript) -> np.ndarray:
        total = np.ones(tiles.shape[0], dtype=np.int64)
        for name, coeff in sub.terms:
            total = total + abs(coeff) * (tiles[:, index[name]] - 1)
        return total

    footprint: Dict[str, np.ndarray] = {}
    for tensor in nest.tensors:
        refs = nest.refs_of(tensor)
        shape = refs[0].dim_extents
        same_terms = all(tuple(s.terms for s in r.subscripts) == tuple(s.terms for s in refs[0].subscripts)
                         for r in refs)
        if same_terms:
            result = np.ones(tiles.shape[0], dtype=np.int64)
            for pos, sub in enumerate(refs[0].subscripts):
                consts = [r.subscripts[pos].constant for r in refs]
                result = result * np.minimum(max(consts) - min(consts) + spans(sub), shape[pos])
        else:
            result = np.zeros(tiles.shape[0], dtype=np.int64)
            for r in refs:
                part = np.ones(tiles.shape[0], dtype=np.int64)
                for sub, extent in zip(r.subscripts, r.dim_extents):
                    part = part * np.minimum(spans(sub), extent)
                result = result + part
            result = np.minimum(result, math.prod(shape))
        footprint[tensor] = result
    return footprint


def footprint_bytes(nest: LoopNest, tile: Mapping[str, int]) -> int:
    return sum(tensor_footprint(nest, tile).values()) * nest.bytes_per_element


if __name__ == "__main__":
    logging.basicConfig(level=logging.DEBUG)
    conv1d = normalize({
        "name": "conv1d",
        "loops": [{"name": "i0", "upper": 6}, {"name": "i1", "upper": 3}],
        "refs": [{"tensor": "O", "direction": "read_write", "dims": [["d_O", "i0"]]},
                 {"tensor": "W", "direction": "read", "dims": [["d_W", "i1"]]},
                 {"tensor": "I", "direction": "read", "dims": [["d_I", "i0 + i1"]]}],
    })
    print(conv1d.statement())
    print(tensor_footprint(conv1d, {"i0": 2, "i1": 3}))
