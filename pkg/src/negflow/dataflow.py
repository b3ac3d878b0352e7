"""Minimal stateful-dataflow IR: parametric maps, memlets, range propagation.

Covers exactly what the communication analysis needs: map scopes over
symbolic ranges, memlets whose per-dimension indices are affine expressions,
explicit window subsets, or engineer-supplied indirection models, a tiling
transformation, and the outward propagation of memlet ranges through a
scope.  Symbolic arithmetic is delegated to sympy; simplification is best
effort and correctness is pinned by concrete-instantiation tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import lru_cache
from itertools import product

import sympy
from sympy import Expr, Max, Min, Symbol, ceiling


class CannotPropagateError(ValueError):
    """A memlet index cannot be propagated and no model was supplied."""


def _expr(x) -> Expr:
    return sympy.sympify(x)


@dataclass(frozen=True)
class SymRange:
    """Half-open symbolic interval [lower, upper)."""

    lower: Expr
    upper: Expr

    def __post_init__(self):
        object.__setattr__(self, "lower", _expr(self.lower))
        object.__setattr__(self, "upper", _expr(self.upper))

    @property
    def length(self) -> Expr:
        diff = self.upper - self.lower
        return diff if diff.is_number else sympy.simplify(diff)

    def instantiate(self, subs: dict) -> tuple[int, int]:
        lo = self.lower if self.lower.is_Integer else self.lower.xreplace(subs)
        hi = self.upper if self.upper.is_Integer else self.upper.xreplace(subs)
        return int(lo), int(hi)

    def __str__(self) -> str:
        return f"[{self.lower}, {self.upper})"


@dataclass(frozen=True)
class IndirectionModel:
    """Engineer-supplied propagation of a non-affine index.

    The dataflow engine cannot see through data-dependent indices, so the
    propagated range and access counts must be declared; such entries are
    always flagged as approximations.
    """

    name: str
    range: SymRange
    total_accesses: Expr
    unique_accesses: Expr
    approximation: bool = True

    def __post_init__(self):
        object.__setattr__(self, "total_accesses", _expr(self.total_accesses))
        object.__setattr__(self, "unique_accesses", _expr(self.unique_accesses))
        if not self.approximation:
            raise ValueError("indirection models must be marked as approximations")
        length = self.range.length
        if length.is_number and length < 1:
            raise ValueError(f"indirection model {self.name!r} has empty range {self.range}")


IndexDim = Expr | SymRange | IndirectionModel


@dataclass(frozen=True)
class Memlet:
    """Dataflow edge: accessed array plus one index term per dimension.

    ``accumulate`` marks conflict-resolved (sum) writes.
    """

    array: str
    indices: tuple
    accumulate: bool = False

    def __post_init__(self):
        norm = tuple(
            ix if isinstance(ix, (SymRange, IndirectionModel)) else _expr(ix) for ix in self.indices
        )
        object.__setattr__(self, "indices", norm)


@dataclass(frozen=True)
class Tasklet:
    name: str
    inputs: tuple[Memlet, ...] = ()
    outputs: tuple[Memlet, ...] = ()
    code: str = ""


@dataclass(frozen=True)
class MapScope:
    """Parametric parallel iteration region."""

    name: str
    symbols: tuple[Symbol, ...]
    ranges: tuple[SymRange, ...]
    body: tuple = ()

    def __post_init__(self):
        if len(self.symbols) != len(self.ranges):
            raise ValueError("one range per map symbol required")

    def range_of(self, sym: Symbol) -> SymRange:
        for s, r in zip(self.symbols, self.ranges):
            if s == sym:
                return r
        raise KeyError(f"symbol {sym} not bound by scope {self.name!r}")

    def tasklets(self):
        for node in self.body:
            if isinstance(node, Tasklet):
                yield node

    def child_maps(self):
        for node in self.body:
            if isinstance(node, MapScope):
                yield node


@dataclass(frozen=True)
class ArrayDecl:
    name: str
    shape: tuple
    element_bytes: int = 16

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(_expr(s) for s in self.shape))


@dataclass(frozen=True)
class DataflowGraph:
    """Array declarations plus one top-level map scope."""

    arrays: tuple[ArrayDecl, ...]
    top: MapScope
    globals: tuple[Symbol, ...] = ()

    def array(self, name: str) -> ArrayDecl:
        for a in self.arrays:
            if a.name == name:
                return a
        raise KeyError(f"undeclared array {name!r}")

    def validate(self) -> None:
        """Every symbol used in a body memlet must be bound or declared global."""
        declared = set(self.globals)
        for decl in self.arrays:
            for dim in decl.shape:
                declared |= dim.free_symbols

        def walk(scope: MapScope, bound: set):
            bound = bound | set(scope.symbols)
            for rng in scope.ranges:
                missing = (rng.lower.free_symbols | rng.upper.free_symbols) - bound - declared
                if missing:
                    raise ValueError(f"unbound symbols {missing} in range of scope {scope.name!r}")
            for node in scope.body:
                if isinstance(node, MapScope):
                    walk(node, bound)
                    continue
                for memlet in list(node.inputs) + list(node.outputs):
                    for dim in memlet.indices:
                        if isinstance(dim, IndirectionModel):
                            free = dim.range.lower.free_symbols | dim.range.upper.free_symbols
                            free |= dim.unique_accesses.free_symbols | dim.total_accesses.free_symbols
                        elif isinstance(dim, SymRange):
                            free = dim.lower.free_symbols | dim.upper.free_symbols
                        else:
                            free = dim.free_symbols
                        missing = free - bound - declared
                        if missing:
                            raise ValueError(
                                f"unbound symbols {missing} in memlet of array {memlet.array!r}"
                            )

        walk(self.top, set())


def tile_map(scope: MapScope, tile_sizes: dict, clip: bool = True) -> MapScope:
    """Split a map into an outer partition map and an inner tile map.

    ``tile_sizes`` maps symbol name to tile size (int or symbolic); omitted
    dimensions get the full extent as one tile.  The outer symbols ``t_<d>``
    span ``ceiling(extent / size)`` partitions; each inner symbol covers
    ``[t*s, (t+1)*s)``, clipped to the original upper bound when ``clip``.
    With clipping the flattened iteration space is identical to the original
    map's; the unclipped form is the full-tile model used by the analytic
    propagation formulas.
    """
    outer_syms, outer_ranges, inner_ranges = [], [], []
    for sym, rng in zip(scope.symbols, scope.ranges):
        size = _expr(tile_sizes.get(sym.name, rng.length))
        if size.is_number:
            if size < 1:
                raise ValueError(f"tile size for {sym} must be >= 1, got {size}")
            if rng.length.is_number and size > rng.length:
                raise ValueError(f"tile size {size} for {sym} exceeds extent {rng.length}")
        t_sym = Symbol(f"t_{sym.name}", integer=True, nonnegative=True)
        outer_syms.append(t_sym)
        outer_ranges.append(SymRange(0, ceiling(rng.length / size)))
        lower = rng.lower + t_sym * size
        upper = rng.lower + (t_sym + 1) * size
        if clip:
            # unevaluated Min: assumption queries on the tile symbol are
            # expensive and the bound evaluates on instantiation anyway
            upper = Min(rng.upper, upper, evaluate=False)
        inner_ranges.append(SymRange(lower, upper))
    inner = MapScope(
        name=f"{scope.name}_tile",
        symbols=scope.symbols,
        ranges=tuple(inner_ranges),
        body=scope.body,
    )
    return MapScope(
        name=f"{scope.name}_partitions",
        symbols=tuple(outer_syms),
        ranges=tuple(outer_ranges),
        body=(inner,),
    )


@lru_cache(maxsize=4096)
def _clamped_unique(extent: Expr, length: Expr) -> Expr:
    # Min construction triggers costly relational analysis in sympy; the
    # same (extent, length) pairs recur constantly during enumeration tests.
    return Min(extent, length)


@dataclass(frozen=True)
class DimPropagation:
    """Propagation result of one memlet dimension through one scope."""

    range: SymRange
    total_accesses: Expr
    unique_accesses: Expr
    approximation: bool = False


@dataclass(frozen=True)
class MemletPropagation:
    dims: tuple[DimPropagation, ...]

    @property
    def range(self) -> SymRange:
        if len(self.dims) != 1:
            raise ValueError("range is single-dimension shorthand; use .dims")
        return self.dims[0].range

    @property
    def total_accesses(self) -> Expr:
        out = sympy.Integer(1)
        for d in self.dims:
            out *= d.total_accesses
        return sympy.simplify(out)

    @property
    def unique_accesses(self) -> Expr:
        out = sympy.Integer(1)
        for d in self.dims:
            out *= d.unique_accesses
        return sympy.simplify(out)


def _propagate_affine(expr: Expr, scope: MapScope, extent: Expr) -> DimPropagation:
    expanded = sympy.expand(expr)
    scope_syms = set(scope.symbols)
    coeffs: dict[Symbol, Expr] = {}
    rest = expanded
    for sym in scope.symbols:
        c = expanded.coeff(sym, 1)
        if c.free_symbols & scope_syms:
            raise CannotPropagateError(f"cannot propagate non-affine index {expr}")
        if c != 0:
            coeffs[sym] = c
            rest = rest - c * sym
    if rest.free_symbols & scope_syms:
        raise CannotPropagateError(f"cannot propagate non-affine index {expr}")
    for c in coeffs.values():
        if not c.is_number or not c.is_integer:
            raise CannotPropagateError(f"cannot propagate non-integer stride in {expr}")

    lo = rest
    hi = rest
    for sym, c in coeffs.items():
        rng = scope.range_of(sym)
        if c > 0:
            lo = lo + c * rng.lower
            hi = hi + c * (rng.upper - 1)
        else:
            lo = lo + c * (rng.upper - 1)
            hi = hi + c * rng.lower
    lo = sympy.expand(lo)
    hi = sympy.expand(hi)
    length = sympy.expand(hi - lo + 1)

    if all(abs(c) <= 1 for c in coeffs.values()):
        # Unit strides make the image a contiguous integer range, so the
        # unique count is the range length clamped to the array extent.
        unique = _clamped_unique(extent, length) if extent is not None else length
    elif len(coeffs) == 1:
        (sym,) = coeffs
        unique = scope.range_of(sym).length
    else:
        raise CannotPropagateError(f"cannot propagate multi-symbol strided index {expr}")
    return DimPropagation(
        range=SymRange(lo, hi + 1),
        total_accesses=length,
        unique_accesses=unique,
    )


def _propagate_window(window: SymRange, scope: MapScope, extent: Expr) -> DimPropagation:
    lo_prop = _propagate_affine(window.lower, scope, None)
    hi_prop = _propagate_affine(window.upper - 1, scope, None)
    lo = lo_prop.range.lower
    hi = hi_prop.range.upper - 1
    length = sympy.expand(hi - lo + 1)
    unique = _clamped_unique(extent, length) if extent is not None else length
    return DimPropagation(
        range=SymRange(lo, hi + 1),
        total_accesses=length,
        unique_accesses=unique,
    )


def propagate_memlet(scope: MapScope, memlet: Memlet, array: ArrayDecl | None = None) -> MemletPropagation:
    """Propagate every index dimension of a memlet to the scope boundary.

    Affine indices with unit strides propagate to a contiguous range whose
    clamped length is the unique-access count; the total count is the
    unclamped range length.  Window subsets propagate their bounds.  Any
    other index must carry an :class:`IndirectionModel`, whose declared
    values are returned verbatim; there is no silent over-approximation.
    """
    dims = []
    for axis, ix in enumerate(memlet.indices):
        extent = array.shape[axis] if array is not None and axis < len(array.shape) else None
        if isinstance(ix, IndirectionModel):
            dims.append(
                DimPropagation(
                    range=ix.range,
                    total_accesses=ix.total_accesses,
                    unique_accesses=ix.unique_accesses,
                    approximation=True,
                )
            )
        elif isinstance(ix, SymRange):
            dims.append(_propagate_window(ix, scope, extent))
        else:
            dims.append(_propagate_affine(ix, scope, extent))
    return MemletPropagation(dims=tuple(dims))


def neighbor_indirection(t_a, s_a, n_a, n_b, name: str = "f(a,b)") -> IndirectionModel:
    """Standard model for the atom-neighbor indirection over a tiled atom range.

    Atoms with nearby indices are almost always neighbors, so the access
    f(a,b) over [t_a s_a, (t_a+1) s_a) x [0, N_B) is modeled by the declared
    range below with s_a * N_B total and min(N_A, s_a + N_B) unique accesses.
    """
    t_a, s_a, n_a, n_b = map(_expr, (t_a, s_a, n_a, n_b))
    rng = SymRange(Min(0, t_a * s_a - n_b / 2), Max(n_a, (t_a + 1) * s_a + n_b / 2))
    return IndirectionModel(
        name=name,
        range=rng,
        total_accesses=s_a * n_b,
        unique_accesses=Min(n_a, s_a + n_b),
    )


def volume_between_maps(outer: MapScope, graph: DataflowGraph) -> dict[str, Expr]:
    """Per-array bytes crossing the boundary between the two nested maps.

    Requires an outer partition map containing exactly one inner map; sums
    unique accesses times element size over every boundary memlet of each
    array.  Raises if any memlet cannot be propagated.
    """
    inner_maps = list(outer.child_maps())
    if len(inner_maps) != 1:
        raise ValueError("volume_between_maps expects an outer map holding exactly one inner map")
    inner = inner_maps[0]
    volumes: dict[str, Expr] = {}
    for tasklet in inner.tasklets():
        for memlet in list(tasklet.inputs) + list(tasklet.outputs):
            decl = graph.array(memlet.array)
            prop = propagate_memlet(inner, memlet, decl)
            contribution = prop.unique_accesses * decl.element_bytes
            volumes[memlet.array] = sympy.simplify(volumes.get(memlet.array, sympy.Integer(0)) + contribution)
    return volumes


def iteration_points(scope: MapScope, env: dict | None = None) -> list[dict]:
    """Concrete leaf iterations of a (possibly nested) map under ``env``."""
    env = dict(env or {})
    spans = []
    for sym, rng in zip(scope.symbols, scope.ranges):
        lo, hi = rng.instantiate(env)
        spans.append([(sym, v) for v in range(lo, hi)])
    points = []
    for combo in product(*spans):
        local = dict(env)
        local.update({s: v for s, v in combo})
        children = list(scope.child_maps())
        if children:
            for child in children:
                points.extend(iteration_points(child, local))
        else:
            points.append(local)
    return points


def _dim_to_json(dim) -> dict:
    if isinstance(dim, IndirectionModel):
        return {
            "kind": "indirection",
            "name": dim.name,
            "range": [str(dim.range.lower), str(dim.range.upper)],
            "total": str(dim.total_accesses),
            "unique": str(dim.unique_accesses),
            "approximation": True,
        }
    if isinstance(dim, SymRange):
        return {"kind": "window", "range": [str(dim.lower), str(dim.upper)]}
    return {"kind": "affine", "index": str(dim)}


def _memlet_to_json(memlet: Memlet) -> dict:
    return {
        "array": memlet.array,
        "indices": [_dim_to_json(d) for d in memlet.indices],
        "accumulate": memlet.accumulate,
    }


def _scope_to_json(scope: MapScope) -> dict:
    body = []
    for node in scope.body:
        if isinstance(node, MapScope):
            body.append({"map": _scope_to_json(node)})
        else:
            body.append(
                {
                    "tasklet": {
                        "name": node.name,
                        "code": node.code,
                        "inputs": [_memlet_to_json(m) for m in node.inputs],
                        "outputs": [_memlet_to_json(m) for m in node.outputs],
                    }
                }
            )
    return {
        "name": scope.name,
        "symbols": [str(s) for s in scope.symbols],
        "ranges": [[str(r.lower), str(r.upper)] for r in scope.ranges],
        "body": body,
    }


def graph_to_json(graph: DataflowGraph) -> str:
    payload = {
        "arrays": [
            {"name": a.name, "shape": [str(s) for s in a.shape], "element_bytes": a.element_bytes}
            for a in graph.arrays
        ],
        "map": _scope_to_json(graph.top),
    }
    return json.dumps(payload, indent=2)


@dataclass(frozen=True)
class SseGraph:
    """Tiled dataflow model of the self-energy kernel plus handy handles."""

    graph: DataflowGraph
    outer: MapScope
    inner: MapScope
    symbols: dict[str, Symbol]


def build_sse_graph(tile_e="s_E", tile_a="s_A") -> SseGraph:
    """Dataflow model of the SSE kernel, tiled over energies and atoms.

    One map over the 8-D point space; per-array boundary memlets model the
    combined consumer footprints: the electron arrays carry the frequency
    window [E - N_w, E + N_w) and the neighbor-indirection atom range (the
    self-energy redistribution is modeled at the same halo footprint), and
    the phonon arrays carry the halo-extended atom range of the analytic
    volume model.  Orbital and vibration dims are full-range windows.
    """
    names = ["N_kz", "N_E", "N_qz", "N_w", "N_A", "N_B", "N_orb", "N_3D"]
    n = {nm: Symbol(nm, integer=True, positive=True) for nm in names}
    k, e_sym, q, w, i, j, a, b = sympy.symbols("k E q w i j a b", integer=True, nonnegative=True)

    arrays = tuple(
        ArrayDecl(name, shape)
        for name, shape in [
            ("G_lesser", (n["N_kz"], n["N_E"], n["N_A"], n["N_orb"], n["N_orb"])),
            ("G_greater", (n["N_kz"], n["N_E"], n["N_A"], n["N_orb"], n["N_orb"])),
            ("Sigma_lesser", (n["N_kz"], n["N_E"], n["N_A"], n["N_orb"], n["N_orb"])),
            ("Sigma_greater", (n["N_kz"], n["N_E"], n["N_A"], n["N_orb"], n["N_orb"])),
            ("D_lesser", (n["N_qz"], n["N_w"], n["N_A"], n["N_B"], n["N_3D"], n["N_3D"])),
            ("D_greater", (n["N_qz"], n["N_w"], n["N_A"], n["N_B"], n["N_3D"], n["N_3D"])),
            ("Pi_lesser", (n["N_qz"], n["N_w"], n["N_A"], n["N_B"], n["N_3D"], n["N_3D"])),
            ("Pi_greater", (n["N_qz"], n["N_w"], n["N_A"], n["N_B"], n["N_3D"], n["N_3D"])),
            ("dH", (n["N_A"], n["N_B"], n["N_3D"], n["N_orb"], n["N_orb"])),
        ]
    )

    base = MapScope(
        name="sse",
        symbols=(k, e_sym, q, w, i, j, a, b),
        ranges=(
            SymRange(0, n["N_kz"]),
            SymRange(0, n["N_E"]),
            SymRange(0, n["N_qz"]),
            SymRange(0, n["N_w"]),
            SymRange(0, n["N_3D"]),
            SymRange(0, n["N_3D"]),
            SymRange(0, n["N_A"]),
            SymRange(0, n["N_B"]),
        ),
        body=(),
    )
    tiled_empty = tile_map(base, {"E": tile_e, "a": tile_a}, clip=False)
    inner_empty = next(iter(tiled_empty.child_maps()))
    t_a = next(s for s in tiled_empty.symbols if s.name == "t_a")
    s_a = _expr(tile_a)

    f_model = neighbor_indirection(t_a, s_a, n["N_A"], n["N_B"])
    # Union of the two energy consumers: E-off for Sigma, E+off for Pi,
    # offsets 1..N_w, plus the unshifted point itself.
    window_e = SymRange(e_sym - n["N_w"], e_sym + n["N_w"] + 1)
    orb = SymRange(0, n["N_orb"])
    vib = SymRange(0, n["N_3D"])

    def electron(array: str, accumulate: bool = False) -> Memlet:
        return Memlet(array, (k - q, window_e, f_model, orb, orb), accumulate=accumulate)

    def phonon(array: str, accumulate: bool = False) -> Memlet:
        return Memlet(array, (q, w, f_model, b, i, j), accumulate=accumulate)

    tasklet = Tasklet(
        name="sse_point",
        code="Sigma[k,E,a] += (G[k-q,E-w,f] @ dH[a,b,i]) @ (dH[a,b,j] * D[q,w,a,b,i,j])",
        inputs=(
            electron("G_lesser"),
            electron("G_greater"),
            phonon("D_lesser"),
            phonon("D_greater"),
            Memlet("dH", (f_model, b, i, orb, orb)),
        ),
        outputs=(
            electron("Sigma_lesser", accumulate=True),
            electron("Sigma_greater", accumulate=True),
            phonon("Pi_lesser", accumulate=True),
            phonon("Pi_greater", accumulate=True),
        ),
    )

    inner = replace(inner_empty, body=(tasklet,))
    outer = replace(tiled_empty, body=(inner,))
    tile_syms = tuple(_expr(tile_e).free_symbols | s_a.free_symbols)
    graph = DataflowGraph(arrays=arrays, top=outer, globals=tuple(n.values()) + tile_syms)
    symbols = dict(n)
    symbols.update({s.name: s for s in outer.symbols})
    symbols.update({s.name: s for s in inner.symbols})
    for name, sym in (("s_E", _expr(tile_e)), ("s_A", s_a)):
        if isinstance(sym, Symbol):
            symbols[name] = sym
    graph.validate()
    return SseGraph(graph=graph, outer=outer, inner=inner, symbols=symbols)
