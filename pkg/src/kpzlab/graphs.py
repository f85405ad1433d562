"""Labelled partial graphs, their text format, and Wick contractions.

A partial graph has a distinguished origin vertex ``0``, a star vertex
joined to the origin by the unique edge with label exactly ``0``, internal
vertices of degree >= 2 and external vertices of degree 1.  Edge labels are
exact values ``q + r*delta`` for an infinitesimal ``delta > 0``; all
comparisons are lexicographic in ``(q, r)`` and therefore decide every
strict inequality "for all sufficiently small delta" with no floating
point involved.

Contracting ``p`` copies of a partial graph glues external vertices across
copies (every glued class must meet at least two copies) and produces a
labelled multigraph; identifying multi-edges by summing their labels gives
a simple labelled graph.  The text format is line oriented::

    graph <name>
    vertex <id> origin|star|internal|external
    star-edge <origin-id> <star-id>
    edge <id> <id> label <q>[+<r>d]
    # comment

Labels like ``2+1d`` mean ``2 + delta``; ``5/2-1d`` means ``5/2 - delta``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Iterator, Sequence

from .cumulants import IndexKey, SizeLimitError, iter_wick_partitions

__all__ = [
    "LabelValue",
    "GraphEdge",
    "PartialGraph",
    "ContractionEdge",
    "ContractedGraph",
    "SimpleLabelledGraph",
    "GraphParseError",
    "parse_partial_graph",
    "serialize_partial_graph",
    "enumerate_contractions",
    "iter_contractions",
    "edge_sets",
    "merge_multiedges",
    "automorphisms",
    "canonical_key",
    "CONTRACTION_SLOT_CAP",
]

#: Contractions are enumerated through partitions of |H_ex| * p slots.
CONTRACTION_SLOT_CAP = 12


def _as_fraction(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


@dataclass(frozen=True)
class LabelValue:
    """Exact value ``q + r*delta`` with lexicographic comparisons."""

    q: Fraction = Fraction(0)
    r: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "q", _as_fraction(self.q))
        object.__setattr__(self, "r", _as_fraction(self.r))

    # -- algebra ---------------------------------------------------------
    def __add__(self, other: "LabelValue | int | Fraction") -> "LabelValue":
        other = LabelValue.coerce(other)
        return LabelValue(self.q + other.q, self.r + other.r)

    __radd__ = __add__

    def __sub__(self, other: "LabelValue | int | Fraction") -> "LabelValue":
        other = LabelValue.coerce(other)
        return LabelValue(self.q - other.q, self.r - other.r)

    def __rsub__(self, other) -> "LabelValue":
        return LabelValue.coerce(other) - self

    def __neg__(self) -> "LabelValue":
        return LabelValue(-self.q, -self.r)

    def __mul__(self, scalar) -> "LabelValue":
        scalar = _as_fraction(scalar)
        return LabelValue(self.q * scalar, self.r * scalar)

    __rmul__ = __mul__

    # -- order (q first, then the delta coefficient) ----------------------
    def _key(self) -> tuple[Fraction, Fraction]:
        return (self.q, self.r)

    def __lt__(self, other) -> bool:
        return self._key() < LabelValue.coerce(other)._key()

    def __le__(self, other) -> bool:
        return self._key() <= LabelValue.coerce(other)._key()

    def __gt__(self, other) -> bool:
        return self._key() > LabelValue.coerce(other)._key()

    def __ge__(self, other) -> bool:
        return self._key() >= LabelValue.coerce(other)._key()

    def is_zero(self) -> bool:
        return self.q == 0 and self.r == 0

    def eval_at(self, delta: Fraction) -> Fraction:
        """Numeric value once the infinitesimal is pinned to a rational."""
        return self.q + self.r * _as_fraction(delta)

    @staticmethod
    def coerce(value) -> "LabelValue":
        if isinstance(value, LabelValue):
            return value
        return LabelValue(_as_fraction(value), Fraction(0))

    @staticmethod
    def parse(text: str) -> "LabelValue":
        """Parse ``<q>``, ``<q>+<r>d`` or ``<q>-<r>d``."""
        body = text.strip().replace(" ", "")
        if not body:
            raise ValueError("empty label")
        # split off a trailing ...±...d part if present
        if body.endswith("d"):
            core = body[:-1]
            # find the sign that separates q from r (skip a leading sign)
            for pos in range(len(core) - 1, 0, -1):
                if core[pos] in "+-" and core[pos - 1] not in "+-/":
                    q_part, sign, r_part = core[:pos], core[pos], core[pos + 1 :]
                    break
            else:
                # pure delta multiple, e.g. "1d" or "-1d"
                q_part, sign, r_part = "0", "+", core
            r = Fraction(r_part if r_part else "1")
            if sign == "-":
                r = -r
            return LabelValue(Fraction(q_part), r)
        return LabelValue(Fraction(body), Fraction(0))

    def __str__(self) -> str:
        if self.r == 0:
            return str(self.q)
        sign = "+" if self.r > 0 else "-"
        return f"{self.q}{sign}{abs(self.r)}d"

    def __repr__(self) -> str:
        return f"LabelValue({self})"


ZERO_LABEL = LabelValue()


@dataclass(frozen=True)
class GraphEdge:
    """Undirected labelled edge; ``distinguished`` marks the star edge."""

    u: str
    v: str
    label: LabelValue
    distinguished: bool = False

    def endpoints(self) -> frozenset:
        return frozenset((self.u, self.v))

    def touches(self, vertex: str) -> bool:
        return vertex == self.u or vertex == self.v

    def other(self, vertex: str) -> str:
        if vertex == self.u:
            return self.v
        if vertex == self.v:
            return self.u
        raise KeyError(vertex)


class GraphParseError(ValueError):
    """Syntax or invariant error in a graph description document."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class PartialGraph:
    """Connected labelled graph with origin, star edge, and typed vertices."""

    name: str
    kinds: tuple[tuple[str, str], ...]  # (vertex id, kind) in declaration order
    edges: tuple[GraphEdge, ...]

    # -- views -------------------------------------------------------------
    @property
    def kind_map(self) -> dict[str, str]:
        return dict(self.kinds)

    @property
    def vertex_ids(self) -> tuple[str, ...]:
        return tuple(v for v, _ in self.kinds)

    @property
    def origin(self) -> str:
        return next(v for v, k in self.kinds if k == "origin")

    @property
    def star(self) -> str:
        return next(v for v, k in self.kinds if k == "star")

    @property
    def external_ids(self) -> tuple[str, ...]:
        return tuple(v for v, k in self.kinds if k == "external")

    @property
    def internal_ids(self) -> tuple[str, ...]:
        """Internal vertices; the star vertex counts as internal."""
        return tuple(v for v, k in self.kinds if k in ("internal", "star"))

    def degree(self, vertex: str) -> int:
        return sum(1 for e in self.edges if e.touches(vertex))

    def incident(self, vertex: str) -> tuple[GraphEdge, ...]:
        return tuple(e for e in self.edges if e.touches(vertex))

    def edge_list(self) -> tuple[GraphEdge, ...]:
        return self.edges

    def label_sum(self) -> LabelValue:
        total = ZERO_LABEL
        for e in self.edges:
            total = total + e.label
        return total

    # -- construction ------------------------------------------------------
    def __post_init__(self):
        kind_map = self.kind_map
        valid = {"origin", "star", "internal", "external"}
        for v, k in self.kinds:
            if k not in valid:
                raise GraphParseError(f"unknown vertex kind {k!r} for {v!r}")
        origins = [v for v, k in self.kinds if k == "origin"]
        stars = [v for v, k in self.kinds if k == "star"]
        if len(origins) != 1:
            raise GraphParseError(f"need exactly one origin vertex, got {len(origins)}")
        if len(stars) != 1:
            raise GraphParseError(f"need exactly one star vertex, got {len(stars)}")
        for e in self.edges:
            for end in (e.u, e.v):
                if end not in kind_map:
                    raise GraphParseError(f"edge endpoint {end!r} is not a declared vertex")
            if e.u == e.v:
                raise GraphParseError(f"self-loop at {e.u!r} not allowed")
        dist = [e for e in self.edges if e.distinguished]
        if len(dist) != 1:
            raise GraphParseError("need exactly one star-edge")
        star_edge = dist[0]
        if star_edge.endpoints() != frozenset((origins[0], stars[0])):
            raise GraphParseError("star-edge must join the origin to the star vertex")
        if not star_edge.label.is_zero():
            raise GraphParseError("the star-edge label must be exactly 0")
        for e in self.edges:
            if not e.distinguished and e.label.is_zero():
                raise GraphParseError(
                    f"label 0 on edge {e.u!r}-{e.v!r}: only the star-edge carries label 0"
                )
        for v, k in self.kinds:
            d = self.degree(v)
            if k == "external" and d != 1:
                raise GraphParseError(f"external vertex {v!r} must have degree 1, got {d}")
            if k in ("internal", "star") and d < 2:
                raise GraphParseError(f"internal vertex {v!r} must have degree >= 2, got {d}")
        # connectivity
        if self.kinds:
            seen = {self.kinds[0][0]}
            frontier = [self.kinds[0][0]]
            while frontier:
                cur = frontier.pop()
                for e in self.incident(cur):
                    nxt = e.other(cur)
                    if nxt not in seen:
                        seen.add(nxt)
                        frontier.append(nxt)
            if len(seen) != len(self.kinds):
                raise GraphParseError("graph is not connected")


def parse_partial_graph(text: str) -> PartialGraph:
    """Parse a graph description document into a validated PartialGraph."""
    name: str | None = None
    kinds: list[tuple[str, str]] = []
    edges: list[GraphEdge] = []
    star_edge: tuple[str, str] | None = None
    declared: set[str] = set()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        directive = tokens[0]
        try:
            if directive == "graph":
                if len(tokens) != 2:
                    raise GraphParseError("expected: graph <name>", lineno)
                if name is not None:
                    raise GraphParseError("duplicate graph directive", lineno)
                name = tokens[1]
            elif directive == "vertex":
                if len(tokens) != 3:
                    raise GraphParseError("expected: vertex <id> <kind>", lineno)
                vid, kind = tokens[1], tokens[2]
                if vid in declared:
                    raise GraphParseError(f"duplicate vertex {vid!r}", lineno)
                declared.add(vid)
                kinds.append((vid, kind))
            elif directive == "edge":
                if len(tokens) != 5 or tokens[3] != "label":
                    raise GraphParseError("expected: edge <id> <id> label <value>", lineno)
                try:
                    label = LabelValue.parse(tokens[4])
                except (ValueError, ZeroDivisionError) as exc:
                    raise GraphParseError(f"bad label {tokens[4]!r}: {exc}", lineno)
                edges.append(GraphEdge(tokens[1], tokens[2], label))
            elif directive == "star-edge":
                if len(tokens) != 3:
                    raise GraphParseError("expected: star-edge <origin-id> <star-id>", lineno)
                if star_edge is not None:
                    raise GraphParseError("duplicate star-edge", lineno)
                star_edge = (tokens[1], tokens[2])
            else:
                raise GraphParseError(f"unknown directive {directive!r}", lineno)
        except GraphParseError:
            raise
        except Exception as exc:  # defensive: wrap with position info
            raise GraphParseError(str(exc), lineno)

    if name is None:
        raise GraphParseError("missing graph directive")
    if star_edge is None:
        raise GraphParseError("missing star-edge directive")
    edges.append(GraphEdge(star_edge[0], star_edge[1], ZERO_LABEL, distinguished=True))
    try:
        return PartialGraph(name=name, kinds=tuple(kinds), edges=tuple(edges))
    except GraphParseError:
        raise
    except ValueError as exc:
        raise GraphParseError(str(exc))


def serialize_partial_graph(graph: PartialGraph) -> str:
    """Emit the text form; ``parse(serialize(g))`` is isomorphic to ``g``."""
    lines = [f"graph {graph.name}"]
    for vid, kind in graph.kinds:
        lines.append(f"vertex {vid} {kind}")
    star = next(e for e in graph.edges if e.distinguished)
    lines.append(f"star-edge {star.u} {star.v}")
    for e in graph.edges:
        if not e.distinguished:
            lines.append(f"edge {e.u} {e.v} label {e.label}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Wick contractions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContractionEdge:
    """Edge of a contracted graph, tagged with its copy of origin."""

    u: str
    v: str
    label: LabelValue
    kind: str  # "distinguished" | "internal" | "external"
    copy: int

    def endpoints(self) -> frozenset:
        return frozenset((self.u, self.v))

    def touches(self, vertex: str) -> bool:
        return vertex == self.u or vertex == self.v


@dataclass(frozen=True)
class ContractedGraph:
    """Multigraph obtained by gluing the externals of ``p`` copies of ``H``."""

    source: PartialGraph
    p: int
    classes: tuple[frozenset, ...]  # frozensets of (copy, external id)

    ORIGIN = "0"

    @staticmethod
    def in_vertex(copy: int, vid: str) -> str:
        return f"copy{copy}.{vid}"

    def ex_vertex(self, index: int) -> str:
        return f"x{index}"

    @property
    def in_vertices(self) -> tuple[str, ...]:
        return tuple(
            self.in_vertex(k, vid)
            for k in range(1, self.p + 1)
            for vid in self.source.internal_ids
        )

    @property
    def ex_vertices(self) -> tuple[str, ...]:
        return tuple(self.ex_vertex(i) for i in range(len(self.classes)))

    @property
    def vertex_ids(self) -> tuple[str, ...]:
        return (self.ORIGIN,) + self.in_vertices + self.ex_vertices

    @property
    def star_set(self) -> tuple[str, ...]:
        return (self.ORIGIN,) + tuple(
            self.in_vertex(k, self.source.star) for k in range(1, self.p + 1)
        )

    def _map_vertex(self, copy: int, vid: str) -> str:
        kind = self.source.kind_map[vid]
        if kind == "origin":
            return self.ORIGIN
        if kind == "external":
            for i, cls in enumerate(self.classes):
                if (copy, vid) in cls:
                    return self.ex_vertex(i)
            raise KeyError(f"external ({copy}, {vid}) not in any class")
        return self.in_vertex(copy, vid)

    def edge_list(self) -> tuple[ContractionEdge, ...]:
        out = []
        for copy in range(1, self.p + 1):
            for e in self.source.edges:
                if e.distinguished:
                    kind = "distinguished"
                elif (self.source.kind_map[e.u] == "external"
                      or self.source.kind_map[e.v] == "external"):
                    kind = "external"
                else:
                    kind = "internal"
                out.append(ContractionEdge(
                    u=self._map_vertex(copy, e.u),
                    v=self._map_vertex(copy, e.v),
                    label=e.label,
                    kind=kind,
                    copy=copy,
                ))
        return tuple(out)

    def degree(self, vertex: str) -> int:
        """Degree counting multi-edges."""
        return sum(1 for e in self.edge_list() if e.touches(vertex))

    def class_of(self, vertex: str) -> frozenset:
        for i, cls in enumerate(self.classes):
            if self.ex_vertex(i) == vertex:
                return cls
        raise KeyError(vertex)

    def identify(self, v1: str, v2: str) -> "ContractedGraph":
        """Merge two ex-vertices into one class (new contracted graph)."""
        c1, c2 = self.class_of(v1), self.class_of(v2)
        rest = tuple(c for c in self.classes if c not in (c1, c2))
        return contracted_graph(self.source, self.p, rest + (c1 | c2,))


def _sorted_classes(classes: Iterable[frozenset]) -> tuple[frozenset, ...]:
    return tuple(sorted((frozenset(c) for c in classes),
                        key=lambda c: sorted((copy, vid) for copy, vid in c)))


def contracted_graph(source: PartialGraph, p: int,
                     classes: Iterable[frozenset]) -> ContractedGraph:
    """Validated construction of a ContractedGraph from glued classes."""
    classes = _sorted_classes(classes)
    slots = {(k, vid) for k in range(1, p + 1) for vid in source.external_ids}
    covered: set = set()
    for cls in classes:
        if len(cls) < 2:
            raise ValueError("every glued class needs at least 2 externals")
        if len({copy for copy, _ in cls}) < 2:
            raise ValueError("every glued class must span at least 2 copies")
        if covered & cls:
            raise ValueError("classes overlap")
        covered |= cls
    if covered != slots:
        raise ValueError("classes must cover every external of every copy")
    return ContractedGraph(source=source, p=p, classes=classes)


def iter_contractions(H: PartialGraph, p: int) -> Iterator[ContractedGraph]:
    """All Wick contractions of ``p`` copies of ``H``.

    One contraction per admissible gluing of the external vertices; glued
    classes must contain externals from at least two distinct copies.
    Isomorphic duplicates are not removed.
    """
    if p < 2:
        raise ValueError("contractions need p >= 2")
    ext = H.external_ids
    if len(ext) * p > CONTRACTION_SLOT_CAP:
        raise SizeLimitError(
            f"{len(ext)} externals x {p} copies exceeds the cap {CONTRACTION_SLOT_CAP}"
        )
    if not ext:
        yield ContractedGraph(source=H, p=p, classes=())
        return
    for pt in iter_wick_partitions(len(ext), p):
        classes = tuple(
            frozenset((key.copy, ext[key.slot - 1]) for key in block)
            for block in pt.blocks
        )
        yield ContractedGraph(source=H, p=p, classes=_sorted_classes(classes))


def enumerate_contractions(H: PartialGraph, p: int) -> list[ContractedGraph]:
    return list(iter_contractions(H, p))


# ---------------------------------------------------------------------------
# Edge subsets and multi-edge merging
# ---------------------------------------------------------------------------

def edge_sets(graph, S: Iterable[str]):
    """``(E0, E)``: edges entirely inside ``S`` and edges meeting ``S``."""
    subset = set(S)
    known = set(graph.vertex_ids)
    for v in subset:
        if v not in known:
            raise KeyError(f"unknown vertex {v!r}")
    inside = []
    meeting = []
    for e in graph.edge_list():
        ends = e.endpoints()
        if ends & subset:
            meeting.append(e)
            if ends <= subset:
                inside.append(e)
    return tuple(inside), tuple(meeting)


@dataclass(frozen=True)
class SimpleLabelledGraph:
    """Contracted graph after identifying multi-edges (labels summed)."""

    roles: tuple[tuple[str, str], ...]  # (vertex, role in {origin, star, in, ex})
    edges: tuple[GraphEdge, ...]
    star_set: tuple[str, ...]

    @property
    def vertex_ids(self) -> tuple[str, ...]:
        return tuple(v for v, _ in self.roles)

    def edge_list(self) -> tuple[GraphEdge, ...]:
        return self.edges


def merge_multiedges(
    G: ContractedGraph,
    weights: "Callable[[int], LabelValue] | Sequence[LabelValue] | None" = None,
) -> SimpleLabelledGraph:
    """Identify multi-edges; the merged label is the exact sum of weights.

    ``weights`` assigns a LabelValue to each position in ``G.edge_list()``
    (defaults to the inherited labels).  Distinguished edges are merged
    only with other distinguished edges between the same pair, never with
    ordinary ones.
    """
    edges = G.edge_list()
    if weights is None:
        values = [e.label for e in edges]
    elif callable(weights):
        values = [weights(i) for i in range(len(edges))]
    else:
        values = list(weights)
        if len(values) != len(edges):
            raise ValueError("need one weight per edge")

    merged: dict[tuple[frozenset, bool], LabelValue] = {}
    for e, val in zip(edges, values):
        key = (e.endpoints(), e.kind == "distinguished")
        merged[key] = merged.get(key, ZERO_LABEL) + val

    roles = [(ContractedGraph.ORIGIN, "origin")]
    star_names = set(G.star_set) - {ContractedGraph.ORIGIN}
    for v in G.in_vertices:
        roles.append((v, "star" if v in star_names else "in"))
    for v in G.ex_vertices:
        roles.append((v, "ex"))

    out_edges = []
    for (ends, dist), label in sorted(
        merged.items(), key=lambda kv: (sorted(kv[0][0]), kv[0][1])
    ):
        pair = sorted(ends)
        out_edges.append(GraphEdge(pair[0], pair[1], label, distinguished=dist))
    return SimpleLabelledGraph(
        roles=tuple(roles), edges=tuple(out_edges), star_set=G.star_set
    )


# ---------------------------------------------------------------------------
# Isomorphism machinery (used for round-trip tests and contraction dedupe)
# ---------------------------------------------------------------------------

def _graph_data(graph) -> tuple[dict, list]:
    """Uniform (vertex colour, edge record) view for the iso machinery."""
    if isinstance(graph, PartialGraph):
        colors = {v: k for v, k in graph.kinds}
        edges = [(e.u, e.v, (str(e.label), e.distinguished)) for e in graph.edges]
    elif isinstance(graph, SimpleLabelledGraph):
        colors = {v: r for v, r in graph.roles}
        edges = [(e.u, e.v, (str(e.label), e.distinguished)) for e in graph.edges]
    elif isinstance(graph, ContractedGraph):
        colors = {ContractedGraph.ORIGIN: "origin"}
        star_names = set(graph.star_set) - {ContractedGraph.ORIGIN}
        for v in graph.in_vertices:
            colors[v] = "star" if v in star_names else "in"
        for v in graph.ex_vertices:
            colors[v] = "ex"
        edges = [(e.u, e.v, (str(e.label), e.kind == "distinguished"))
                 for e in graph.edge_list()]
    else:
        raise TypeError(f"unsupported graph type {type(graph)!r}")
    return colors, edges


def canonical_key(graph) -> tuple:
    """A canonical encoding equal for two graphs iff they are isomorphic.

    Isomorphisms must preserve vertex kinds, edge labels, edge multiplicity
    and the star-edge flag.  Refinement-plus-individualisation; exact (the
    branch step tries every vertex of the first ambiguous colour class).
    """
    colors, edges = _graph_data(graph)
    vertices = sorted(colors)
    incident: dict[str, list] = {v: [] for v in vertices}
    for u, v, key in edges:
        incident[u].append((key, v))
        incident[v].append((key, u))

    def refine(col: dict) -> dict:
        col = dict(col)
        while True:
            sig = {
                v: (col[v], tuple(sorted((key, col[w]) for key, w in incident[v])))
                for v in vertices
            }
            ranks = {s: i for i, s in enumerate(sorted(set(sig.values())))}
            new = {v: ranks[sig[v]] for v in vertices}
            if len(set(new.values())) == len(set(col.values())):
                # stable: but keep the (stable) integer colours
                return new
            col = new

    def encode(order: list) -> tuple:
        index = {v: i for i, v in enumerate(order)}
        rec = sorted(
            (min(index[u], index[v]), max(index[u], index[v]), key)
            for u, v, key in edges
        )
        return (tuple(colors[v] for v in order), tuple(rec))

    best: list[tuple | None] = [None]

    def search(col: dict) -> None:
        groups: dict[int, list] = {}
        for v in vertices:
            groups.setdefault(col[v], []).append(v)
        ambiguous = [c for c, vs in groups.items() if len(vs) > 1]
        if not ambiguous:
            order = sorted(vertices, key=lambda v: col[v])
            enc = encode(order)
            if best[0] is None or enc < best[0]:
                best[0] = enc
            return
        target = min(ambiguous)
        fresh = max(col.values()) + 1
        for v in sorted(groups[target]):
            child = dict(col)
            child[v] = fresh
            search(refine(child))

    base = {v: 0 for v in vertices}
    # seed with the declared kinds so only kind-preserving maps compete
    seed = {v: i for v in vertices
            for i, kind in enumerate(sorted(set(colors.values())))
            if colors[v] == kind}
    search(refine(seed))
    assert best[0] is not None
    return best[0]


def automorphisms(graph: PartialGraph) -> list[dict]:
    """All label/kind/star-preserving vertex bijections of a partial graph.

    Brute force over kind-respecting permutations; fine for the small
    graphs this package works with.
    """
    colors, edges = _graph_data(graph)
    by_kind: dict[str, list] = {}
    for v, k in sorted(colors.items()):
        by_kind.setdefault(k, []).append(v)
    edge_multiset = sorted(
        (tuple(sorted((u, v))), key) for u, v, key in edges
    )

    out = []
    kinds = sorted(by_kind)
    pools = [list(itertools.permutations(by_kind[k])) for k in kinds]
    for combo in itertools.product(*pools):
        mapping = {}
        for k, perm in zip(kinds, combo):
            mapping.update(dict(zip(by_kind[k], perm)))
        mapped = sorted(
            (tuple(sorted((mapping[u], mapping[v]))), key) for u, v, key in edges
        )
        if mapped == edge_multiset:
            out.append(mapping)
    return out
