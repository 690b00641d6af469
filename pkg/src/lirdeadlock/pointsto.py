"""Field-sensitive, flow- and context-insensitive inclusion-based points-to analysis.

The analysis has three parts: a constraint graph whose typed edges encode
inclusion constraints, the statement rules that populate it, and a worklist
solver that saturates it.  Nodes are ``(place, function)`` pairs, so every
function has exactly one instance regardless of how many call sites reach it.
"""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Optional

from . import ir


class EdgeKind(str, Enum):
    ADDRESS = "address"
    COPY = "copy"
    LOAD = "load"
    STORE = "store"
    FIELD = "field"


@dataclass(frozen=True, order=True)
class Node:
    fn: str
    place: str

    def __str__(self) -> str:
        return f"{self.place}@{self.fn}"


@dataclass(frozen=True, order=True)
class Edge:
    src: Node
    dst: Node
    kind: EdgeKind
    field: Optional[str] = None


def object_node(fn: str, stmt: ir.New) -> Node:
    """The abstract object allocated by a ``new`` statement."""
    return Node(fn, f"new:{stmt.dst}@{stmt.line}")


def field_node(base: Node, name: str) -> Node:
    return Node(base.fn, f"{base.place}.{name}")


class ConstraintGraph:
    """Typed directed multigraph with at most one edge per (src, dst, kind, field)."""

    def __init__(self) -> None:
        self.nodes: dict[Node, None] = {}
        self._edges: dict[Edge, None] = {}
        self._out: dict[Node, dict[EdgeKind, list[Edge]]] = defaultdict(lambda: defaultdict(list))
        self._in: dict[Node, dict[EdgeKind, list[Edge]]] = defaultdict(lambda: defaultdict(list))

    def add_node(self, node: Node) -> None:
        self.nodes.setdefault(node, None)

    def add_edge(self, src: Node, dst: Node, kind: EdgeKind, field: Optional[str] = None) -> bool:
        """Insert an edge; return False when it was already present."""
        if (kind is EdgeKind.FIELD) != (field is not None):
            raise ValueError("field edges, and only field edges, carry a field name")
        edge = Edge(src, dst, kind, field)
        if edge in self._edges:
            return False
        self.add_node(src)
        self.add_node(dst)
        self._edges[edge] = None
        self._out[src][kind].append(edge)
        self._in[dst][kind].append(edge)
        return True

    @property
    def edges(self) -> list[Edge]:
        return list(self._edges)

    def __contains__(self, edge: Edge) -> bool:
        return edge in self._edges

    def __len__(self) -> int:
        return len(self._edges)

    def out_edges(self, node: Node, kind: EdgeKind) -> list[Edge]:
        if node not in self._out:
            return []
        return self._out[node].get(kind, [])

    def in_edges(self, node: Node, kind: EdgeKind) -> list[Edge]:
        if node not in self._in:
            return []
        return self._in[node].get(kind, [])

    def copy(self) -> "ConstraintGraph":
        dup = ConstraintGraph()
        for node in self.nodes:
            dup.add_node(node)
        for e in self._edges:
            dup.add_edge(e.src, e.dst, e.kind, e.field)
        return dup

    @classmethod
    def from_edges(cls, edges: Iterable[Edge], nodes: Iterable[Node] = ()) -> "ConstraintGraph":
        g = cls()
        for n in nodes:
            g.add_node(n)
        for e in edges:
            g.add_edge(e.src, e.dst, e.kind, e.field)
        return g


# ---------------------------------------------------------------------------
# Graph construction
# ---------------------------------------------------------------------------


def infer_classes(program: ir.Program) -> dict[Node, str]:
    """Best-effort allocation class of every place.

    Classes come from ``new`` sites, ``arcclone`` results and parameter hints,
    and flow through copies, moves, clones and call arguments.
    """
    classes: dict[Node, str] = {}
    for fn in program.functions.values():
        for p in fn.params:
            if p.cls:
                classes[Node(fn.name, p.place)] = p.cls
    changed = True
    while changed:
        changed = False

        def assign(node: Node, cls: Optional[str]) -> None:
            nonlocal changed
            if cls is not None and node not in classes:
                classes[node] = cls
                changed = True

        for fn in program.functions.values():
            for s in ir.iter_statements(fn.body):
                if isinstance(s, ir.New):
                    assign(Node(fn.name, s.dst), s.cls)
                elif isinstance(s, ir.ArcClone):
                    assign(Node(fn.name, s.dst), "arc")
                elif isinstance(s, (ir.Copy, ir.Move, ir.Clone)):
                    assign(Node(fn.name, s.dst), classes.get(Node(fn.name, s.src)))
                elif isinstance(s, (ir.Call, ir.Spawn)):
                    callee = program.functions.get(s.callee)
                    if callee is None:
                        continue
                    for arg, param in zip(s.args, callee.params):
                        assign(Node(callee.name, param.place), classes.get(Node(fn.name, arg.place)))
    return classes


def _is_arc(classes: Mapping[Node, str], *nodes: Node) -> bool:
    return any(classes.get(n) == "arc" for n in nodes)


def build_constraint_graph(program: ir.Program) -> ConstraintGraph:
    """Translate every statement of ``program`` into constraint edges.

    Statement order and control structure are ignored.  Plain moves and inline
    clones produce no edge; moving a place of class ``arc`` behaves as a copy.
    A lock acquisition makes the guard point to whatever the lock points to.
    """
    g = ConstraintGraph()
    classes = infer_classes(program)

    def call_edges(caller: str, dst: Optional[str], callee_name: str, args: tuple[ir.Arg, ...]) -> None:
        callee = program.functions.get(callee_name)
        if callee is None:
            return
        linked = False
        for arg, param in zip(args, callee.params):
            actual = Node(caller, arg.place)
            formal = Node(callee.name, param.place)
            if arg.mode == "ref" or _is_arc(classes, actual, formal):
                g.add_edge(actual, formal, EdgeKind.COPY)
                linked = True
        if dst is not None and callee.returns is not None and (linked or not args):
            g.add_edge(Node(callee.name, callee.returns), Node(caller, dst), EdgeKind.COPY)

    for fn in program.functions.values():
        for p in fn.params:
            g.add_node(Node(fn.name, p.place))
        name = fn.name
        for s in ir.iter_statements(fn.body):
            if isinstance(s, ir.New):
                g.add_edge(object_node(name, s), Node(name, s.dst), EdgeKind.ADDRESS)
            elif isinstance(s, ir.AddrOf):
                g.add_edge(Node(name, s.src), Node(name, s.dst), EdgeKind.ADDRESS)
            elif isinstance(s, (ir.Copy, ir.ArcClone)):
                g.add_edge(Node(name, s.src), Node(name, s.dst), EdgeKind.COPY)
            elif isinstance(s, ir.Move):
                src = Node(name, s.src)
                if _is_arc(classes, src):
                    g.add_edge(src, Node(name, s.dst), EdgeKind.COPY)
                else:
                    g.add_node(src)
                    g.add_node(Node(name, s.dst))
            elif isinstance(s, ir.Clone):
                g.add_node(Node(name, s.src))
                g.add_node(Node(name, s.dst))
            elif isinstance(s, ir.Load):
                g.add_edge(Node(name, s.src), Node(name, s.dst), EdgeKind.LOAD)
            elif isinstance(s, ir.Store):
                g.add_edge(Node(name, s.src), Node(name, s.dst), EdgeKind.STORE)
            elif isinstance(s, ir.FieldRead):
                base = Node(name, s.src)
                synthetic = field_node(base, s.field)
                g.add_edge(synthetic, Node(name, s.dst), EdgeKind.COPY)
                g.add_edge(base, synthetic, EdgeKind.FIELD, s.field)
            elif isinstance(s, ir.Acquire):
                g.add_edge(Node(name, s.lock), Node(name, s.guard), EdgeKind.COPY)
            elif isinstance(s, ir.Call):
                call_edges(name, s.dst, s.callee, s.args)
            elif isinstance(s, ir.Spawn):
                call_edges(name, None, s.callee, s.args)
            elif isinstance(s, (ir.Wait, ir.Notify)):
                g.add_node(Node(name, s.condvar))
    return g


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PointsToMap:
    """Solved points-to sets together with the saturated constraint graph."""

    sets: Mapping[Node, frozenset[Node]]
    graph: ConstraintGraph
    iterations: int = 0

    def pts(self, node: Node) -> frozenset[Node]:
        return self.sets.get(node, frozenset())

    def alias(self, a: Node, b: Node) -> bool:
        return not self.pts(a).isdisjoint(self.pts(b))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PointsToMap):
            return NotImplemented
        return self.as_dict() == other.as_dict()

    __hash__ = None  # type: ignore[assignment]

    def as_dict(self) -> dict[Node, frozenset[Node]]:
        return {n: s for n, s in self.sets.items() if s}

    def objects(self) -> set[Node]:
        return set().union(*self.sets.values()) if self.sets else set()


def solve(graph: ConstraintGraph) -> PointsToMap:
    """Saturate ``graph`` with a FIFO worklist and return the points-to map.

    The input graph is left untouched; edges discovered through loads, stores
    and field accesses are added to a private copy that is returned with the map.
    """
    g = graph.copy()
    m: dict[Node, set[Node]] = defaultdict(set)
    worklist: deque[Node] = deque()
    queued: set[Node] = set()

    def push(n: Node) -> None:
        if n not in queued:
            queued.add(n)
            worklist.append(n)

    for e in g.edges:
        if e.kind is EdgeKind.ADDRESS:
            m[e.dst].add(e.src)
            push(e.dst)

    iterations = 0
    while worklist:
        n = worklist.popleft()
        queued.discard(n)
        iterations += 1
        for o in list(m.get(n, ())):
            for e in list(g.in_edges(n, EdgeKind.STORE)):
                if g.add_edge(e.src, o, EdgeKind.COPY):
                    push(e.src)
            for e in list(g.out_edges(n, EdgeKind.LOAD)):
                if g.add_edge(o, e.dst, EdgeKind.COPY):
                    push(o)
            for e in list(g.out_edges(n, EdgeKind.FIELD)):
                of = field_node(o, e.field)
                if g.add_edge(of, e.dst, EdgeKind.COPY):
                    push(of)
        src_set = m.get(n)
        if not src_set:
            continue
        for e in g.out_edges(n, EdgeKind.COPY):
            target = m[e.dst]
            before = len(target)
            target |= src_set
            if len(target) != before:
                push(e.dst)

    sets = {n: frozenset(s) for n, s in m.items() if s}
    return PointsToMap(sets, g, iterations)


def pts(m: PointsToMap, node: Node) -> frozenset[Node]:
    return m.pts(node)


def alias(m: PointsToMap, a: Node, b: Node) -> bool:
    """May-alias: the two nodes share at least one abstract object."""
    return m.alias(a, b)


# ---------------------------------------------------------------------------
# Debug output
# ---------------------------------------------------------------------------


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def graph_to_dot(graph: ConstraintGraph, m: Optional[PointsToMap] = None, name: str = "consg") -> str:
    styles = {
        EdgeKind.ADDRESS: "bold",
        EdgeKind.COPY: "solid",
        EdgeKind.LOAD: "dashed",
        EdgeKind.STORE: "dotted",
        EdgeKind.FIELD: "tapered",
    }
    lines = [f"digraph {_quote(name)} {{", "  node [shape=box];"]
    for node in sorted(graph.nodes):
        label = str(node)
        if m is not None and m.pts(node):
            label += "\\n{" + ", ".join(sorted(str(o) for o in m.pts(node))) + "}"
        lines.append(f"  {_quote(str(node))} [label={_quote(label)}];")
    for e in sorted(graph.edges):
        label = e.kind.value if e.field is None else f"field {e.field}"
        lines.append(
            f"  {_quote(str(e.src))} -> {_quote(str(e.dst))} "
            f"[label={_quote(label)}, style={styles[e.kind]}];"
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def dump_text(m: PointsToMap) -> str:
    """One ``node -> {objs}`` line per node with a non-empty points-to set."""
    out = []
    for node in sorted(m.as_dict()):
        objs = ", ".join(sorted(str(o) for o in m.pts(node)))
        out.append(f"{node} -> {{{objs}}}")
    return "\n".join(out) + ("\n" if out else "")
