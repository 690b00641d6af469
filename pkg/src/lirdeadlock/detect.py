"""Double-lock, conflict-lock and condition-variable deadlock detection.

Lock kinds pair up as ``MM, MR, MW, RM, RR, RW, WM, WR, WW``.  Only ``MM``,
``RW``, ``WW`` and ``WR`` pairs can block each other; two read guards never do.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence, Union

from .pointsto import PointsToMap
from .threads import Guard, NotifySite, ThreadDesc, WaitSite, concurrency

_LETTER = {"MX": "M", "R": "R", "W": "W"}
BLOCKING_PAIRS = frozenset({"MM", "RW", "WW", "WR"})
ORDERING_PAIRS = frozenset({"MR", "MW", "RM", "WM"})


def pair_kind(first: str, second: str) -> str:
    """Two-letter pair name, e.g. ``pair_kind("MX", "R") == "MR"``."""
    return _LETTER[first] + _LETTER[second]


def is_blocking(first: str, second: str) -> bool:
    return pair_kind(first, second) in BLOCKING_PAIRS


class DiagnosticKind(str, Enum):
    DOUBLE_LOCK = "DoubleLock"
    CONFLICT_LOCK = "ConflictLock"
    CONDVAR_LOCK_INTERACTION = "CondvarLockInteraction"
    CONDVAR_MISSING_NOTIFY = "CondvarMissingNotify"
    CONDVAR_NON_CONCURRENT = "CondvarNonConcurrent"
    CONDVAR_CONDITION_UNSATISFIABLE = "CondvarConditionUnsatisfiable"


_KIND_ORDER = {k: i for i, k in enumerate(DiagnosticKind)}


# ---------------------------------------------------------------------------
# Graphs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SignalNode:
    """The notify signal a wait applies for and a notify holds."""

    wait: WaitSite
    notify: NotifySite

    def __repr__(self) -> str:
        return f"S_nt({self.wait.line}->{self.notify.line})"


GraphNode = Union[Guard, SignalNode]


class LockGraph:
    """Guards linked by dependency (``D``, directed) and alias (``A``, undirected) edges."""

    def __init__(self) -> None:
        self._nodes: dict[GraphNode, None] = {}
        self._edges: dict[tuple[GraphNode, GraphNode, str], None] = {}

    @property
    def nodes(self) -> list[GraphNode]:
        return list(self._nodes)

    @property
    def edges(self) -> list[tuple[GraphNode, GraphNode, str]]:
        return list(self._edges)

    def add_node(self, node: GraphNode) -> None:
        self._nodes.setdefault(node, None)

    def add_edge(self, src: GraphNode, dst: GraphNode, kind: str) -> bool:
        if kind not in ("D", "A"):
            raise ValueError(f"edge kind must be 'D' or 'A', not {kind!r}")
        if kind == "A" and (dst, src, "A") in self._edges:
            return False
        if (src, dst, kind) in self._edges:
            return False
        self.add_node(src)
        self.add_node(dst)
        self._edges[(src, dst, kind)] = None
        return True

    def edges_of(self, kind: str) -> list[tuple[GraphNode, GraphNode]]:
        return [(s, d) for s, d, k in self._edges if k == kind]

    def has_path(self, start: GraphNode, end: GraphNode, kind: str = "D") -> bool:
        frontier, seen = [start], {start}
        while frontier:
            node = frontier.pop()
            if node == end:
                return True
            for s, d, k in self._edges:
                if k == kind and s == node and d not in seen:
                    seen.add(d)
                    frontier.append(d)
        return False

    def to_dot(self, name: str = "lockgraph") -> str:
        ids = {node: f"n{i}" for i, node in enumerate(self._nodes)}
        out = [f'digraph "{name}" {{']
        for node, nid in ids.items():
            if isinstance(node, SignalNode):
                label = f"S_nt\\nwait @{node.wait.line} / notify @{node.notify.line}"
                out.append(f'  {nid} [label="{label}", shape=diamond];')
            else:
                stack = ",".join(str(x) for x in node.stack)
                label = (f"{node.node.place} {node.kind} @{node.line}\\n"
                         f"[{stack}] {node.thread.id}")
                out.append(f'  {nid} [label="{label}", shape=box];')
        for s, d, k in self._edges:
            if k == "D":
                out.append(f"  {ids[s]} -> {ids[d]} [style=solid];")
            else:
                out.append(f"  {ids[s]} -> {ids[d]} [style=dashed, dir=both];")
        out.append("}")
        return "\n".join(out) + "\n"


class ExtendedLockGraph(LockGraph):
    def signals(self) -> list[SignalNode]:
        return [n for n in self.nodes if isinstance(n, SignalNode)]


# ---------------------------------------------------------------------------
# Findings
# ---------------------------------------------------------------------------


def _site_key(items: Iterable) -> tuple:
    return tuple(sorted(x.site for x in items))


@dataclass(frozen=True)
class DoubleLock:
    guard: Guard
    held: Guard


@dataclass(frozen=True)
class ConflictLock:
    """Dependency edges ``(held, acquired)`` that wait on each other in a cycle."""

    edges: tuple[tuple[Guard, Guard], ...]

    @property
    def guards(self) -> tuple[Guard, ...]:
        return tuple(g for edge in self.edges for g in edge)


@dataclass(frozen=True)
class CondvarFinding:
    kind: DiagnosticKind
    wait: WaitSite
    notify: Optional[NotifySite] = None
    guards: tuple[tuple[Guard, Guard], ...] = ()


@dataclass
class LockDetection:
    double_locks: list[DoubleLock]
    conflicts: list[ConflictLock]
    graph: LockGraph


@dataclass
class CondvarDetection:
    findings: list[CondvarFinding]
    graph: ExtendedLockGraph


def alias_common(first: Iterable[Guard], second: Iterable[Guard], m: PointsToMap) -> list[tuple[Guard, Guard]]:
    """All guard pairs, one from each set, that may protect the same lock."""
    second = list(second)
    return [(a, b) for a in first for b in second if m.alias(a.node, b.node)]


def _gated(first: Iterable[Guard], second: Iterable[Guard], m: PointsToMap) -> bool:
    # a common lock held in read mode by both sides does not serialize them
    return any(is_blocking(a.kind, b.kind) for a, b in alias_common(first, second, m))


def detect_lock_deadlocks(guards: Sequence[Guard], m: PointsToMap,
                          general_cycles: bool = False, max_cycle: int = 4) -> LockDetection:
    """Find double locks and conflict locks over the lock graph of ``guards``.

    With ``general_cycles`` the search also reports conflict cycles through
    three or more threads (up to ``max_cycle`` dependency edges).
    """
    lg = LockGraph()
    double_locks: dict[tuple, DoubleLock] = {}
    for g in guards:
        lg.add_node(g)
    for g in guards:
        for held in g.held:
            pair = pair_kind(g.kind, held.kind)
            if pair in BLOCKING_PAIRS:
                if m.alias(g.node, held.node):
                    double_locks.setdefault(_site_key((g, held)), DoubleLock(g, held))
                else:
                    lg.add_edge(held, g, "D")
            elif pair in ORDERING_PAIRS:
                lg.add_edge(held, g, "D")

    deps = lg.edges_of("D")
    conflicts: dict[tuple, ConflictLock] = {}
    for g11, g12 in deps:
        for g21, g22 in deps:
            if not concurrency(g11.thread, g21.thread):
                continue
            if not (is_blocking(g11.kind, g22.kind) and is_blocking(g12.kind, g21.kind)):
                continue
            if not (m.alias(g11.node, g22.node) and m.alias(g21.node, g12.node)):
                continue
            lg.add_edge(g11, g22, "A")
            lg.add_edge(g21, g12, "A")
            if not _gated(g11.held, g21.held, m):
                finding = ConflictLock(((g11, g12), (g21, g22)))
                conflicts.setdefault(_site_key(finding.guards), finding)

    if general_cycles:
        for finding in _long_cycles(deps, m, max_cycle):
            for (_, want), (held, _) in zip(finding.edges, finding.edges[1:] + finding.edges[:1]):
                lg.add_edge(want, held, "A")
            conflicts.setdefault(_site_key(finding.guards), finding)

    return LockDetection(list(double_locks.values()), list(conflicts.values()), lg)


def _long_cycles(deps: list[tuple[Guard, Guard]], m: PointsToMap, max_cycle: int) -> list[ConflictLock]:
    """Cycles of three or more dependency edges in pairwise concurrent, ungated threads."""
    succ: dict[int, list[int]] = {i: [] for i in range(len(deps))}
    for i, (_, want) in enumerate(deps):
        for j, (held, _) in enumerate(deps):
            if i != j and is_blocking(want.kind, held.kind) and m.alias(want.node, held.node):
                succ[i].append(j)

    found: list[ConflictLock] = []

    def compatible(path: list[int], j: int) -> bool:
        held_j = deps[j][0]
        for i in path:
            held_i = deps[i][0]
            if not concurrency(held_i.thread, held_j.thread):
                return False
            if _gated(held_i.held, held_j.held, m):
                return False
        return True

    def extend(path: list[int]) -> None:
        for j in succ[path[-1]]:
            if j == path[0] and len(path) >= 3:
                found.append(ConflictLock(tuple(deps[i] for i in path)))
            elif j > path[0] and j not in path and len(path) < max_cycle and compatible(path, j):
                extend(path + [j])

    for start in range(len(deps)):
        extend([start])
    return found


def detect_condvar_deadlocks(waits: Sequence[WaitSite], notifies: Sequence[NotifySite],
                             m: PointsToMap, strict: bool = False) -> CondvarDetection:
    """Pair waits with notifies on aliased condvars and check each pair.

    A wait without any partner is a missing notify.  With ``strict`` every wait
    is reported as a potential missing notify, partnered or not.
    """
    elg = ExtendedLockGraph()
    findings: dict[tuple, CondvarFinding] = {}

    def report(finding: CondvarFinding) -> None:
        sites = [finding.wait] + ([finding.notify] if finding.notify else [])
        sites += [g for pair in finding.guards for g in pair]
        findings.setdefault((finding.kind, _site_key(sites)), finding)

    pairs = [(wt, nt) for wt in waits for nt in notifies if m.alias(wt.cvar, nt.cvar)]
    for wt in waits:
        if strict or not any(w is wt for w, _ in pairs):
            report(CondvarFinding(DiagnosticKind.CONDVAR_MISSING_NOTIFY, wt))

    for wt, nt in pairs:
        if not concurrency(wt.thread, nt.thread):
            report(CondvarFinding(DiagnosticKind.CONDVAR_NON_CONCURRENT, wt, nt))
            continue

        def on_wait_lock(g: Guard) -> bool:
            return m.alias(g.node, wt.lock)

        if not any(on_wait_lock(g) for g in nt.held):
            report(CondvarFinding(DiagnosticKind.CONDVAR_CONDITION_UNSATISFIABLE, wt, nt))
        waiter_held = [g for g in wt.held if not on_wait_lock(g)]
        notifier_held = [g for g in nt.held if not on_wait_lock(g)]
        if not (waiter_held or notifier_held):
            continue
        signal = SignalNode(wt, nt)
        for gi in waiter_held:
            elg.add_edge(gi, signal, "D")
        for gj in notifier_held:
            elg.add_edge(signal, gj, "D")
        interacting = tuple(
            (gi, gj) for gi in waiter_held for gj in notifier_held if m.alias(gi.node, gj.node)
        )
        for gi, gj in interacting:
            elg.add_edge(gi, gj, "A")
        if interacting:
            report(CondvarFinding(DiagnosticKind.CONDVAR_LOCK_INTERACTION, wt, nt, interacting))

    return CondvarDetection(list(findings.values()), elg)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Site:
    line: int
    stack: tuple[int, ...]
    thread: ThreadDesc
    role: str

    def sort_key(self) -> tuple:
        return (self.line, self.stack, self.thread.id, self.role)


@dataclass(frozen=True)
class Diagnostic:
    kind: DiagnosticKind
    sites: tuple[Site, ...]
    message: str
    file: str = ""
    guards: tuple[Guard, ...] = field(default=(), compare=False)

    @property
    def lines(self) -> set[int]:
        return {s.line for s in self.sites}

    @property
    def primary_line(self) -> int:
        return self.sites[0].line if self.sites else 0

    def sort_key(self) -> tuple:
        thread = self.sites[0].thread.id if self.sites else ""
        return (self.file, _KIND_ORDER[self.kind], self.primary_line, thread,
                tuple(s.sort_key() for s in self.sites), self.message)


def _via(stack: tuple[int, ...]) -> str:
    if not stack:
        return ""
    return " via call " + " -> ".join(f"@L{x}" for x in stack)


def _guard_site(g: Guard, role: str) -> Site:
    return Site(g.line, g.stack, g.thread, role)


def _wait_site(w: WaitSite) -> Site:
    return Site(w.line, w.stack, w.thread, "wait")


def _notify_site(n: NotifySite) -> Site:
    return Site(n.line, n.stack, n.thread, "notify")


def build_diagnostics(locks: LockDetection, condvars: CondvarDetection, file: str = "") -> list[Diagnostic]:
    out: list[Diagnostic] = []
    for dl in locks.double_locks:
        g, held = dl.guard, dl.held
        msg = (f"lock acquired at line {g.line}{_via(g.stack)} is already held since line "
               f"{held.line}{_via(held.stack)} in thread {g.thread.id}")
        sites = (_guard_site(held, "held"), _guard_site(g, "acquire"))
        out.append(Diagnostic(DiagnosticKind.DOUBLE_LOCK, sites, msg, file, (held, g)))
    for cl in locks.conflicts:
        threads = []
        orders = []
        sites: list[Site] = []
        for held, want in cl.edges:
            if held.thread.id not in threads:
                threads.append(held.thread.id)
            orders.append(f"{held.line} -> {want.line}")
            sites += [_guard_site(held, "held"), _guard_site(want, "acquire")]
        msg = (f"threads {', '.join(threads)} acquire aliased locks in conflicting order "
               f"(lines {'; '.join(orders)})")
        out.append(Diagnostic(DiagnosticKind.CONFLICT_LOCK, tuple(sites), msg, file, cl.guards))
    for f in condvars.findings:
        wt, nt = f.wait, f.notify
        sites = [_wait_site(wt)] + ([_notify_site(nt)] if nt else [])
        if f.kind is DiagnosticKind.CONDVAR_MISSING_NOTIFY:
            msg = f"wait at line {wt.line}{_via(wt.stack)} in thread {wt.thread.id} has no matching notify"
        elif f.kind is DiagnosticKind.CONDVAR_NON_CONCURRENT:
            msg = (f"wait at line {wt.line} (thread {wt.thread.id}) and notify at line {nt.line} "
                   f"(thread {nt.thread.id}) cannot run concurrently")
        elif f.kind is DiagnosticKind.CONDVAR_CONDITION_UNSATISFIABLE:
            msg = (f"notify at line {nt.line} (thread {nt.thread.id}) does not hold the lock "
                   f"guarding the condition waited on at line {wt.line}; the condition is never satisfied")
        else:
            held_lines = ", ".join(f"{gi.line}/{gj.line}" for gi, gj in f.guards)
            msg = (f"wait at line {wt.line} (thread {wt.thread.id}) keeps a lock that the notifier "
                   f"at line {nt.line} (thread {nt.thread.id}) also needs (acquired at lines {held_lines})")
            for gi, gj in f.guards:
                sites += [_guard_site(gi, "wait-held"), _guard_site(gj, "notify-held")]
        guards = tuple(g for pair in f.guards for g in pair)
        out.append(Diagnostic(f.kind, tuple(sites), msg, file, guards))
    return sorted(out, key=Diagnostic.sort_key)
