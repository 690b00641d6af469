"""Thread discovery and collection of guards and wait/notify sites.

Each thread body is walked in program order, descending into callees with the
call-site line appended to the call stack.  The walk tracks which guards are
held; every acquisition, wait and notify records a snapshot of that set.
Branch arms are walked separately from a copy of the held set and merged
afterwards, loop bodies are walked once, and guards still held when a function
returns are dropped at that point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from . import ir
from .pointsto import Node, PointsToMap

logger = logging.getLogger(__name__)

DEFAULT_MAX_DEPTH = 32


class AnalysisError(Exception):
    pass


@dataclass(frozen=True)
class ThreadDesc:
    """A thread: spawn line, join line (if joined) and the call stack at spawn time."""

    id: str
    spawn_line: int
    join_line: Optional[int]
    stack: tuple[int, ...] = ()
    parent: Optional["ThreadDesc"] = field(default=None, repr=False)
    function: str = field(default="", compare=False)

    @property
    def is_entry(self) -> bool:
        return self.parent is None

    def ancestors(self) -> list["ThreadDesc"]:
        """Chain from the entry thread down to ``self`` (inclusive)."""
        chain = []
        t: Optional[ThreadDesc] = self
        while t is not None:
            chain.append(t)
            t = t.parent
        return chain[::-1]

    def __str__(self) -> str:
        join = "-" if self.join_line is None else str(self.join_line)
        return f"{self.id}({self.spawn_line},{join},{list(self.stack)})"


@dataclass(frozen=True)
class Guard:
    node: Node
    kind: str
    line: int
    stack: tuple[int, ...]
    thread: ThreadDesc
    held: tuple["Guard", ...] = ()
    lock: Optional[Node] = field(default=None, compare=False)

    @property
    def site(self) -> tuple[int, tuple[int, ...]]:
        return (self.line, self.stack)

    def __repr__(self) -> str:
        held = ", ".join(f"{g.node.place}@{g.line}" for g in self.held)
        return (
            f"Guard({self.node.place}, {self.kind}, {self.line}, {list(self.stack)}, "
            f"{self.thread.id}, {{{held}}})"
        )


@dataclass(frozen=True)
class WaitSite:
    cvar: Node
    lock: Node
    line: int
    stack: tuple[int, ...]
    thread: ThreadDesc
    held: tuple[Guard, ...] = ()
    guard: Optional[Guard] = field(default=None, compare=False)

    @property
    def site(self) -> tuple[int, tuple[int, ...]]:
        return (self.line, self.stack)


@dataclass(frozen=True)
class NotifySite:
    cvar: Node
    lock: Optional[Node]
    line: int
    stack: tuple[int, ...]
    thread: ThreadDesc
    held: tuple[Guard, ...] = ()

    @property
    def site(self) -> tuple[int, tuple[int, ...]]:
        return (self.line, self.stack)


@dataclass
class ProgramWalk:
    threads: list[ThreadDesc]
    guards: list[Guard]
    waits: list[WaitSite]
    notifies: list[NotifySite]
    notes: list[str]


# ---------------------------------------------------------------------------
# Walker
# ---------------------------------------------------------------------------


@dataclass
class _State:
    live: tuple[Guard, ...]
    local: dict[str, tuple[Guard, ...]]

    def copy(self) -> "_State":
        return _State(self.live, dict(self.local))

    def merge(self, other: "_State") -> "_State":
        seen = {id(g) for g in self.live}
        live = self.live + tuple(g for g in other.live if id(g) not in seen)
        local = dict(self.local)
        for place, gs in other.local.items():
            have = {id(g) for g in local.get(place, ())}
            local[place] = local.get(place, ()) + tuple(g for g in gs if id(g) not in have)
        return _State(live, local)


@dataclass
class _SpawnRecord:
    stmt: ir.Spawn
    stack: tuple[int, ...]
    order: int


@dataclass
class _JoinRecord:
    stmt: ir.Join
    stack: tuple[int, ...]
    order: int


class _ThreadWalker:
    def __init__(self, program: ir.Program, thread: ThreadDesc, max_depth: int, notes: list[str]) -> None:
        self.program = program
        self.thread = thread
        self.max_depth = max_depth
        self.notes = notes
        self.guards: list[Guard] = []
        self.waits: list[WaitSite] = []
        self.notifies: list[NotifySite] = []
        self.spawns: list[_SpawnRecord] = []
        self.joins: list[_JoinRecord] = []
        self._order = 0

    def run(self) -> None:
        fn = self.program.functions[self.thread.function]
        self.block(fn.name, fn.body, _State((), {}), self.thread.stack, (fn.name,))

    def block(self, fn: str, block: ir.Block, state: _State, stack: tuple[int, ...],
              active: tuple[str, ...]) -> _State:
        for stmt in block:
            state = self.statement(fn, stmt, state, stack, active)
        return state

    def statement(self, fn: str, stmt: ir.Statement, state: _State, stack: tuple[int, ...],
                  active: tuple[str, ...]) -> _State:
        if isinstance(stmt, ir.Branch):
            then = self.block(fn, stmt.then, state.copy(), stack, active)
            orelse = self.block(fn, stmt.orelse, state.copy(), stack, active)
            return then.merge(orelse)
        if isinstance(stmt, ir.Loop):
            body = self.block(fn, stmt.body, state.copy(), stack, active)
            return state.merge(body)
        if isinstance(stmt, ir.Acquire):
            guard = Guard(Node(fn, stmt.guard), stmt.kind, stmt.line, stack, self.thread,
                          state.live, Node(fn, stmt.lock))
            self.guards.append(guard)
            local = dict(state.local)
            local[stmt.guard] = local.get(stmt.guard, ()) + (guard,)
            return _State(state.live + (guard,), local)
        if isinstance(stmt, ir.Release):
            local = dict(state.local)
            dropped = {id(g) for g in local.pop(stmt.guard, ())}
            return _State(tuple(g for g in state.live if id(g) not in dropped), local)
        if isinstance(stmt, ir.Wait):
            held = state.local.get(stmt.guard, ())
            guard = held[-1] if held else None
            lock = guard.lock if guard is not None else Node(fn, stmt.guard)
            self.waits.append(WaitSite(Node(fn, stmt.condvar), lock, stmt.line, stack,
                                       self.thread, state.live, guard))
            return state
        if isinstance(stmt, ir.Notify):
            self.notifies.append(NotifySite(Node(fn, stmt.condvar), None, stmt.line, stack,
                                            self.thread, state.live))
            return state
        if isinstance(stmt, ir.Spawn):
            self._order += 1
            self.spawns.append(_SpawnRecord(stmt, stack, self._order))
            return state
        if isinstance(stmt, ir.Join):
            self._order += 1
            self.joins.append(_JoinRecord(stmt, stack, self._order))
            return state
        if isinstance(stmt, ir.Call):
            return self.call(fn, stmt, state, stack, active)
        return state

    def call(self, fn: str, stmt: ir.Call, state: _State, stack: tuple[int, ...],
             active: tuple[str, ...]) -> _State:
        callee = self.program.functions.get(stmt.callee)
        if callee is None:
            return state
        if callee.name in active:
            self.notes.append(
                f"recursive call to {callee.name!r} at line {stmt.line} cut "
                f"(cycle: {' -> '.join(active + (callee.name,))})"
            )
            return state
        if len(stack) - len(self.thread.stack) + 1 > self.max_depth:
            raise AnalysisError(
                f"call depth limit {self.max_depth} exceeded in thread {self.thread.id}: "
                f"{' -> '.join(active + (callee.name,))}"
            )
        inner = self.block(callee.name, callee.body, _State(state.live, {}),
                           stack + (stmt.line,), active + (callee.name,))
        dropped = {id(g) for gs in inner.local.values() for g in gs}
        return _State(tuple(g for g in inner.live if id(g) not in dropped), state.local)

    def child_threads(self) -> list[ThreadDesc]:
        children: list[ThreadDesc] = []
        seen: set[tuple] = set()
        for rec in self.spawns:
            key = (rec.stmt.thread, rec.stmt.line, rec.stack)
            if key in seen:
                continue
            seen.add(key)
            later = [j for j in self.joins if j.stmt.thread == rec.stmt.thread and j.order > rec.order]
            same_frame = [j for j in later if j.stack == rec.stack]
            join = (same_frame or later or [None])[0]
            children.append(
                ThreadDesc(
                    rec.stmt.thread,
                    rec.stmt.line,
                    join.stmt.line if join is not None else None,
                    rec.stack,
                    self.thread,
                    rec.stmt.callee,
                )
            )
        return children


def entry_thread(program: ir.Program) -> ThreadDesc:
    fn = program.entry_function
    return ThreadDesc(fn.name, fn.line, fn.end_line, (), None, fn.name)


def walk_program(program: ir.Program, max_depth: int = DEFAULT_MAX_DEPTH) -> ProgramWalk:
    """Walk every thread of ``program`` (entry first, then spawned threads breadth first)."""
    if max_depth < 1:
        raise ValueError("max_depth must be at least 1")
    notes: list[str] = []
    threads = [entry_thread(program)]
    guards: list[Guard] = []
    waits: list[WaitSite] = []
    notifies: list[NotifySite] = []
    i = 0
    while i < len(threads):
        walker = _ThreadWalker(program, threads[i], max_depth, notes)
        walker.run()
        guards.extend(walker.guards)
        waits.extend(walker.waits)
        notifies.extend(walker.notifies)
        threads.extend(walker.child_threads())
        i += 1
    for note in notes:
        logger.info(note)
    return ProgramWalk(threads, guards, waits, notifies, notes)


def _keep(items: list, threads: Optional[Iterable[ThreadDesc]]) -> list:
    if threads is None:
        return items
    allowed = set(threads)
    return [x for x in items if x.thread in allowed]


def collect_threads(program: ir.Program, max_depth: int = DEFAULT_MAX_DEPTH) -> list[ThreadDesc]:
    return walk_program(program, max_depth).threads


def collect_guards(program: ir.Program, m: Optional[PointsToMap] = None,
                   threads: Optional[Sequence[ThreadDesc]] = None,
                   max_depth: int = DEFAULT_MAX_DEPTH) -> list[Guard]:
    """All guards of ``program`` in walk order, optionally restricted to ``threads``."""
    return _keep(walk_program(program, max_depth).guards, threads)


def link_notify_locks(waits: Sequence[WaitSite], notifies: Sequence[NotifySite],
                      m: PointsToMap) -> list[NotifySite]:
    """Fill in each notify's lock: the held guard guarding a condvar it may signal."""
    linked = []
    for nt in notifies:
        lock = None
        wait_locks = [wt.lock for wt in waits if m.alias(wt.cvar, nt.cvar)]
        for g in nt.held:
            if any(m.alias(g.node, wl) for wl in wait_locks):
                lock = g.lock
                break
        linked.append(NotifySite(nt.cvar, lock, nt.line, nt.stack, nt.thread, nt.held))
    return linked


def collect_wait_notify(program: ir.Program, m: PointsToMap,
                        threads: Optional[Sequence[ThreadDesc]] = None,
                        max_depth: int = DEFAULT_MAX_DEPTH) -> tuple[list[WaitSite], list[NotifySite]]:
    walk = walk_program(program, max_depth)
    waits = _keep(walk.waits, threads)
    notifies = _keep(link_notify_locks(walk.waits, walk.notifies, m), threads)
    return waits, notifies


# ---------------------------------------------------------------------------
# Concurrency between threads
# ---------------------------------------------------------------------------


def _interval(t: ThreadDesc, open_ended: bool) -> tuple[tuple[int, ...], Optional[tuple[int, ...]]]:
    start = t.stack + (t.spawn_line,)
    if open_ended or t.join_line is None:
        return start, None
    return start, t.stack + (t.join_line,)


def concurrency(a: ThreadDesc, b: ThreadDesc) -> bool:
    """Whether two threads may run at the same time.

    A thread is never concurrent with itself.  A thread overlaps every thread
    it (transitively) spawned.  Otherwise the two spawn-to-join intervals of the
    ancestors just below the common spawner are compared, positions being call
    stacks extended with the spawn or join line; a missing join anywhere on the
    way down leaves the interval open.
    """
    if a == b:
        return False
    chain_a, chain_b = a.ancestors(), b.ancestors()
    if a in chain_b or b in chain_a:
        return True
    k = 0
    while k < min(len(chain_a), len(chain_b)) and chain_a[k] == chain_b[k]:
        k += 1
    top_a, top_b = chain_a[k], chain_b[k]
    open_a = any(t.join_line is None for t in chain_a[k:])
    open_b = any(t.join_line is None for t in chain_b[k:])
    start_a, end_a = _interval(top_a, open_a)
    start_b, end_b = _interval(top_b, open_b)
    before_b_ends = end_b is None or start_a < end_b
    before_a_ends = end_a is None or start_b < end_a
    return before_b_ends and before_a_ends
