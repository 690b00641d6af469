"""Bounded exhaustive interleaving explorer for lock IR programs.

The explorer executes the IR concretely: ``new`` allocates a fresh object,
copies, moves and ``arcclone`` share it, ``clone`` duplicates it.  It is
independent of the static points-to results.

Scheduling is exhaustive: from every state each runnable thread may take its
next statement, a branch may take either arm and a notify may wake any one
waiter.  Loops run ``loop_bound`` times.

Waits follow the predicate idiom ``while !cond { cv.wait(guard) }``.  A notify
issued while holding lock ``L`` also marks the condition of ``(cv, L)`` as
satisfied; a wait on ``(cv, L)`` returns at once when that condition holds,
and a waiter that wakes up without it goes back to waiting.  A notify that
finds no waiter is lost.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from . import ir


class OracleError(Exception):
    pass


class Verdict(str, Enum):
    DEADLOCK_REACHABLE = "DeadlockReachable"
    NO_DEADLOCK_WITHIN_BOUND = "NoDeadlockWithinBound"
    BOUND_EXCEEDED = "BoundExceeded"


@dataclass(frozen=True)
class Step:
    """One scheduling decision: ``line`` is None for a branch choice."""

    thread: str
    line: Optional[int]
    choice: int = 0


@dataclass(frozen=True)
class Blocked:
    thread: str
    line: int
    reason: str  # acquire, wait, reacquire, join
    waits_for: tuple[str, ...] = ()


@dataclass(frozen=True)
class ExploreResult:
    verdict: Verdict
    trace: tuple[Step, ...] = ()
    blocked: tuple[Blocked, ...] = ()
    states: int = 0

    @property
    def deadlock(self) -> bool:
        return self.verdict is Verdict.DEADLOCK_REACHABLE

    def _graphs(self) -> tuple[dict[str, set[str]], set[str]]:
        """Wait-for graph without self-blocked threads, and the self-blocked set."""
        graph = {b.thread: set(b.waits_for) for b in self.blocked}
        selfish = {t for t, targets in graph.items() if t in targets}
        pruned = {t: targets - selfish for t, targets in graph.items() if t not in selfish}
        return pruned, selfish

    def core(self) -> list[Blocked]:
        """Blocked threads that cause the deadlock rather than merely wait on it.

        These are threads parked on a condvar, threads waiting on themselves,
        and threads on a wait-for cycle among the remaining threads.  A thread
        that only waits on a self-blocked thread is a bystander.
        """
        pruned, selfish = self._graphs()
        return [b for b in self.blocked
                if b.reason == "wait" or b.thread in selfish or _reach(pruned, b.thread, b.thread)]

    def core_groups(self) -> list[list[Blocked]]:
        """Core sites grouped by cause.

        A parked waiter and a self-blocked thread each form a group of their
        own; the other core threads are grouped by strongly connected
        component of the wait-for graph.
        """
        pruned, selfish = self._graphs()
        groups: list[list[Blocked]] = []
        rest = []
        for b in self.core():
            if b.reason == "wait" or b.thread in selfish:
                groups.append([b])
            else:
                rest.append(b)
        placed: set[str] = set()
        for b in rest:
            if b.thread in placed:
                continue
            members = [c for c in rest
                       if c.thread == b.thread or (_reach(pruned, b.thread, c.thread) and _reach(pruned, c.thread, b.thread))]
            placed.update(c.thread for c in members)
            groups.append(members)
        return groups


def _reach(graph: dict[str, set[str]], start: str, goal: str) -> bool:
    seen, todo = set(), list(graph.get(start, ()))
    while todo:
        t = todo.pop()
        if t == goal:
            return True
        if t not in seen:
            seen.add(t)
            todo.extend(graph.get(t, ()))
    return False


# ---------------------------------------------------------------------------
# Compiled code
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _BranchOp:
    then: int
    orelse: int


@dataclass(frozen=True)
class _BlockOp:
    block: int


class _Code:
    def __init__(self, program: ir.Program, loop_bound: int) -> None:
        self.program = program
        self.loop_bound = loop_bound
        self.blocks: list[tuple] = []
        self.entry: dict[str, int] = {}
        for fn in program.functions.values():
            self.entry[fn.name] = self.compile(fn.body)

    def compile(self, block: ir.Block) -> int:
        ops: list = []
        for stmt in block:
            if isinstance(stmt, ir.Branch):
                ops.append(_BranchOp(self.compile(stmt.then), self.compile(stmt.orelse)))
            elif isinstance(stmt, ir.Loop):
                ops.append(_BlockOp(self.compile(tuple(stmt.body) * self.loop_bound)))
            else:
                ops.append(stmt)
        self.blocks.append(tuple(ops))
        return len(self.blocks) - 1


# ---------------------------------------------------------------------------
# Execution state
# ---------------------------------------------------------------------------


@dataclass
class _Frame:
    fn: str
    serial: int
    env: dict
    cont: list  # list of [block_id, pc]
    ret_dst: Optional[str]

    def clone(self) -> "_Frame":
        return _Frame(self.fn, self.serial, dict(self.env), [list(c) for c in self.cont], self.ret_dst)

    def key(self) -> tuple:
        return (self.fn, self.serial, tuple(sorted(self.env.items(), key=repr)),
                tuple(tuple(c) for c in self.cont), self.ret_dst)


@dataclass
class _Thread:
    tid: str
    status: str  # run, wait, reacq, done
    frames: list
    wait: Optional[tuple] = None  # (cv oid, guard value, wait line)
    handles: dict = field(default_factory=dict)
    alloc: int = 0

    def clone(self) -> "_Thread":
        return _Thread(self.tid, self.status, [f.clone() for f in self.frames], self.wait,
                       dict(self.handles), self.alloc)

    def key(self) -> tuple:
        return (self.tid, self.status, self.wait, tuple(sorted(self.handles.items())), self.alloc,
                tuple(f.key() for f in self.frames))

    def fresh(self) -> tuple:
        self.alloc += 1
        return (self.tid, self.alloc)


@dataclass
class _State:
    threads: list
    heap: dict  # oid -> [class, content]
    owners: dict  # oid -> tuple of (tid, gid, mode)
    pred: frozenset
    spawned: dict  # thread id -> instance count

    def clone(self) -> "_State":
        return _State([t.clone() for t in self.threads], {k: list(v) for k, v in self.heap.items()},
                      dict(self.owners), self.pred, dict(self.spawned))

    def key(self) -> tuple:
        return (tuple(t.key() for t in self.threads),
                tuple(sorted((k, tuple(v)) for k, v in self.heap.items())),
                tuple(sorted(self.owners.items())), tuple(sorted(self.pred)),
                tuple(sorted(self.spawned.items())))

    def thread(self, tid: str) -> Optional[_Thread]:
        for t in self.threads:
            if t.tid == tid:
                return t
        return None


def _available(state: _State, oid: tuple, mode: str) -> bool:
    owners = state.owners.get(oid, ())
    if not owners:
        return True
    return mode == "R" and all(o[2] == "R" for o in owners)


def _check_lock_invariants(state: _State) -> None:
    for oid, owners in state.owners.items():
        modes = [o[2] for o in owners]
        if any(m != "R" for m in modes) and len(owners) > 1:
            raise OracleError(f"mutual exclusion violated on {oid}: {owners}")


class _Machine:
    def __init__(self, program: ir.Program, loop_bound: int = 1) -> None:
        if loop_bound < 0:
            raise ValueError("loop_bound must be non-negative")
        self.program = program
        self.code = _Code(program, loop_bound)

    # -- construction ------------------------------------------------------

    def initial(self) -> _State:
        entry = self.program.entry
        thread = _Thread(entry, "run", [])
        thread.frames.append(self.frame(thread, entry, {}, None))
        state = _State([thread], {}, {}, frozenset(), {entry: 1})
        self.settle(state, thread)
        return state

    def frame(self, thread: _Thread, fn: str, env: dict, ret_dst: Optional[str]) -> _Frame:
        serial = thread.fresh()[1]
        return _Frame(fn, serial, env, [[self.code.entry[fn], 0]], ret_dst)

    # -- values ------------------------------------------------------------

    def cell(self, state: _State, ref: tuple):
        tid, serial, place = ref
        t = state.thread(tid)
        if t is None:
            return None
        for f in t.frames:
            if f.serial == serial:
                return f
        return None

    def read(self, state: _State, value):
        """Dereference one level."""
        if value is None:
            return None
        if value[0] == "ref":
            f = self.cell(state, value[1])
            return None if f is None else f.env.get(value[1][2])
        if value[0] == "obj":
            return state.heap[value[1]][1]
        return None

    def lock_object(self, state: _State, value, what: str) -> tuple:
        for _ in range(16):
            if value is None:
                break
            if value[0] == "obj":
                return value[1]
            if value[0] == "guard":
                return value[2]
            value = self.read(state, value)
        raise OracleError(f"{what} does not refer to an object")

    # -- scheduling helpers ------------------------------------------------

    def next_op(self, thread: _Thread):
        if thread.status == "done":
            return None
        frame = thread.frames[-1]
        bid, pc = frame.cont[-1]
        return self.code.blocks[bid][pc]

    def settle(self, state: _State, thread: _Thread) -> None:
        """Advance past exhausted blocks, returns and loop entries."""
        while thread.frames:
            frame = thread.frames[-1]
            if not frame.cont:
                self.return_from(state, thread)
                continue
            bid, pc = frame.cont[-1]
            block = self.code.blocks[bid]
            if pc >= len(block):
                frame.cont.pop()
                continue
            op = block[pc]
            if isinstance(op, _BlockOp):
                frame.cont[-1][1] += 1
                frame.cont.append([op.block, 0])
                continue
            return
        thread.status = "done"

    def return_from(self, state: _State, thread: _Thread) -> None:
        frame = thread.frames.pop()
        for value in frame.env.values():
            if value is not None and value[0] == "guard":
                self.drop_guard(state, value)
        fn = self.program.functions[frame.fn]
        if thread.frames and frame.ret_dst is not None:
            result = frame.env.get(fn.returns) if fn.returns else None
            thread.frames[-1].env[frame.ret_dst] = result

    def drop_guard(self, state: _State, guard) -> None:
        _, gid, oid, _, _ = guard
        owners = state.owners.get(oid, ())
        rest = tuple(o for o in owners if o[1] != gid)
        if rest:
            state.owners[oid] = rest
        else:
            state.owners.pop(oid, None)

    def advance(self, thread: _Thread) -> None:
        thread.frames[-1].cont[-1][1] += 1

    # -- transitions -------------------------------------------------------

    def moves(self, state: _State) -> list[tuple[int, int]]:
        """Enabled (thread index, choice) pairs in deterministic order."""
        out = []
        for i, t in enumerate(state.threads):
            if t.status == "done" or t.status == "wait":
                continue
            if t.status == "reacq":
                guard = t.wait[1]
                if _available(state, guard[2], guard[3]):
                    out.append((i, 0))
                continue
            op = self.next_op(t)
            env = t.frames[-1].env
            if isinstance(op, ir.Acquire):
                oid = self.lock_object(state, env.get(op.lock), f"line {op.line}: {op.lock}")
                if _available(state, oid, op.kind):
                    out.append((i, 0))
            elif isinstance(op, ir.Join):
                target = state.thread(t.handles.get(op.thread, ""))
                if target is not None and target.status == "done":
                    out.append((i, 0))
            elif isinstance(op, _BranchOp):
                out += [(i, 0), (i, 1)]
            elif isinstance(op, ir.Notify):
                cv = self.lock_object(state, env.get(op.condvar), f"line {op.line}: {op.condvar}")
                waiters = [j for j, w in enumerate(state.threads) if w.status == "wait" and w.wait[0] == cv]
                if waiters:
                    out += [(i, j) for j in waiters]
                else:
                    out.append((i, -1))
            else:
                out.append((i, 0))
        return out

    def blocked(self, state: _State) -> tuple[Blocked, ...]:
        out = []
        for t in state.threads:
            if t.status == "done":
                continue
            if t.status == "wait":
                out.append(Blocked(t.tid, t.wait[2], "wait"))
                continue
            if t.status == "reacq":
                guard = t.wait[1]
                owners = tuple(sorted({o[0] for o in state.owners.get(guard[2], ())}))
                out.append(Blocked(t.tid, guard[4], "reacquire", owners))
                continue
            op = self.next_op(t)
            env = t.frames[-1].env
            if isinstance(op, ir.Acquire):
                oid = self.lock_object(state, env.get(op.lock), op.lock)
                owners = tuple(sorted({o[0] for o in state.owners.get(oid, ())}))
                out.append(Blocked(t.tid, op.line, "acquire", owners))
            elif isinstance(op, ir.Join):
                out.append(Blocked(t.tid, op.line, "join", (t.handles.get(op.thread, ""),)))
        return tuple(out)

    def apply(self, state: _State, move: tuple[int, int]) -> tuple[_State, Step]:
        state = state.clone()
        i, choice = move
        t = state.threads[i]
        if t.status == "reacq":
            cv, guard, line = t.wait
            self.take(state, t, guard)
            if (cv, guard[2]) in state.pred:
                t.status, t.wait = "run", None
                self.settle(state, t)
            else:
                self.drop_guard(state, guard)
                t.status = "wait"
            _check_lock_invariants(state)
            return state, Step(t.tid, line, choice)
        op = self.next_op(t)
        frame = t.frames[-1]
        env = frame.env
        line = getattr(op, "line", None)
        self.advance(t)
        if isinstance(op, _BranchOp):
            frame.cont.append([op.then if choice == 0 else op.orelse, 0])
        elif isinstance(op, ir.New):
            oid = t.fresh()
            state.heap[oid] = [op.cls, None]
            env[op.dst] = ("obj", oid)
        elif isinstance(op, ir.AddrOf):
            env[op.dst] = ("ref", (t.tid, frame.serial, op.src))
        elif isinstance(op, (ir.Copy, ir.Move, ir.ArcClone)):
            env[op.dst] = env.get(op.src)
        elif isinstance(op, ir.Clone):
            value = env.get(op.src)
            if value is not None and value[0] == "obj":
                oid = t.fresh()
                state.heap[oid] = list(state.heap[value[1]])
                value = ("obj", oid)
            env[op.dst] = value
        elif isinstance(op, ir.Load):
            env[op.dst] = self.read(state, env.get(op.src))
        elif isinstance(op, ir.Store):
            self.store(state, env.get(op.dst), env.get(op.src))
        elif isinstance(op, ir.FieldRead):
            env[op.dst] = None
        elif isinstance(op, ir.Call):
            callee = self.program.functions[op.callee]
            args = {p.place: env.get(a.place) for a, p in zip(op.args, callee.params)}
            t.frames.append(self.frame(t, callee.name, args, op.dst))
        elif isinstance(op, ir.Spawn):
            callee = self.program.functions[op.callee]
            args = {p.place: env.get(a.place) for a, p in zip(op.args, callee.params)}
            count = state.spawned.get(op.thread, 0) + 1
            state.spawned[op.thread] = count
            tid = op.thread if count == 1 else f"{op.thread}#{count}"
            child = _Thread(tid, "run", [])
            child.frames.append(self.frame(child, callee.name, args, None))
            t.handles[op.thread] = tid
            state.threads.append(child)
            self.settle(state, child)
        elif isinstance(op, ir.Join):
            pass
        elif isinstance(op, ir.Acquire):
            oid = self.lock_object(state, env.get(op.lock), op.lock)
            gid = t.fresh()
            guard = ("guard", gid, oid, op.kind, op.line)
            self.take(state, t, guard)
            env[op.guard] = guard
        elif isinstance(op, ir.Release):
            guard = env.get(op.guard)
            if guard is not None and guard[0] == "guard":
                self.drop_guard(state, guard)
            env[op.guard] = None
        elif isinstance(op, ir.Wait):
            cv = self.lock_object(state, env.get(op.condvar), op.condvar)
            guard = env.get(op.guard)
            if guard is None or guard[0] != "guard":
                raise OracleError(f"line {op.line}: wait without a live guard")
            if (cv, guard[2]) not in state.pred:
                self.drop_guard(state, guard)
                t.status = "wait"
                t.wait = (cv, guard, op.line)
        elif isinstance(op, ir.Notify):
            cv = self.lock_object(state, env.get(op.condvar), op.condvar)
            held = {oid for oid, owners in state.owners.items() if any(o[0] == t.tid for o in owners)}
            state.pred = state.pred | {(cv, oid) for oid in held}
            if choice >= 0:
                state.threads[choice].status = "reacq"
        else:  # pragma: no cover - parser produces no other statements
            raise OracleError(f"unsupported statement {op!r}")
        if t.status == "run":
            self.settle(state, t)
        _check_lock_invariants(state)
        return state, Step(t.tid, line, max(choice, 0))

    def take(self, state: _State, thread: _Thread, guard) -> None:
        _, gid, oid, mode, _ = guard
        state.owners[oid] = state.owners.get(oid, ()) + ((thread.tid, gid, mode),)

    def store(self, state: _State, target, value) -> None:
        if target is None:
            return
        if target[0] == "ref":
            f = self.cell(state, target[1])
            if f is not None:
                f.env[target[1][2]] = value
        elif target[0] == "obj":
            state.heap[target[1]][1] = value
        elif target[0] == "guard":
            state.heap[target[2]][1] = value


def explore(program: ir.Program, max_steps: int = 100_000, loop_bound: int = 1) -> ExploreResult:
    """Search all schedules of ``program`` depth first for a deadlocked state.

    ``max_steps`` bounds the number of distinct states visited.
    """
    machine = _Machine(program, loop_bound)
    init = machine.initial()
    visited = {init.key()}
    stack: list[tuple[_State, tuple[Step, ...]]] = [(init, ())]
    while stack:
        state, trace = stack.pop()
        moves = machine.moves(state)
        if not moves:
            if any(t.status != "done" for t in state.threads):
                return ExploreResult(Verdict.DEADLOCK_REACHABLE, trace, machine.blocked(state), len(visited))
            continue
        for move in reversed(moves):
            nxt, step = machine.apply(state, move)
            key = nxt.key()
            if key in visited:
                continue
            visited.add(key)
            if len(visited) > max_steps:
                return ExploreResult(Verdict.BOUND_EXCEEDED, states=len(visited))
            stack.append((nxt, trace + (step,)))
    return ExploreResult(Verdict.NO_DEADLOCK_WITHIN_BOUND, states=len(visited))


def replay(program: ir.Program, trace: Sequence[Step], loop_bound: int = 1) -> tuple[Blocked, ...]:
    """Re-execute ``trace`` and return the blocked threads of the final state.

    Raises :class:`OracleError` when a step is not enabled, or when the final
    state still has a runnable thread.
    """
    machine = _Machine(program, loop_bound)
    state = machine.initial()
    for step in trace:
        candidates = [
            mv for mv in machine.moves(state)
            if state.threads[mv[0]].tid == step.thread and max(mv[1], 0) == step.choice
        ]
        if not candidates:
            raise OracleError(f"step {step} is not enabled")
        state, _ = machine.apply(state, candidates[0])
    if machine.moves(state):
        raise OracleError("trace does not end in a deadlocked state")
    return machine.blocked(state)


def format_result(result: ExploreResult) -> str:
    lines = [result.verdict.value]
    if result.deadlock:
        lines.append("trace:")
        for step in result.trace:
            where = "branch" if step.line is None else f"line {step.line}"
            suffix = f" (choice {step.choice})" if step.line is None or step.choice else ""
            lines.append(f"  {step.thread}: {where}{suffix}")
        lines.append("blocked:")
        for b in result.blocked:
            waits = f" waiting for {', '.join(b.waits_for)}" if b.waits_for else ""
            lines.append(f"  {b.thread} at line {b.line} ({b.reason}){waits}")
    lines.append(f"states explored: {result.states}")
    return "\n".join(lines) + "\n"


def uncovered(result: ExploreResult, reported: Sequence[set[int]]) -> list[list[Blocked]]:
    """Core groups of a deadlock whose lines are not all contained in one reported line set."""
    if not result.deadlock:
        return []
    return [g for g in result.core_groups() if not any({b.line for b in g} <= lines for lines in reported)]
