"""End-to-end analysis of one lock IR program."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

from . import ir
from .detect import (
    CondvarDetection, Diagnostic, LockDetection, build_diagnostics,
    detect_condvar_deadlocks, detect_lock_deadlocks,
)
from .pointsto import ConstraintGraph, PointsToMap, build_constraint_graph, solve
from .threads import (
    DEFAULT_MAX_DEPTH, Guard, NotifySite, ThreadDesc, WaitSite, link_notify_locks, walk_program,
)


class InvalidProgram(Exception):
    def __init__(self, errors: list[ir.ValidationError]) -> None:
        self.errors = errors
        super().__init__("; ".join(str(e) for e in errors))


@dataclass(frozen=True)
class Options:
    max_depth: int = DEFAULT_MAX_DEPTH
    strict_condvar: bool = False
    general_cycles: bool = False

    def __post_init__(self) -> None:
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")


@dataclass
class Analysis:
    program: ir.Program
    graph: ConstraintGraph
    points_to: PointsToMap
    threads: list[ThreadDesc]
    guards: list[Guard]
    waits: list[WaitSite]
    notifies: list[NotifySite]
    locks: LockDetection
    condvars: CondvarDetection
    diagnostics: list[Diagnostic]
    notes: list[str] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def stats(self) -> dict[str, int]:
        return {
            "nodes": len(self.graph.nodes),
            "edges": len(self.graph),
            "solve_iterations": self.points_to.iterations,
            "threads": len(self.threads),
            "guards": len(self.guards),
            "wait_sites": len(self.waits),
            "notify_sites": len(self.notifies),
        }


def analyze(program: ir.Program, options: Optional[Options] = None, file: str = "") -> Analysis:
    """Run validation, points-to solving, collection and both detectors on ``program``.

    Raises :class:`InvalidProgram` when validation fails.
    """
    options = options or Options()
    start = time.perf_counter()
    errors = ir.validate(program)
    if errors:
        raise InvalidProgram(errors)
    graph = build_constraint_graph(program)
    m = solve(graph)
    walk = walk_program(program, options.max_depth)
    notifies = link_notify_locks(walk.waits, walk.notifies, m)
    locks = detect_lock_deadlocks(walk.guards, m, general_cycles=options.general_cycles)
    condvars = detect_condvar_deadlocks(walk.waits, notifies, m, strict=options.strict_condvar)
    diagnostics = build_diagnostics(locks, condvars, file)
    return Analysis(
        program, graph, m, walk.threads, walk.guards, walk.waits, notifies,
        locks, condvars, diagnostics, walk.notes, time.perf_counter() - start,
    )


def analyze_text(text: str, options: Optional[Options] = None, file: str = "") -> Analysis:
    return analyze(ir.parse_program(text), options, file)
