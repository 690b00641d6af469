import pytest

from lirdeadlock import Options, analyze, ir
from lirdeadlock.detect import (
    BLOCKING_PAIRS, DiagnosticKind, SignalNode, alias_common, detect_condvar_deadlocks, detect_lock_deadlocks,
    is_blocking, pair_kind,
)
from lirdeadlock.threads import concurrency
from conftest import load


def run(name, **kw):
    return analyze(load(name), Options(**kw))


def test_pair_kinds():
    assert pair_kind("MX", "MX") == "MM"
    assert pair_kind("R", "W") == "RW"
    assert BLOCKING_PAIRS == {"MM", "RW", "WW", "WR"}
    assert not is_blocking("R", "R")
    assert not is_blocking("MX", "W")


def test_fig1_double_lock():
    a = run("fig1_double_lock")
    (dl,) = a.locks.double_locks
    assert (dl.guard.line, dl.guard.stack, dl.held.line) == (12, (5,), 4)
    assert a.locks.conflicts == []


def test_fig2_conflict_lock_and_graph():
    a = run("fig2_conflict_lock")
    assert a.locks.double_locks == []
    (cl,) = a.locks.conflicts
    assert sorted(g.line for g in cl.guards) == [7, 9, 13, 15]
    lines = lambda pairs: {(s.line, d.line) for s, d in pairs}
    assert lines(a.locks.graph.edges_of("D")) == {(7, 9), (13, 15)}
    assert {frozenset(p) for p in lines(a.locks.graph.edges_of("A"))} == {frozenset((7, 15)), frozenset((9, 13))}
    for s, d in a.locks.graph.edges_of("A"):
        assert a.points_to.alias(s.node, d.node)
    assert len({g.thread for g in cl.guards}) == 2
    assert concurrency(cl.guards[0].thread, cl.guards[2].thread)


def test_gatelock_filtered():
    a = run("gatelock")
    assert a.locks.conflicts == []
    outer = [g for g in a.guards if g.node.place == "outer"]
    pairs = alias_common(outer[:1], outer[1:], a.points_to)
    assert [(x.line, y.line) for x, y in pairs] == [(13, 21)]


def test_alias_common_empty():
    a = run("fig2_conflict_lock")
    assert alias_common([], a.guards, a.points_to) == []
    first = [g for g in a.guards if g.line in (7, 13)]
    assert alias_common(first[0].held, first[1].held, a.points_to) == []


def test_read_read_is_quiet():
    a = run("rwlock_read_read")
    assert a.diagnostics == []
    assert a.locks.graph.edges == []


def test_no_finding_uses_rr_pairs():
    text = """
    fn main() {
      a = new rwlock @1
      b = new rwlock @2
      a1 = arcclone a @3
      b1 = arcclone b @3
      spawn t w(move a1, move b1) @4
      ga = read a @5
      gb = read b @6
      release gb @7
      release ga @7
      join t @8
    }
    fn w(move x: arc, move y: arc) {
      gy = read y @11
      gx = read x @12
      release gx @13
      release gy @13
    }"""
    a = analyze(ir.parse_program(text))
    assert a.diagnostics == [] and a.locks.graph.edges == []


def test_sequential_threads_are_quiet():
    assert run("sequential_threads").diagnostics == []


def test_fig3_condvar_interaction():
    a = run("fig3_condvar_lock")
    (f,) = a.condvars.findings
    assert f.kind is DiagnosticKind.CONDVAR_LOCK_INTERACTION
    assert (f.wait.line, f.notify.line) == (12, 20)
    elg = a.condvars.graph
    (signal,) = elg.signals()
    gi1 = next(n for n in elg.nodes if not isinstance(n, SignalNode) and n.line == 8)
    gi2 = next(n for n in elg.nodes if not isinstance(n, SignalNode) and n.line == 17)
    assert (gi1, signal) in elg.edges_of("D") and (signal, gi2) in elg.edges_of("D")
    assert elg.has_path(gi1, gi2)
    assert {frozenset((s.line, d.line)) for s, d in elg.edges_of("A")} == {frozenset((8, 17))}
    assert "shape=diamond" in elg.to_dot("elg")


def test_fig4_unsatisfiable_and_fixed():
    (f,) = run("fig4_condvar_unsat").condvars.findings
    assert f.kind is DiagnosticKind.CONDVAR_CONDITION_UNSATISFIABLE
    assert (f.wait.line, f.notify.line) == (9, 17)
    assert run("fig4_condvar_fixed").diagnostics == []


WAIT_ONLY = """
fn main() {
  c = new condvar @1
  m = new mutex @2
  g = lock m @3
  wait c g @4
  release g @5
}"""


def test_missing_notify():
    a = analyze(ir.parse_program(WAIT_ONLY))
    assert [d.kind for d in a.diagnostics] == [DiagnosticKind.CONDVAR_MISSING_NOTIFY]


def test_strict_flags_every_wait():
    assert run("fig4_condvar_fixed").diagnostics == []
    kinds = [d.kind for d in run("fig4_condvar_fixed", strict_condvar=True).diagnostics]
    assert kinds == [DiagnosticKind.CONDVAR_MISSING_NOTIFY]


def test_non_concurrent_pair():
    text = """
    fn main() {
      c = new condvar @1
      m = new mutex @2
      c1 = arcclone c @3
      m1 = arcclone m @3
      spawn n notifier(move c1, move m1) @4
      join n @5
      spawn w waiter(move c, move m) @6
      join w @7
    }
    fn notifier(move c: arc, move m: arc) {
      h = lock m @11
      notify c @12
      release h @13
    }
    fn waiter(move c: arc, move m: arc) {
      g = lock m @16
      wait c g @17
      release g @18
    }"""
    kinds = [d.kind for d in analyze(ir.parse_program(text)).diagnostics]
    assert kinds == [DiagnosticKind.CONDVAR_NON_CONCURRENT]


THREE_WAY = """
fn main() {
  a = new mutex @1
  b = new mutex @2
  c = new mutex @3
  a1 = arcclone a @4
  b1 = arcclone b @4
  b2 = arcclone b @5
  c2 = arcclone c @5
  spawn t1 w1(move a1, move b1) @6
  spawn t2 w2(move b2, move c2) @7
  g1 = lock c @8
  g2 = lock a @9
  release g2 @10
  release g1 @10
  join t1 @11
  join t2 @12
}
fn w1(move x: arc, move y: arc) {
  gx = lock x @15
  gy = lock y @16
  release gy @17
  release gx @17
}
fn w2(move x: arc, move y: arc) {
  hx = lock x @20
  hy = lock y @21
  release hy @22
  release hx @22
}"""


def test_three_thread_cycle_needs_flag():
    p = ir.parse_program(THREE_WAY)
    assert analyze(p).diagnostics == []
    (d,) = analyze(p, Options(general_cycles=True)).diagnostics
    assert d.kind is DiagnosticKind.CONFLICT_LOCK
    assert d.lines == {8, 9, 15, 16, 20, 21}


def test_detection_is_order_independent():
    a = run("fig2_conflict_lock")
    forward = detect_lock_deadlocks(a.guards, a.points_to)
    backward = detect_lock_deadlocks(list(reversed(a.guards)), a.points_to)
    key = lambda det: sorted(sorted(g.site for g in c.guards) for c in det.conflicts)
    assert key(forward) == key(backward)
    assert len(backward.conflicts) == 1


def test_double_lock_reported_once():
    text = """
    fn main() {
      a = new mutex @1
      g1 = lock a @2
      if { g2 = lock a @3\n release g2 @4 } else { g3 = lock a @5\n release g3 @6 }
      release g1 @7
    }"""
    a = analyze(ir.parse_program(text))
    assert sorted(sorted(d.lines) for d in a.diagnostics) == [[2, 3], [2, 5]]


def test_condvar_detection_without_sites():
    a = run("single_lock")
    det = detect_condvar_deadlocks([], [], a.points_to)
    assert det.findings == [] and det.graph.nodes == []


def test_lockgraph_dot():
    dot = run("fig2_conflict_lock").locks.graph.to_dot()
    assert dot.count("style=solid") == 2
    assert dot.count("style=dashed, dir=both") == 2


def test_bad_edge_kind():
    a = run("fig2_conflict_lock")
    with pytest.raises(ValueError):
        a.locks.graph.add_edge(a.guards[0], a.guards[1], "X")


def test_diagnostic_stacks_in_messages():
    (d,) = run("fig1_double_lock").diagnostics
    assert "via call @L5" in d.message
    assert [s.line for s in d.sites] == [4, 12]
