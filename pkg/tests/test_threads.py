import pytest
from hypothesis import given, settings, strategies as st

from lirdeadlock import ir
from lirdeadlock.pointsto import build_constraint_graph, solve
from lirdeadlock.threads import (
    AnalysisError, ThreadDesc, collect_guards, collect_threads, collect_wait_notify, concurrency, walk_program,
)
from conftest import load
from lirgen import random_program


def tuples(guards):
    return [(g.node.place, g.kind, g.line, list(g.stack), g.thread.id, sorted(h.line for h in g.held))
            for g in guards]


def by_id(threads):
    return {t.id: t for t in threads}


def test_fig2_threads():
    t = by_id(collect_threads(load("fig2_conflict_lock")))
    assert (t["th1"].spawn_line, t["th1"].join_line, t["th1"].stack) == (22, 24, ())
    assert (t["main"].spawn_line, t["main"].join_line, t["main"].stack) == (19, 25, ())
    assert concurrency(t["th1"], t["main"])
    assert not concurrency(t["main"], t["main"])


def test_no_spawns_gives_entry_only():
    threads = collect_threads(ir.parse_program("fn main() { a = new mutex @1 }"))
    assert [t.id for t in threads] == ["main"]
    assert threads[0].is_entry


def test_spawn_inside_helper_records_call_stack():
    p = ir.parse_program("""
    fn main() { = call helper() @2 }
    fn helper() { spawn w work() @5\n join w @6 }
    fn work() { x = new data @9 }""")
    t = by_id(collect_threads(p))["w"]
    assert (t.spawn_line, t.join_line, t.stack) == (5, 6, (2,))


def test_sequential_threads_not_concurrent():
    t = by_id(collect_threads(load("sequential_threads")))
    assert (t["t1"].spawn_line, t["t1"].join_line) == (3, 5)
    assert (t["t2"].spawn_line, t["t2"].join_line) == (7, 9)
    assert not concurrency(t["t1"], t["t2"])
    assert concurrency(t["t1"], t["main"])


def test_unjoined_threads_stay_open():
    main = ThreadDesc("main", 1, 20)
    a = ThreadDesc("a", 3, None, (), main)
    b = ThreadDesc("b", 9, 12, (), main)
    assert concurrency(a, b) and concurrency(b, a)


def test_nested_spawn_intervals():
    main = ThreadDesc("main", 1, 30)
    a = ThreadDesc("a", 2, 4, (), main)
    inner = ThreadDesc("c", 11, 12, (2,), a)
    late = ThreadDesc("b", 6, 8, (), main)
    assert not concurrency(inner, late)
    assert concurrency(inner, a)


def test_fig1_guards():
    assert tuples(collect_guards(load("fig1_double_lock"))) == [
        ("g1", "MX", 4, [], "main", []),
        ("g2", "MX", 12, [5], "main", [4]),
    ]


def test_fig2_guards():
    got = {g.line: g for g in collect_guards(load("fig2_conflict_lock"))}
    assert tuples([got[7], got[9], got[13], got[15]]) == [
        ("rw1", "W", 7, [22], "th1", []),
        ("ret1", "R", 9, [22], "th1", [7]),
        ("rw2", "W", 13, [23], "main", []),
        ("ret2", "R", 15, [23], "main", [13]),
    ]


def test_release_ends_lifetime():
    p = ir.parse_program("fn main() { a = new mutex @1\n g = lock a @2\n release g @3\n h = lock a @4 }")
    assert [g.held for g in collect_guards(p)] == [(), ()]


def test_fig3_wait_notify():
    p = load("fig3_condvar_lock")
    m = solve(build_constraint_graph(p))
    waits, notifies = collect_wait_notify(p, m)
    (wt,), (nt,) = waits, notifies
    assert (wt.line, wt.stack, wt.thread.id, sorted(g.line for g in wt.held)) == (12, (26,), "th1", [8, 10])
    assert (nt.line, nt.stack, nt.thread.id, sorted(g.line for g in nt.held)) == (20, (26,), "th2", [17, 18])
    assert m.alias(wt.cvar, nt.cvar)
    assert nt.lock is not None and m.alias(wt.lock, nt.lock)


def test_fig4_wait_notify():
    p = load("fig4_condvar_unsat")
    m = solve(build_constraint_graph(p))
    (wt,), (nt,) = collect_wait_notify(p, m)
    assert (wt.line, wt.stack, wt.thread.id, len(wt.held)) == (9, (24,), "th1", 1)
    assert (nt.line, nt.stack, nt.thread.id, nt.held, nt.lock) == (17, (24,), "th2", (), None)


def test_no_condvars():
    p = load("single_lock")
    assert collect_wait_notify(p, solve(build_constraint_graph(p))) == ([], [])


def test_recursion_is_cut_with_a_note():
    p = ir.parse_program("""
    fn main() { = call f() @1 }
    fn f() { a = new mutex @3\n g = lock a @4\n release g @5\n = call f() @6 }""")
    walk = walk_program(p)
    assert [g.line for g in walk.guards] == [4]
    assert any("recursive" in n for n in walk.notes)


def test_depth_limit():
    body = "\n".join(f"fn f{i}() {{ = call f{i + 1}() @{i + 1} }}" for i in range(5))
    p = ir.parse_program("fn main() { = call f0() @100 }\n" + body + "\nfn f5() { x = new data @50 }")
    with pytest.raises(AnalysisError, match="f0"):
        walk_program(p, max_depth=3)
    assert walk_program(p, max_depth=10).guards == []


def test_branch_conservatism_example():
    p = ir.parse_program("""
    fn main() {
      a = new mutex @1
      b = new mutex @2
      if { ga = lock a @3\n release ga @4 } else { gb = lock b @5\n release gb @6 }
      c = new mutex @7
      gc = lock c @8
    }""")
    got = {g.line: g for g in collect_guards(p)}
    assert got[5].held == ()
    assert got[8].held == ()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_walk_properties(seed):
    p = ir.parse_program(random_program(seed))
    first, second = walk_program(p), walk_program(p)
    assert first.guards == second.guards and first.threads == second.threads
    for g in first.guards:
        assert g not in g.held
        assert all(h.thread == g.thread for h in g.held)
        assert all(h.line < g.line or h.stack != g.stack for h in g.held)
