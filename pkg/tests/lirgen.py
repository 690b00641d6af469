"""Random lock IR programs for the static/dynamic cross-check.

Family: no loops, at most three threads (main plus one or two spawned),
at most three lock objects, at most one condvar.  Lock programs nest
acquisitions LIFO, never take a read lock while another read lock is held
(read/read ordering is outside what the static pass models), and the main
thread finishes its own critical section before its joins.  Condvar programs spawn one waiter and at most one notifier; the
waiter may hold up to two outer locks around a single wait.
"""

from __future__ import annotations

import random


class _Out:
    def __init__(self) -> None:
        self.lines: list[str] = []
        self.guards = 0

    def emit(self, text: str, indent: int = 1) -> None:
        self.lines.append("  " * indent + text)

    def guard(self) -> str:
        self.guards += 1
        return f"g{self.guards}"


def _tag(lines: list[str]) -> str:
    """Append ``@line`` to every simple statement, using its physical line."""
    out = []
    for n, text in enumerate(lines, 1):
        bare = text.strip()
        simple = bare and not bare.startswith(("fn ", "if ", "}"))
        out.append(f"{text} @{n}" if simple else text)
    return "\n".join(out) + "\n"


def _acquire_op(kind: str, mode: str) -> str:
    if kind == "mutex":
        return "lock"
    return "read" if mode == "R" else "write"


def _section(rng: random.Random, out: _Out, places: list[str], kinds: list[str], indent: int,
             held: list[tuple[int, str]], budget: int, allow_branch: bool = True) -> None:
    """Emit a balanced block of 1..budget nested acquisitions."""
    count = rng.randint(1, budget)
    opened: list[str] = []
    for _ in range(count):
        if allow_branch and rng.random() < 0.2:
            out.emit("if {", indent)
            _section(rng, out, places, kinds, indent + 1, list(held), 2, False)
            out.emit("} else {", indent)
            _section(rng, out, places, kinds, indent + 1, list(held), 2, False)
            out.emit("}", indent)
        fresh = [j for j in range(len(places)) if all(j != h[0] for h in held)]
        i = rng.choice(fresh) if fresh and rng.random() < 0.85 else rng.randrange(len(places))
        kind = kinds[i]
        mode = "MX" if kind == "mutex" else rng.choice("RW")
        if mode == "R" and any(h[1] == "R" for h in held):
            mode = "W"
        g = out.guard()
        out.emit(f"{g} = {_acquire_op(kind, mode)} {places[i]}", indent)
        held.append((i, mode))
        opened.append(g)
    for g in reversed(opened):
        out.emit(f"release {g}", indent)


def lock_program(rng: random.Random) -> str:
    nlocks = rng.randint(1, 3)
    kinds = [rng.choice(["mutex", "mutex", "rwlock"]) for _ in range(nlocks)]
    nworkers = rng.randint(1, 2)
    locks = [f"l{i}" for i in range(nlocks)]
    params = [f"x{i}" for i in range(nlocks)]
    out = _Out()
    out.lines.append("fn main() {")
    for name, kind in zip(locks, kinds):
        out.emit(f"{name} = new {kind}")
    main_at = rng.randint(0, nworkers) if rng.random() < 0.7 else None
    for k in range(1, nworkers + 1):
        if main_at == k - 1:
            _section(rng, out, locks, kinds, 1, [], 3)
        copies = []
        for name in locks:
            out.emit(f"{name}_{k} = arcclone {name}")
            copies.append(f"move {name}_{k}")
        out.emit(f"spawn t{k} w{k}({', '.join(copies)})")
    if main_at == nworkers:
        _section(rng, out, locks, kinds, 1, [], 3)
    for k in rng.sample(range(1, nworkers + 1), nworkers):
        out.emit(f"join t{k}")
    out.lines.append("}")

    for k in range(1, nworkers + 1):
        formals = ", ".join(f"move {p}: arc" for p in params)
        out.lines.append("")
        out.lines.append(f"fn w{k}({formals}) {{")
        helper = rng.random() < 0.3
        for _ in range(rng.choice([1, 1, 2])):
            if helper:
                out.emit(f"= call h{k}({', '.join('ref ' + p for p in params)})")
            else:
                _section(rng, out, params, kinds, 1, [], 3)
        out.lines.append("}")
        if helper:
            out.lines.append("")
            out.lines.append(f"fn h{k}({', '.join('ref ' + p for p in params)}) {{")
            _section(rng, out, params, kinds, 1, [], 3)
            out.lines.append("}")
    return _tag(out.lines)


def condvar_program(rng: random.Random) -> str:
    nouter = rng.randint(0, 2)
    kinds = [rng.choice(["mutex", "rwlock"]) for _ in range(nouter)]
    outer = [f"o{i}" for i in range(nouter)]
    with_notifier = rng.random() < 0.9
    out = _Out()
    out.lines.append("fn main() {")
    out.emit("c = new condvar")
    out.emit("m = new mutex")
    for name, kind in zip(outer, kinds):
        out.emit(f"{name} = new {kind}")
    roles = ["waiter", "notifier"] if with_notifier else ["waiter"]
    rng.shuffle(roles)
    names = ["c", "m"] + outer
    for role in roles:
        args = []
        for name in names:
            out.emit(f"{name}_{role} = arcclone {name}")
            args.append(f"move {name}_{role}")
        out.emit(f"spawn {role} {role}_fn({', '.join(args)})")
    for role in rng.sample(roles, len(roles)):
        out.emit(f"join {role}")
    out.lines.append("}")
    formals = ", ".join(f"move {n}: arc" for n in names)

    def outer_locks(indent: int) -> list[str]:
        chosen = rng.sample(range(nouter), rng.randint(0, nouter))
        opened = []
        read_held = False
        for i in chosen:
            mode = "MX" if kinds[i] == "mutex" else rng.choice("RW")
            if mode == "R" and read_held:
                mode = "W"
            read_held = read_held or mode == "R"
            g = out.guard()
            out.emit(f"{g} = {_acquire_op(kinds[i], mode)} {outer[i]}", indent)
            opened.append(g)
        return opened

    out.lines.append("")
    out.lines.append(f"fn waiter_fn({formals}) {{")
    opened = outer_locks(1)
    g = out.guard()
    out.emit(f"{g} = lock m")
    out.emit(f"wait c {g}")
    out.emit(f"release {g}")
    for h in reversed(opened):
        out.emit(f"release {h}")
    out.lines.append("}")

    if with_notifier:
        out.lines.append("")
        out.lines.append(f"fn notifier_fn({formals}) {{")
        opened = outer_locks(1)
        if rng.random() < 0.8:
            g = out.guard()
            out.emit(f"{g} = lock m")
            out.emit("flag = new data")
            out.emit(f"*{g} = flag")
            out.emit("notify c")
            out.emit(f"release {g}")
        else:
            out.emit("notify c")
        for h in reversed(opened):
            out.emit(f"release {h}")
        out.lines.append("}")
    return _tag(out.lines)


def random_program(seed: int) -> str:
    rng = random.Random(seed)
    if rng.random() < 0.35:
        return condvar_program(rng)
    return lock_program(rng)
