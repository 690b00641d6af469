"""Command-line front end: ``lirdeadlock analyze`` and ``lirdeadlock oracle``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, ir, oracle
from .analysis import Analysis, InvalidProgram, Options, analyze
from .pointsto import dump_text, graph_to_dot
from .report import build_report, render
from .threads import AnalysisError

log = logging.getLogger("lirdeadlock")

EXIT_CLEAN, EXIT_FOUND, EXIT_ERROR = 0, 1, 2


@dataclass(frozen=True)
class RunConfig:
    inputs: tuple[str, ...]
    format: str = "text"
    dump_consg: Optional[str] = None
    dump_pts: Optional[str] = None
    dump_lockgraph: Optional[str] = None
    dump_elg: Optional[str] = None
    dump_sites: Optional[str] = None
    strict_condvar: bool = False
    general_cycles: bool = False
    max_depth: int = 32
    oracle: bool = False
    max_steps: int = 100_000

    def __post_init__(self) -> None:
        if self.format not in ("text", "json"):
            raise ValueError(f"unknown format {self.format!r}")
        if self.max_depth < 1:
            raise ValueError("--max-depth must be at least 1")

    @property
    def options(self) -> Options:
        return Options(self.max_depth, self.strict_condvar, self.general_cycles)


def expand_inputs(paths: Sequence[str]) -> list[Path]:
    out: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(p.rglob("*.lir")))
        else:
            out.append(p)
    return out


def _sites_lines(name: str, a: Analysis) -> list[str]:
    rows = []
    for g in a.guards:
        rows.append({"file": name, "type": "guard", "line": g.line, "stack": list(g.stack), "thread": g.thread.id,
                     "kind": g.kind, "lock": str(g.lock), "held": [h.line for h in g.held]})
    for w in a.waits:
        rows.append({"file": name, "type": "wait", "line": w.line, "stack": list(w.stack), "thread": w.thread.id,
                     "condvar": str(w.cvar), "lock": str(w.lock), "held": [h.line for h in w.held]})
    for n in a.notifies:
        rows.append({"file": name, "type": "notify", "line": n.line, "stack": list(n.stack), "thread": n.thread.id,
                     "condvar": str(n.cvar), "held": [h.line for h in n.held]})
    return [json.dumps(r, sort_keys=True) for r in rows]


def run(cfg: RunConfig, out=None, err=None) -> int:
    out = out or sys.stdout.buffer
    err = err or sys.stderr
    runs: list[tuple[str, str, Analysis]] = []
    programs: list[ir.Program] = []
    failed = False
    for path in expand_inputs(cfg.inputs):
        name = str(path)
        try:
            text = path.read_text(encoding="utf-8")
            program = ir.parse_program(text)
            analysis = analyze(program, cfg.options, name)
        except OSError as e:
            print(f"{name}: {e.strerror or e}", file=err)
            failed = True
            continue
        except ir.ParseError as e:
            print(f"{name}:{e}", file=err)
            failed = True
            continue
        except InvalidProgram as e:
            for v in e.errors:
                print(f"{name}:{v}", file=err)
            failed = True
            continue
        except AnalysisError as e:
            print(f"{name}: {e}", file=err)
            failed = True
            continue
        for note in analysis.notes:
            log.info("%s: %s", name, note)
        runs.append((name, text, analysis))
        programs.append(program)
    if failed:
        return EXIT_ERROR

    dumps = [
        (cfg.dump_consg, lambda n, a: graph_to_dot(a.graph, a.points_to, name="consg")),
        (cfg.dump_pts, lambda n, a: dump_text(a.points_to)),
        (cfg.dump_lockgraph, lambda n, a: a.locks.graph.to_dot("lockgraph")),
        (cfg.dump_elg, lambda n, a: a.condvars.graph.to_dot("elg")),
        (cfg.dump_sites, lambda n, a: "".join(line + "\n" for line in _sites_lines(n, a))),
    ]
    for target, produce in dumps:
        if target is None:
            continue
        chunks = []
        for name, _, a in runs:
            body = produce(name, a)
            chunks.append(body if cfg.dump_sites == target or len(runs) == 1 else f"// {name}\n{body}")
        Path(target).write_text("".join(chunks), encoding="utf-8")

    report = build_report(runs)
    out.write(render(report, cfg.format))

    missed = 0
    if cfg.oracle:
        for (name, _, a), program in zip(runs, programs):
            result = oracle.explore(program, cfg.max_steps)
            gaps = oracle.uncovered(result, [d.lines for d in a.diagnostics])
            missed += len(gaps)
            status = "ok" if not gaps else "MISSED " + "; ".join(
                ",".join(str(b.line) for b in g) for g in gaps)
            print(f"oracle {name}: {result.verdict.value} ({result.states} states) {status}", file=err)
    if missed:
        return EXIT_FOUND
    return EXIT_FOUND if report.diagnostics else EXIT_CLEAN


def run_oracle(path: str, max_steps: int, loop_bound: int, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        program = ir.load_program(path)
    except OSError as e:
        print(f"{path}: {e.strerror or e}", file=err)
        return EXIT_ERROR
    except ir.ParseError as e:
        print(f"{path}:{e}", file=err)
        return EXIT_ERROR
    errors = ir.validate(program)
    if errors:
        for v in errors:
            print(f"{path}:{v}", file=err)
        return EXIT_ERROR
    try:
        result = oracle.explore(program, max_steps, loop_bound)
    except oracle.OracleError as e:
        print(f"{path}: {e}", file=err)
        return EXIT_ERROR
    out.write(oracle.format_result(result))
    return EXIT_FOUND if result.deadlock else EXIT_CLEAN


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lirdeadlock", description="Static deadlock detection for lock IR programs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log analysis notes to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="analyze .lir files or directories")
    a.add_argument("inputs", nargs="+", metavar="PATH")
    a.add_argument("--format", choices=("text", "json"), default="text")
    a.add_argument("--dump-consg", metavar="PATH", help="write the constraint graph as DOT")
    a.add_argument("--dump-pts", metavar="PATH", help="write the solved points-to sets as text")
    a.add_argument("--dump-lockgraph", metavar="PATH", help="write the lock graph as DOT")
    a.add_argument("--dump-elg", metavar="PATH", help="write the extended lock graph as DOT")
    a.add_argument("--dump-sites", metavar="PATH", help="write guard, wait and notify sites as JSON lines")
    a.add_argument("--strict-condvar", action="store_true",
                   help="report every wait as a possible missing notify")
    a.add_argument("--general-cycles", action="store_true",
                   help="also search lock-order cycles through three or more threads")
    a.add_argument("--max-depth", type=int, default=32, metavar="N", help="call depth limit (default 32)")
    a.add_argument("--oracle", action="store_true", help="cross-check each file with the interleaving explorer")
    a.add_argument("--max-steps", type=int, default=100_000, metavar="N", help="state bound for --oracle")

    o = sub.add_parser("oracle", help="explore all interleavings of one program")
    o.add_argument("input", metavar="FILE")
    o.add_argument("--max-steps", type=int, default=100_000, metavar="N")
    o.add_argument("--loop-bound", type=int, default=1, metavar="K", help="loop unrolling count (default 1)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.command == "oracle":
        return run_oracle(args.input, args.max_steps, args.loop_bound)
    if args.max_depth < 1:
        parser.error("--max-depth must be at least 1")
    cfg = RunConfig(
        tuple(args.inputs), args.format, args.dump_consg, args.dump_pts, args.dump_lockgraph, args.dump_elg,
        args.dump_sites, args.strict_condvar, args.general_cycles, args.max_depth, args.oracle, args.max_steps,
    )
    return run(cfg)
