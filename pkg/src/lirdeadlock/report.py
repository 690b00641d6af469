"""Report assembly and rendering (text and JSON)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Sequence

from . import __version__
from .analysis import Analysis
from .detect import Diagnostic, Site
from .threads import ThreadDesc

STAT_KEYS = ("nodes", "edges", "solve_iterations", "threads", "guards", "wait_sites", "notify_sites")


@dataclass
class Report:
    version: str
    inputs: list[str]
    digest: str
    diagnostics: list[Diagnostic]
    stats: dict[str, int]
    wall_time: float = field(default=0.0, compare=False)

    @property
    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for d in self.diagnostics:
            out[d.kind.value] = out.get(d.kind.value, 0) + 1
        return out


def digest(sources: Sequence[tuple[str, str]]) -> str:
    h = hashlib.sha256()
    for name, text in sources:
        h.update(name.encode())
        h.update(b"\0")
        h.update(text.encode())
        h.update(b"\0")
    return h.hexdigest()


def build_report(runs: Sequence[tuple[str, str, Analysis]]) -> Report:
    """Merge per-file analyses, given as ``(path, source, analysis)``, into one report."""
    stats = {k: 0 for k in STAT_KEYS}
    diagnostics: list[Diagnostic] = []
    wall = 0.0
    for _, _, a in runs:
        for k, v in a.stats.items():
            stats[k] += v
        diagnostics.extend(a.diagnostics)
        wall += a.wall_time
    diagnostics.sort(key=Diagnostic.sort_key)
    return Report(__version__, [p for p, _, _ in runs], digest([(p, s) for p, s, _ in runs]),
                  diagnostics, stats, wall)


def _thread_json(t: ThreadDesc) -> dict[str, Any]:
    return {"id": t.id, "spawn": t.spawn_line, "join": t.join_line, "stack": list(t.stack)}


def _site_json(s: Site) -> dict[str, Any]:
    return {"line": s.line, "stack": list(s.stack), "thread": _thread_json(s.thread), "role": s.role}


def to_json_obj(report: Report) -> dict[str, Any]:
    # Wall time is left out so that the document is reproducible byte for byte.
    return {
        "version": report.version,
        "inputs": list(report.inputs),
        "digest": report.digest,
        "diagnostics": [
            {"kind": d.kind.value, "file": d.file, "sites": [_site_json(s) for s in d.sites], "message": d.message}
            for d in report.diagnostics
        ],
        "stats": dict(report.stats),
    }


def _thread_text(t: ThreadDesc) -> str:
    join = "-" if t.join_line is None else str(t.join_line)
    return f"{t.id} ({t.spawn_line},{join},{list(t.stack)})"


def render_text(report: Report) -> str:
    out: list[str] = []
    for d in report.diagnostics:
        where = f"{d.file}:{d.primary_line}" if d.file else f"line {d.primary_line}"
        out.append(f"{d.kind.value} at {where}")
        out.append(f"  {d.message}")
        for s in d.sites:
            via = " via call " + " -> ".join(f"@L{x}" for x in s.stack) if s.stack else ""
            out.append(f"  {s.role:<11} line {s.line}{via}  [thread {_thread_text(s.thread)}]")
        out.append("")
    counts = ", ".join(f"{k}={v}" for k, v in sorted(report.counts.items())) or "none"
    out.append(f"{len(report.diagnostics)} diagnostic(s): {counts}")
    return "\n".join(out) + "\n"


def render(report: Report, fmt: str = "text") -> bytes:
    if fmt == "json":
        return (json.dumps(to_json_obj(report), indent=2, sort_keys=True) + "\n").encode()
    if fmt == "text":
        return render_text(report).encode()
    raise ValueError(f"unknown format {fmt!r}")


def load_schema() -> dict[str, Any]:
    return json.loads(resources.files(__package__).joinpath("report.schema.json").read_text())
