"""Textual lock IR: program model, parser, renderer and structural validation.

A ``.lir`` file is a sequence of functions.  Every simple statement carries a
mandatory ``@LINE`` tag naming the source line it stands for::

    fn main() {
      q1 = new mutex @2
      q2 = arcclone q1 @3
      g1 = lock q1 @4
      = call push(move q2) @5
    }

``;`` starts a comment that runs to the end of the line.  Commas inside
parameter and argument lists are optional.  A function header and its closing
brace may carry their own ``@LINE`` tag; otherwise the physical line of the
``fn`` keyword and of the ``}`` is used.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Union

CLASSES = ("mutex", "rwlock", "condvar", "arc", "data")
MODES = ("ref", "move")
LOCK_KINDS = {"lock": "MX", "read": "R", "write": "W"}

KEYWORDS = frozenset(
    {
        "fn", "if", "else", "loop", "new", "move", "ref", "clone", "arcclone",
        "call", "lock", "read", "write", "release", "spawn", "join", "wait",
        "notify",
    }
)


class ParseError(Exception):
    def __init__(self, message: str, line: int = 0, column: int = 0) -> None:
        self.message = message
        self.line = line
        self.column = column
        where = f"{line}:{column}: " if line else ""
        super().__init__(f"{where}{message}")


# ---------------------------------------------------------------------------
# Program model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Arg:
    place: str
    mode: str = "ref"


@dataclass(frozen=True)
class Param:
    place: str
    mode: str = "ref"
    cls: Optional[str] = None


@dataclass(frozen=True)
class New:
    dst: str
    cls: str
    line: int


@dataclass(frozen=True)
class AddrOf:
    dst: str
    src: str
    line: int


@dataclass(frozen=True)
class Copy:
    dst: str
    src: str
    line: int
    reborrow: bool = False  # written as `a = &*b`


@dataclass(frozen=True)
class Move:
    dst: str
    src: str
    line: int


@dataclass(frozen=True)
class Load:
    dst: str
    src: str
    line: int


@dataclass(frozen=True)
class Store:
    dst: str
    src: str
    line: int


@dataclass(frozen=True)
class FieldRead:
    dst: str
    src: str
    field: str
    line: int


@dataclass(frozen=True)
class Clone:
    dst: str
    src: str
    line: int


@dataclass(frozen=True)
class ArcClone:
    dst: str
    src: str
    line: int


@dataclass(frozen=True)
class Call:
    dst: Optional[str]
    callee: str
    args: tuple[Arg, ...]
    line: int


@dataclass(frozen=True)
class Acquire:
    guard: str
    kind: str  # MX, R or W
    lock: str
    line: int


@dataclass(frozen=True)
class Release:
    guard: str
    line: int


@dataclass(frozen=True)
class Spawn:
    thread: str
    callee: str
    args: tuple[Arg, ...]
    line: int


@dataclass(frozen=True)
class Join:
    thread: str
    line: int


@dataclass(frozen=True)
class Wait:
    condvar: str
    guard: str
    line: int


@dataclass(frozen=True)
class Notify:
    condvar: str
    line: int


@dataclass(frozen=True)
class Branch:
    then: tuple
    orelse: tuple


@dataclass(frozen=True)
class Loop:
    body: tuple


Statement = Union[
    New, AddrOf, Copy, Move, Load, Store, FieldRead, Clone, ArcClone, Call,
    Acquire, Release, Spawn, Join, Wait, Notify, Branch, Loop,
]
Block = tuple  # tuple[Statement, ...]


@dataclass(frozen=True)
class Function:
    name: str
    params: tuple[Param, ...]
    returns: Optional[str]
    body: Block
    line: int = 0
    end_line: int = 0


@dataclass
class Program:
    functions: dict[str, Function]
    entry: str
    source: Optional[str] = field(default=None, compare=False, repr=False)

    @property
    def entry_function(self) -> Function:
        return self.functions[self.entry]

    def function(self, name: str) -> Function:
        return self.functions[name]


def iter_statements(block: Block) -> Iterator[Statement]:
    """Yield every statement of ``block`` depth first, compound ones included."""
    for stmt in block:
        yield stmt
        if isinstance(stmt, Branch):
            yield from iter_statements(stmt.then)
            yield from iter_statements(stmt.orelse)
        elif isinstance(stmt, Loop):
            yield from iter_statements(stmt.body)


def statement_lines(program: Program) -> set[int]:
    lines: set[int] = set()
    for fn in program.functions.values():
        lines.update(s.line for s in iter_statements(fn.body) if hasattr(s, "line"))
    return lines


# ---------------------------------------------------------------------------
# Tokenizer and parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<skip>[ \t\r]+|;[^\n]*)
  | (?P<nl>\n)
  | (?P<arrow>->)
  | (?P<int>\d+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[(){}=&*.@:,])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # name, int, punct, arrow, eof
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind != "skip":
            tokens.append(_Token(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    tokens.append(_Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str) -> None:
        self.tokens = _tokenize(text)
        self.pos = 0
        self.threads: set[str] = set()

    # token helpers -------------------------------------------------------

    @property
    def tok(self) -> _Token:
        return self.tokens[self.pos]

    def peek(self, offset: int = 1) -> _Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def error(self, message: str, tok: Optional[_Token] = None) -> ParseError:
        tok = tok or self.tok
        return ParseError(message, tok.line, tok.col)

    def advance(self) -> _Token:
        tok = self.tok
        self.pos += 1
        return tok

    def at(self, text: str) -> bool:
        return self.tok.kind in ("punct", "arrow", "name") and self.tok.text == text

    def expect(self, text: str) -> _Token:
        if not self.at(text):
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        return self.advance()

    def name(self, what: str = "name") -> str:
        tok = self.tok
        if tok.kind != "name":
            raise self.error(f"expected {what}, found {tok.text or 'end of input'!r}")
        if tok.text in KEYWORDS:
            raise self.error(f"keyword {tok.text!r} cannot be used as a {what}")
        self.advance()
        return tok.text

    def integer(self) -> int:
        tok = self.tok
        if tok.kind != "int":
            raise self.error(f"expected line number, found {tok.text or 'end of input'!r}")
        self.advance()
        return int(tok.text)

    def line_tag(self) -> int:
        self.expect("@")
        return self.integer()

    def skip_commas(self) -> None:
        while self.at(","):
            self.advance()

    # grammar -------------------------------------------------------------

    def program(self) -> Program:
        functions: dict[str, Function] = {}
        while self.tok.kind != "eof":
            start = self.tok
            fn = self.function()
            if fn.name in functions:
                raise self.error(f"duplicate function {fn.name!r}", start)
            functions[fn.name] = fn
        if not functions:
            raise ParseError("no entry function", self.tok.line, self.tok.col)
        entry = "main" if "main" in functions else next(iter(functions))
        return Program(functions, entry)

    def function(self) -> Function:
        header = self.expect("fn")
        name = self.name("function name")
        params: list[Param] = []
        if self.at("("):
            self.advance()
            self.skip_commas()
            while not self.at(")"):
                params.append(self.param())
                self.skip_commas()
            self.expect(")")
        returns = None
        if self.at("->"):
            self.advance()
            returns = self.name("return place")
        line = self.line_tag() if self.at("@") else header.line
        self.expect("{")
        body = self.statements()
        close = self.expect("}")
        end_line = self.line_tag() if self.at("@") else close.line
        return Function(name, tuple(params), returns, body, line, end_line)

    def param(self) -> Param:
        if not (self.at("ref") or self.at("move")):
            raise self.error("expected 'ref' or 'move' before parameter")
        mode = self.advance().text
        place = self.name("parameter")
        cls = None
        if self.at(":"):
            self.advance()
            cls = self.cls()
        return Param(place, mode, cls)

    def cls(self) -> str:
        tok = self.tok
        if tok.kind != "name" or tok.text not in CLASSES:
            raise self.error(f"expected one of {', '.join(CLASSES)}, found {tok.text!r}")
        self.advance()
        return tok.text

    def call_args(self) -> tuple[Arg, ...]:
        self.expect("(")
        args: list[Arg] = []
        self.skip_commas()
        while not self.at(")"):
            mode = "ref"
            if self.at("ref") or self.at("move"):
                mode = self.advance().text
            args.append(Arg(self.name("argument"), mode))
            self.skip_commas()
        self.expect(")")
        return tuple(args)

    def statements(self) -> Block:
        stmts: list[Statement] = []
        while not self.at("}"):
            if self.tok.kind == "eof":
                raise self.error("unterminated block, expected '}'")
            stmt = self.statement()
            if stmt is not None:
                stmts.append(stmt)
        return tuple(stmts)

    def block(self) -> Block:
        self.expect("{")
        body = self.statements()
        self.expect("}")
        return body

    def statement(self) -> Optional[Statement]:
        tok = self.tok
        if tok.kind == "name" and self.peek().text == ":" and tok.text not in KEYWORDS:
            # basic-block label, e.g. `b0:`
            self.advance()
            self.advance()
            return None
        if self.at("if"):
            self.advance()
            then = self.block()
            orelse: Block = ()
            if self.at("else"):
                self.advance()
                orelse = self.block()
            return Branch(then, orelse)
        if self.at("loop"):
            self.advance()
            return Loop(self.block())
        if self.at("release"):
            self.advance()
            guard = self.name("guard")
            return Release(guard, self.line_tag())
        if self.at("spawn"):
            self.advance()
            thread_tok = self.tok
            thread = self.name("thread id")
            if thread in self.threads:
                raise self.error(f"duplicate thread id {thread!r}", thread_tok)
            self.threads.add(thread)
            callee = self.name("function name")
            args = self.call_args()
            return Spawn(thread, callee, args, self.line_tag())
        if self.at("join"):
            self.advance()
            thread = self.name("thread id")
            return Join(thread, self.line_tag())
        if self.at("wait"):
            self.advance()
            condvar = self.name("condvar")
            guard = self.name("guard")
            return Wait(condvar, guard, self.line_tag())
        if self.at("notify"):
            self.advance()
            condvar = self.name("condvar")
            return Notify(condvar, self.line_tag())
        if self.at("*"):
            self.advance()
            dst = self.name()
            self.expect("=")
            src = self.name()
            return Store(dst, src, self.line_tag())
        if self.at("="):
            self.advance()
            self.expect("call")
            callee = self.name("function name")
            args = self.call_args()
            return Call(None, callee, args, self.line_tag())
        dst = self.name("place")
        self.expect("=")
        return self.assignment(dst)

    def assignment(self, dst: str) -> Statement:
        if self.at("new"):
            self.advance()
            cls = self.cls()
            return New(dst, cls, self.line_tag())
        if self.at("&"):
            self.advance()
            if self.at("*"):
                self.advance()
                src = self.name()
                return Copy(dst, src, self.line_tag(), reborrow=True)
            src = self.name()
            return AddrOf(dst, src, self.line_tag())
        if self.at("*"):
            self.advance()
            src = self.name()
            return Load(dst, src, self.line_tag())
        for word, ctor in (("move", Move), ("clone", Clone), ("arcclone", ArcClone)):
            if self.at(word):
                self.advance()
                src = self.name()
                return ctor(dst, src, self.line_tag())
        if self.at("call"):
            self.advance()
            callee = self.name("function name")
            args = self.call_args()
            return Call(dst, callee, args, self.line_tag())
        for word, kind in LOCK_KINDS.items():
            if self.at(word):
                self.advance()
                lock = self.name("lock")
                return Acquire(dst, kind, lock, self.line_tag())
        src = self.name()
        if self.at("."):
            self.advance()
            fld = self.name("field name")
            return FieldRead(dst, src, fld, self.line_tag())
        return Copy(dst, src, self.line_tag())


def parse_program(text: str) -> Program:
    """Parse lock IR source into a :class:`Program`.

    Raises :class:`ParseError` on malformed input, duplicate function names and
    duplicate thread ids.  The entry function is ``main`` when present, else the
    first function in the file.
    """
    program = _Parser(text).program()
    program.source = text
    return program


def load_program(path: Union[str, Path]) -> Program:
    return parse_program(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Renderer
# ---------------------------------------------------------------------------


def _args(args: tuple[Arg, ...]) -> str:
    return ", ".join(f"{a.mode} {a.place}" for a in args)


def render_statement(stmt: Statement) -> str:
    """Render a simple statement (without its line tag)."""
    if isinstance(stmt, New):
        return f"{stmt.dst} = new {stmt.cls}"
    if isinstance(stmt, AddrOf):
        return f"{stmt.dst} = &{stmt.src}"
    if isinstance(stmt, Copy):
        return f"{stmt.dst} = &*{stmt.src}" if stmt.reborrow else f"{stmt.dst} = {stmt.src}"
    if isinstance(stmt, Move):
        return f"{stmt.dst} = move {stmt.src}"
    if isinstance(stmt, Load):
        return f"{stmt.dst} = *{stmt.src}"
    if isinstance(stmt, Store):
        return f"*{stmt.dst} = {stmt.src}"
    if isinstance(stmt, FieldRead):
        return f"{stmt.dst} = {stmt.src}.{stmt.field}"
    if isinstance(stmt, Clone):
        return f"{stmt.dst} = clone {stmt.src}"
    if isinstance(stmt, ArcClone):
        return f"{stmt.dst} = arcclone {stmt.src}"
    if isinstance(stmt, Call):
        lhs = stmt.dst or ""
        return f"{lhs} = call {stmt.callee}({_args(stmt.args)})".lstrip()
    if isinstance(stmt, Acquire):
        word = {v: k for k, v in LOCK_KINDS.items()}[stmt.kind]
        return f"{stmt.guard} = {word} {stmt.lock}"
    if isinstance(stmt, Release):
        return f"release {stmt.guard}"
    if isinstance(stmt, Spawn):
        return f"spawn {stmt.thread} {stmt.callee}({_args(stmt.args)})"
    if isinstance(stmt, Join):
        return f"join {stmt.thread}"
    if isinstance(stmt, Wait):
        return f"wait {stmt.condvar} {stmt.guard}"
    if isinstance(stmt, Notify):
        return f"notify {stmt.condvar}"
    raise TypeError(f"not a simple statement: {stmt!r}")


def _render_block(block: Block, indent: int, out: list[str]) -> None:
    pad = "  " * indent
    for stmt in block:
        if isinstance(stmt, Branch):
            out.append(f"{pad}if {{")
            _render_block(stmt.then, indent + 1, out)
            out.append(f"{pad}}} else {{")
            _render_block(stmt.orelse, indent + 1, out)
            out.append(f"{pad}}}")
        elif isinstance(stmt, Loop):
            out.append(f"{pad}loop {{")
            _render_block(stmt.body, indent + 1, out)
            out.append(f"{pad}}}")
        else:
            out.append(f"{pad}{render_statement(stmt)} @{stmt.line}")


def render(program: Program) -> str:
    """Render ``program`` back to lock IR text; the output reparses to an equal Program."""
    out: list[str] = []
    names = [program.entry] + [n for n in program.functions if n != program.entry]
    for name in names:
        fn = program.functions[name]
        params = ", ".join(
            f"{p.mode} {p.place}" + (f": {p.cls}" if p.cls else "") for p in fn.params
        )
        ret = f" -> {fn.returns}" if fn.returns else ""
        out.append(f"fn {fn.name}({params}){ret} @{fn.line} {{")
        _render_block(fn.body, 1, out)
        out.append(f"}} @{fn.end_line}")
        out.append("")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class ValidationError:
    function: str
    line: int
    rule: str
    message: str

    def __str__(self) -> str:
        return f"{self.function}:{self.line}: {self.rule}: {self.message}"


class _Validator:
    def __init__(self, program: Program) -> None:
        self.program = program
        self.errors: list[ValidationError] = []
        self.spawned: set[str] = {
            s.thread
            for fn in program.functions.values()
            for s in iter_statements(fn.body)
            if isinstance(s, Spawn)
        }

    def report(self, fn: Function, line: int, rule: str, message: str) -> None:
        self.errors.append(ValidationError(fn.name, line, rule, message))

    def run(self) -> list[ValidationError]:
        if self.program.entry not in self.program.functions:
            self.errors.append(
                ValidationError(self.program.entry, 0, "no entry function",
                                f"entry {self.program.entry!r} is not defined")
            )
        for fn in self.program.functions.values():
            self.function(fn)
        return self.errors

    def function(self, fn: Function) -> None:
        seen: set[str] = set()
        for p in fn.params:
            if p.place in seen:
                self.report(fn, fn.line, "duplicate parameter", f"parameter {p.place!r} repeated")
            seen.add(p.place)
        if fn.returns is not None:
            assigned = any(
                getattr(s, "dst", None) == fn.returns or getattr(s, "guard", None) == fn.returns
                for s in iter_statements(fn.body)
                if not isinstance(s, (Store, Release, Wait))
            )
            if not assigned:
                self.report(fn, fn.end_line, "unassigned return",
                            f"return place {fn.returns!r} is never assigned")
        self.block(fn, fn.body, set())

    def check_call(self, fn: Function, callee: str, args: tuple[Arg, ...], line: int) -> None:
        target = self.program.functions.get(callee)
        if target is None:
            self.report(fn, line, "unresolved callee", f"function {callee!r} is not defined")
        elif len(target.params) != len(args):
            self.report(fn, line, "arity mismatch",
                        f"{callee!r} takes {len(target.params)} arguments, {len(args)} given")

    def block(self, fn: Function, block: Block, live: set[str]) -> set[str]:
        for stmt in block:
            if isinstance(stmt, Branch):
                live = self.block(fn, stmt.then, set(live)) | self.block(fn, stmt.orelse, set(live))
                continue
            if isinstance(stmt, Loop):
                live = live | self.block(fn, stmt.body, set(live))
                continue
            if stmt.line <= 0:
                self.report(fn, stmt.line, "bad line tag", "line tags must be positive")
            if isinstance(stmt, Acquire):
                if stmt.guard in live:
                    self.report(fn, stmt.line, "guard already live",
                                f"guard {stmt.guard!r} is still held")
                live.add(stmt.guard)
            elif isinstance(stmt, Release):
                if stmt.guard not in live:
                    self.report(fn, stmt.line, "unknown guard",
                                f"release of {stmt.guard!r}, which is not a live guard")
                live.discard(stmt.guard)
            elif isinstance(stmt, Wait):
                if stmt.guard not in live:
                    self.report(fn, stmt.line, "wait without guard",
                                f"wait on {stmt.guard!r}, which is not a live guard")
            elif isinstance(stmt, Call):
                self.check_call(fn, stmt.callee, stmt.args, stmt.line)
            elif isinstance(stmt, Spawn):
                self.check_call(fn, stmt.callee, stmt.args, stmt.line)
            elif isinstance(stmt, Join):
                if stmt.thread not in self.spawned:
                    self.report(fn, stmt.line, "join without spawn",
                                f"thread {stmt.thread!r} is never spawned")
        return live


def validate(program: Program) -> list[ValidationError]:
    """Return the structural errors of ``program``; empty when it is well formed."""
    return _Validator(program).run()
