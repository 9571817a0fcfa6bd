"""Parser and program representation for the concurrent assembly language.

A program declares named global variables with initial values, followed by
one or more threads of labelled instructions, optionally followed by an
``exists (...)`` clause constraining final register and memory values.

Instructions are register assignments, conditional branches, memory loads
``r := [a]``, memory stores ``[a0] := a1``, and the fences ``sync``,
``lwsync`` and ``isync``.  A bare global variable name in memory-operand
position is sugar for ``[&x]``.  Arithmetic expressions range over integer
literals, registers and ``&x`` address literals only; values are signed
64-bit with wrapping arithmetic.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field

__all__ = [
    "Expr",
    "Lit",
    "Reg",
    "AddrOf",
    "BinOp",
    "Instruction",
    "RegAssign",
    "Branch",
    "Load",
    "Store",
    "Fence",
    "Condition",
    "RegEq",
    "MemEq",
    "CondAnd",
    "CondOr",
    "ThreadCode",
    "Program",
    "ParseError",
    "DeadCodeWarning",
    "parse_program",
    "pretty_print",
    "pretty_expr",
    "pretty_instr",
    "next_label",
    "address_of_var",
    "apply_binop",
    "wrap64",
]

_U64 = 1 << 64
_I64_MIN = -(1 << 63)


def wrap64(v: int) -> int:
    """Wrap an integer into signed 64-bit two's-complement range."""
    return (v - _I64_MIN) % _U64 + _I64_MIN


_BINOPS = {
    "+": lambda a, b: wrap64(a + b),
    "-": lambda a, b: wrap64(a - b),
    "*": lambda a, b: wrap64(a * b),
    "=": lambda a, b: int(a == b),
    "!=": lambda a, b: int(a != b),
    "<": lambda a, b: int(a < b),
    "<=": lambda a, b: int(a <= b),
}


def apply_binop(op: str, lhs: int, rhs: int) -> int:
    return _BINOPS[op](lhs, rhs)


# --- expressions -----------------------------------------------------------


class Expr:
    pass


@dataclass(frozen=True)
class Lit(Expr):
    value: int


@dataclass(frozen=True)
class Reg(Expr):
    name: str


@dataclass(frozen=True)
class AddrOf(Expr):
    """Address literal ``&x`` of a declared global variable."""

    var: str
    address: int


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    lhs: Expr
    rhs: Expr


# --- instructions ----------------------------------------------------------


class Instruction:
    pass


@dataclass(frozen=True)
class RegAssign(Instruction):
    reg: str
    expr: Expr


@dataclass(frozen=True)
class Branch(Instruction):
    cond: Expr
    target: str


@dataclass(frozen=True)
class Load(Instruction):
    reg: str
    addr: Expr


@dataclass(frozen=True)
class Store(Instruction):
    addr: Expr
    value: Expr


@dataclass(frozen=True)
class Fence(Instruction):
    kind: str  # "sync" | "lwsync" | "isync"


# --- postcondition ---------------------------------------------------------


class Condition:
    pass


@dataclass(frozen=True)
class RegEq(Condition):
    thread: str
    reg: str
    value: int


@dataclass(frozen=True)
class MemEq(Condition):
    var: str
    value: int


@dataclass(frozen=True)
class CondAnd(Condition):
    parts: tuple[Condition, ...]


@dataclass(frozen=True)
class CondOr(Condition):
    parts: tuple[Condition, ...]


# --- program ---------------------------------------------------------------


@dataclass(frozen=True)
class ThreadCode:
    """One thread: a name and its ordered, labelled instruction list."""

    name: str
    instrs: tuple[tuple[str, Instruction], ...]


@dataclass(frozen=True)
class Program:
    """A parsed program.

    ``inits`` lists globals as (name, address, initial value) with addresses
    assigned densely from 0 in declaration order.  Labels are globally
    unique; every goto target exists within its own thread.
    """

    inits: tuple[tuple[str, int, int], ...]
    threads: tuple[ThreadCode, ...]
    postcondition: Condition | None = None

    # derived lookup tables, filled in __post_init__
    _labels: dict = field(default_factory=dict, compare=False, repr=False)
    _var_addr: dict = field(default_factory=dict, compare=False, repr=False)
    _thread_index: dict = field(default_factory=dict, compare=False, repr=False)
    _init_instrs: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self) -> None:
        labels: dict[str, tuple[int, int, Instruction]] = {}
        for tid, thread in enumerate(self.threads):
            for pos, (label, instr) in enumerate(thread.instrs):
                labels[label] = (tid, pos, instr)
        object.__setattr__(self, "_labels", labels)
        object.__setattr__(self, "_var_addr", {n: a for n, a, _ in self.inits})
        object.__setattr__(
            self, "_thread_index", {t.name: i for i, t in enumerate(self.threads)}
        )
        object.__setattr__(
            self,
            "_init_instrs",
            tuple(Store(AddrOf(n, a), Lit(v)) for n, a, v in self.inits),
        )

    @property
    def n_threads(self) -> int:
        return len(self.threads)

    @property
    def n_vars(self) -> int:
        return len(self.inits)

    def instruction(self, label: str) -> Instruction:
        try:
            return self._labels[label][2]
        except KeyError:
            raise KeyError(f"unknown label {label!r}") from None

    def location(self, label: str) -> tuple[int, int]:
        """(thread id, position) of a label."""
        tid, pos, _ = self._labels[label]
        return tid, pos

    def thread_of(self, label: str) -> int:
        return self._labels[label][0]

    def init_instruction(self, address: int) -> Store:
        return self._init_instrs[address]

    def first_label(self, tid: int) -> str:
        return self.threads[tid].instrs[0][0]

    def var_name(self, address: int) -> str:
        return self.inits[address][0]

    def thread_registers(self, tid: int) -> frozenset[str]:
        regs: set[str] = set()
        for _, instr in self.threads[tid].instrs:
            if isinstance(instr, (RegAssign, Load)):
                regs.add(instr.reg)
            for e in _instr_exprs(instr):
                regs.update(_expr_registers(e))
        return frozenset(regs)


def _instr_exprs(instr: Instruction) -> tuple[Expr, ...]:
    if isinstance(instr, RegAssign):
        return (instr.expr,)
    if isinstance(instr, Branch):
        return (instr.cond,)
    if isinstance(instr, Load):
        return (instr.addr,)
    if isinstance(instr, Store):
        return (instr.addr, instr.value)
    return ()


def _expr_registers(e: Expr) -> set[str]:
    if isinstance(e, Reg):
        return {e.name}
    if isinstance(e, BinOp):
        return _expr_registers(e.lhs) | _expr_registers(e.rhs)
    return set()


def next_label(program: Program, label: str) -> str | None:
    """The textually following label in the same thread, or None if last."""
    tid, pos = program.location(label)
    instrs = program.threads[tid].instrs
    if pos + 1 < len(instrs):
        return instrs[pos + 1][0]
    return None


def address_of_var(program: Program, name: str) -> int:
    try:
        return program._var_addr[name]
    except KeyError:
        raise KeyError(f"unknown variable {name!r}") from None


# --- parsing ---------------------------------------------------------------


class ParseError(Exception):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col


class DeadCodeWarning(UserWarning):
    pass


_KEYWORDS = {"thread", "if", "goto", "sync", "lwsync", "isync", "exists"}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|//[^\n]*)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>:=|!=|<=|/\\|\\/|[-+*=<:;\[\]()&,])
    """,
    re.VERBOSE,
)


@dataclass
class _Token:
    kind: str  # "int" | "ident" | "op" | "eof"
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    line, col, pos = 1, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        tok = m.group()
        if kind != "ws":
            tokens.append(_Token(kind, tok, line, col))
        newlines = tok.count("\n")
        if newlines:
            line += newlines
            col = len(tok) - tok.rfind("\n")
        else:
            col += len(tok)
        pos = m.end()
    tokens.append(_Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self, ahead: int = 0) -> _Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def error(self, message: str, tok: _Token | None = None) -> ParseError:
        tok = tok or self.peek()
        return ParseError(message, tok.line, tok.col)

    def expect(self, text: str) -> _Token:
        tok = self.next()
        if tok.text != text:
            raise self.error(f"expected {text!r}, found {tok.text or 'end of input'!r}", tok)
        return tok

    def expect_ident(self, what: str) -> _Token:
        tok = self.next()
        if tok.kind != "ident" or tok.text in _KEYWORDS:
            raise self.error(f"expected {what}, found {tok.text or 'end of input'!r}", tok)
        return tok

    # program := varinit* thrd+ [exists]
    def parse(self) -> Program:
        inits: list[tuple[str, int, int]] = []
        declared: dict[str, int] = {}
        while self.peek().kind == "ident" and self.peek().text != "thread":
            name_tok = self.expect_ident("variable name")
            if name_tok.text in declared:
                raise self.error(f"duplicate variable {name_tok.text!r}", name_tok)
            self.expect("=")
            value = self._parse_int()
            declared[name_tok.text] = len(inits)
            inits.append((name_tok.text, len(inits), value))
        self.declared = declared

        threads: list[ThreadCode] = []
        while self.peek().text == "thread":
            threads.append(self._parse_thread())
        if not threads:
            raise self.error("expected at least one 'thread' block")

        postcondition = None
        if self.peek().text == "exists":
            postcondition = self._parse_exists()
        tok = self.peek()
        if tok.kind != "eof":
            raise self.error(f"unexpected trailing input {tok.text!r}", tok)

        program = Program(tuple(inits), tuple(threads), postcondition)
        self._validate(program)
        return program

    def _parse_int(self) -> int:
        neg = False
        if self.peek().text == "-":
            self.next()
            neg = True
        tok = self.next()
        if tok.kind != "int":
            raise self.error("expected integer literal", tok)
        return wrap64(-int(tok.text) if neg else int(tok.text))

    def _parse_thread(self) -> ThreadCode:
        self.expect("thread")
        name = self.expect_ident("thread name").text
        self.expect(":")
        instrs: list[tuple[str, Instruction]] = []
        while True:
            tok = self.peek()
            # a label is an identifier followed by ':' but not ':='
            if (
                tok.kind == "ident"
                and tok.text not in _KEYWORDS
                and self.peek(1).text == ":"
            ):
                label = self.next().text
                self.expect(":")
                instr = self._parse_instr()
                self.expect(";")
                instrs.append((label, instr))
            elif tok.text in ("sync", "lwsync", "isync", "if", "["):
                raise self.error("instruction is missing its label", tok)
            else:
                break
        if not instrs:
            raise self.error(f"thread {name!r} has no instructions")
        return ThreadCode(name, tuple(instrs))

    def _parse_instr(self) -> Instruction:
        tok = self.peek()
        if tok.text in ("sync", "lwsync", "isync"):
            self.next()
            return Fence(tok.text)
        if tok.text == "if":
            self.next()
            cond = self._parse_expr()
            self.expect("goto")
            target = self.expect_ident("goto target label").text
            return Branch(cond, target)
        if tok.text == "[":
            self.next()
            addr = self._parse_expr()
            self.expect("]")
            self.expect(":=")
            value = self._parse_expr()
            return Store(addr, value)
        dest = self.expect_ident("instruction")
        self.expect(":=")
        if dest.text in self.declared:
            # store sugar: 'x := e' means '[&x] := e'
            value = self._parse_expr()
            return Store(AddrOf(dest.text, self.declared[dest.text]), value)
        if self.peek().text == "[":
            self.next()
            addr = self._parse_expr()
            self.expect("]")
            return Load(dest.text, addr)
        rhs_tok = self.peek()
        if rhs_tok.kind == "ident" and rhs_tok.text in self.declared and self.peek(1).text == ";":
            # load sugar: 'r := x' means 'r := [&x]'
            self.next()
            return Load(dest.text, AddrOf(rhs_tok.text, self.declared[rhs_tok.text]))
        return RegAssign(dest.text, self._parse_expr())

    # expr := add (cmpop add)? ; add := mul (('+'|'-') mul)* ; mul := atom ('*' atom)*
    def _parse_expr(self) -> Expr:
        lhs = self._parse_add()
        tok = self.peek()
        if tok.text in ("=", "!=", "<", "<="):
            self.next()
            rhs = self._parse_add()
            return BinOp(tok.text, lhs, rhs)
        return lhs

    def _parse_add(self) -> Expr:
        e = self._parse_mul()
        while self.peek().text in ("+", "-"):
            op = self.next().text
            e = BinOp(op, e, self._parse_mul())
        return e

    def _parse_mul(self) -> Expr:
        e = self._parse_atom()
        while self.peek().text == "*":
            self.next()
            e = BinOp("*", e, self._parse_atom())
        return e

    def _parse_atom(self) -> Expr:
        tok = self.next()
        if tok.kind == "int":
            return Lit(int(tok.text))
        if tok.text == "-":
            return BinOp("-", Lit(0), self._parse_atom())
        if tok.text == "&":
            var = self.expect_ident("variable name")
            if var.text not in self.declared:
                raise self.error(f"unknown variable {var.text!r}", var)
            return AddrOf(var.text, self.declared[var.text])
        if tok.text == "(":
            e = self._parse_expr()
            self.expect(")")
            return e
        if tok.kind == "ident" and tok.text not in _KEYWORDS:
            if tok.text in self.declared:
                raise self.error(
                    f"global variable {tok.text!r} cannot appear in an arithmetic "
                    "expression; memory is read with [...]",
                    tok,
                )
            return Reg(tok.text)
        raise self.error(f"expected expression, found {tok.text or 'end of input'!r}", tok)

    # exists := 'exists' '(' disj ')' ; disj := conj ('\/' conj)* ;
    # conj := atom ('/\' atom)* ; atom := '(' disj ')' | t:r=n | x=n
    def _parse_exists(self) -> Condition:
        self.expect("exists")
        self.expect("(")
        cond = self._parse_cond_disj()
        self.expect(")")
        return cond

    def _parse_cond_disj(self) -> Condition:
        parts = [self._parse_cond_conj()]
        while self.peek().text == "\\/":
            self.next()
            parts.append(self._parse_cond_conj())
        return parts[0] if len(parts) == 1 else CondOr(tuple(parts))

    def _parse_cond_conj(self) -> Condition:
        parts = [self._parse_cond_atom()]
        while self.peek().text == "/\\":
            self.next()
            parts.append(self._parse_cond_atom())
        return parts[0] if len(parts) == 1 else CondAnd(tuple(parts))

    def _parse_cond_atom(self) -> Condition:
        if self.peek().text == "(":
            self.next()
            cond = self._parse_cond_disj()
            self.expect(")")
            return cond
        name = self.expect_ident("condition subject")
        if self.peek().text == ":":
            self.next()
            reg = self.expect_ident("register name")
            self.expect("=")
            return RegEq(name.text, reg.text, self._parse_int())
        self.expect("=")
        if name.text not in self.declared:
            raise self.error(f"undeclared variable {name.text!r} in postcondition", name)
        return MemEq(name.text, self._parse_int())

    def _validate(self, program: Program) -> None:
        seen: set[str] = set()
        for thread in program.threads:
            for label, instr in thread.instrs:
                if label in seen:
                    raise self.error(f"duplicate label {label!r}")
                seen.add(label)
        for tid, thread in enumerate(program.threads):
            own = {label for label, _ in thread.instrs}
            for label, instr in thread.instrs:
                if isinstance(instr, Branch) and instr.target not in own:
                    raise self.error(
                        f"goto target {instr.target!r} not found in thread {thread.name!r}"
                    )
        if program.postcondition is not None:
            self._validate_condition(program, program.postcondition)
        _warn_dead_code(program)

    def _validate_condition(self, program: Program, cond: Condition) -> None:
        if isinstance(cond, (CondAnd, CondOr)):
            for part in cond.parts:
                self._validate_condition(program, part)
        elif isinstance(cond, RegEq):
            if cond.thread not in program._thread_index:
                raise self.error(f"unknown thread {cond.thread!r} in postcondition")
            tid = program._thread_index[cond.thread]
            if cond.reg not in program.thread_registers(tid):
                raise self.error(
                    f"register {cond.reg!r} never used by thread {cond.thread!r}"
                )


def _warn_dead_code(program: Program) -> None:
    for tid, thread in enumerate(program.threads):
        labels = [label for label, _ in thread.instrs]
        index = {label: i for i, label in enumerate(labels)}
        reachable = {0}
        work = [0]
        while work:
            i = work.pop()
            _, instr = thread.instrs[i]
            succs = []
            if i + 1 < len(labels):
                succs.append(i + 1)
            if isinstance(instr, Branch):
                succs.append(index[instr.target])
            for s in succs:
                if s not in reachable:
                    reachable.add(s)
                    work.append(s)
        dead = [labels[i] for i in range(len(labels)) if i not in reachable]
        if dead:
            warnings.warn(
                f"unreachable instructions in thread {thread.name!r}: {', '.join(dead)}",
                DeadCodeWarning,
                stacklevel=3,
            )


def parse_program(text: str) -> Program:
    """Parse a litmus-style program; raises ParseError on malformed input."""
    return _Parser(text).parse()


# --- pretty printing -------------------------------------------------------

_PRECEDENCE = {"=": 0, "!=": 0, "<": 0, "<=": 0, "+": 1, "-": 1, "*": 2}


def pretty_expr(e: Expr, parent_prec: int = -1) -> str:
    if isinstance(e, Lit):
        return str(e.value)
    if isinstance(e, Reg):
        return e.name
    if isinstance(e, AddrOf):
        return f"&{e.var}"
    if isinstance(e, BinOp):
        prec = _PRECEDENCE[e.op]
        # comparisons are non-associative: parenthesize comparison operands
        lhs_prec = prec if prec > 0 else prec + 1
        text = f"{pretty_expr(e.lhs, lhs_prec)} {e.op} {pretty_expr(e.rhs, prec + 1)}"
        return f"({text})" if prec < parent_prec else text
    raise TypeError(f"not an expression: {e!r}")


def pretty_instr(instr: Instruction) -> str:
    if isinstance(instr, RegAssign):
        return f"{instr.reg} := {pretty_expr(instr.expr)}"
    if isinstance(instr, Branch):
        return f"if {pretty_expr(instr.cond)} goto {instr.target}"
    if isinstance(instr, Load):
        return f"{instr.reg} := [{pretty_expr(instr.addr)}]"
    if isinstance(instr, Store):
        return f"[{pretty_expr(instr.addr)}] := {pretty_expr(instr.value)}"
    if isinstance(instr, Fence):
        return instr.kind
    raise TypeError(f"not an instruction: {instr!r}")


def _pretty_condition(cond: Condition, *, top: bool = True) -> str:
    if isinstance(cond, RegEq):
        return f"{cond.thread}:{cond.reg} = {cond.value}"
    if isinstance(cond, MemEq):
        return f"{cond.var} = {cond.value}"
    if isinstance(cond, CondAnd):
        text = " /\\ ".join(_pretty_condition(p, top=False) for p in cond.parts)
    elif isinstance(cond, CondOr):
        text = " \\/ ".join(_pretty_condition(p, top=False) for p in cond.parts)
    else:
        raise TypeError(f"not a condition: {cond!r}")
    return text if top else f"({text})"


def pretty_print(program: Program) -> str:
    """Render a program back to source text; parse(pretty_print(p)) == p."""
    out = [f"{name} = {value}" for name, _, value in program.inits]
    for thread in program.threads:
        out.append("")
        out.append(f"thread {thread.name}:")
        for label, instr in thread.instrs:
            out.append(f"{label}: {pretty_instr(instr)};")
    if program.postcondition is not None:
        out.append("")
        out.append(f"exists ({_pretty_condition(program.postcondition)})")
    out.append("")
    return "\n".join(out)
