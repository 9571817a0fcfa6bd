"""Events, traces and the dependency relations derived from program states.

An event identifies one executed instruction instance as (thread id,
occurrence index, label).  Initializer events carry the pseudo-label
``init(x)`` and behave as stores that are first in the coherence order of
their address.

A trace (events, po, co, rf) abstracts one complete or partial execution.
This module also implements expression evaluation at events (``value_of``,
``addr_of``) respecting data flow through registers and read-from edges,
and the seven dependency relations consumed by the commit-before orders and
the axiomatic checker.

Evaluation is defined over any "state view" object exposing:

* ``program`` -- the Program,
* ``fetched`` -- per-thread tuples of events in program (fetch) order,
* ``committed`` -- the set of committed events,
* ``rf`` -- mapping from committed load events to their source stores.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass
from typing import Iterable, NamedTuple

from .lang import (
    AddrOf,
    BinOp,
    Branch,
    Expr,
    Fence,
    Instruction,
    Lit,
    Load,
    Program,
    Reg,
    RegAssign,
    Store,
    apply_binop,
    pretty_instr,
)

__all__ = [
    "Kind",
    "Event",
    "ParamEvent",
    "STAR",
    "Trace",
    "DepBundle",
    "TraceSet",
    "kind_of_instruction",
    "make_event",
    "init_events",
    "instruction_of",
    "value_of",
    "addr_of",
    "adeps_of",
    "dep_bundle",
    "is_complete_trace",
    "event_token",
    "format_param",
    "format_run",
    "serialize_trace",
    "TraceView",
]

INIT_TID = -1


class Kind(enum.IntEnum):
    LOAD = 0
    STORE = 1
    BRANCH = 2
    ASSIGN = 3
    SYNC = 4
    LWSYNC = 5
    ISYNC = 6


_FENCE_KINDS = {"sync": Kind.SYNC, "lwsync": Kind.LWSYNC, "isync": Kind.ISYNC}


def kind_of_instruction(instr: Instruction) -> Kind:
    if isinstance(instr, Load):
        return Kind.LOAD
    if isinstance(instr, Store):
        return Kind.STORE
    if isinstance(instr, Branch):
        return Kind.BRANCH
    if isinstance(instr, RegAssign):
        return Kind.ASSIGN
    if isinstance(instr, Fence):
        return _FENCE_KINDS[instr.kind]
    raise TypeError(f"not an instruction: {instr!r}")


class Event(NamedTuple):
    """One executed instruction instance (t, n, l), with a cached kind."""

    tid: int
    index: int
    label: str
    kind: Kind
    is_init: bool = False

    @property
    def is_memory_access(self) -> bool:
        return self.kind in (Kind.LOAD, Kind.STORE)

    def __repr__(self) -> str:  # readable test failures
        return event_token(self)


STAR = "*"  # pseudo-parameter used only inside RSMC branch templates


class ParamEvent(NamedTuple):
    """A committed memory access with its parameter.

    The parameter is a coherence position (int) for stores, the source
    store (Event) for loads, or STAR inside RSMC branch templates.
    """

    event: Event
    param: object

    def __repr__(self) -> str:
        return f"{event_token(self.event)}[{format_param(self.param)}]"


def make_event(program: Program, tid: int, index: int, label: str) -> Event:
    return Event(tid, index, label, kind_of_instruction(program.instruction(label)))


def init_events(program: Program) -> tuple[Event, ...]:
    """One committed initializer store per global, indexed by address."""
    return tuple(
        Event(INIT_TID, addr, f"init({name})", Kind.STORE, True)
        for name, addr, _ in program.inits
    )


def instruction_of(program: Program, e: Event) -> Instruction:
    if e.is_init:
        return program.init_instruction(e.index)
    return program.instruction(e.label)


# --- traces ----------------------------------------------------------------


@dataclass(frozen=True)
class Trace:
    """A Shasha-Snir trace (E, po, co, rf), all relations as edge sets.

    po totally orders the events of each thread; co totally orders the
    stores of each address with the initializer first; rf maps each covered
    load to exactly one same-address store.
    """

    events: frozenset[Event]
    po: frozenset[tuple[Event, Event]]
    co: frozenset[tuple[Event, Event]]
    rf: frozenset[tuple[Event, Event]]

    def co_chains(self) -> tuple[tuple[Event, ...], ...]:
        """Per-address coherence orders recovered from the co relation."""
        preds: dict[Event, int] = {}
        members: dict[Event, set[Event]] = {}
        for a, b in self.co:
            preds[b] = preds.get(b, 0) + 1
            preds.setdefault(a, 0)
            members.setdefault(a, set()).add(b)
            members.setdefault(b, set()).add(a)
        chains: list[tuple[Event, ...]] = []
        seen: set[Event] = set()
        for e in sorted(preds, key=_event_sort_key):
            if e in seen:
                continue
            group = {e} | members.get(e, set())
            seen |= group
            chains.append(tuple(sorted(group, key=lambda x: preds[x])))
        return tuple(chains)


@dataclass(frozen=True)
class DepBundle:
    """The dependency relations of one state, over its fetched events.

    All seven relations are subsets of po.  lwfence_dep is lwsync_dep minus
    the (store, load) pairs, matching the weaker guarantee of lwsync.
    """

    addr_dep: frozenset[tuple[Event, Event]]
    data_dep: frozenset[tuple[Event, Event]]
    ctrl_dep: frozenset[tuple[Event, Event]]
    po_loc: frozenset[tuple[Event, Event]]
    ffence_dep: frozenset[tuple[Event, Event]]
    lwsync_dep: frozenset[tuple[Event, Event]]
    lwfence_dep: frozenset[tuple[Event, Event]]


# --- evaluation ------------------------------------------------------------

_PENDING = object()


def _writer_of(view, e: Event, reg: str) -> Event | None:
    """po-greatest event before e in its thread assigning or loading reg."""
    if e.tid == INIT_TID:
        return None
    thread = view.fetched[e.tid]
    for i in range(e.index - 1, -1, -1):
        w = thread[i]
        instr = instruction_of(view.program, w)
        if isinstance(instr, (RegAssign, Load)) and instr.reg == reg:
            return w
    return None


def _eval(view, e: Event, expr: Expr, memo: dict) -> int | None:
    # entries pin the expression object: its id stays valid as long as the
    # memo lives, so transient expressions cannot alias a recycled id
    key = (e, id(expr))
    entry = memo.get(key)
    if entry is not None and entry[0] is expr:
        cached = entry[1]
        # re-entering a pending evaluation means the value depends on itself
        return None if cached is _PENDING else cached
    memo[key] = (expr, _PENDING)
    value = _eval_inner(view, e, expr, memo)
    memo[key] = (expr, value)
    return value


def _eval_inner(view, e: Event, expr: Expr, memo: dict) -> int | None:
    if isinstance(expr, Lit):
        return expr.value
    if isinstance(expr, AddrOf):
        return expr.address
    if isinstance(expr, BinOp):
        lhs = _eval(view, e, expr.lhs, memo)
        rhs = _eval(view, e, expr.rhs, memo)
        if lhs is None or rhs is None:
            return None
        return apply_binop(expr.op, lhs, rhs)
    if isinstance(expr, Reg):
        w = _writer_of(view, e, expr.name)
        if w is None:
            return 0  # a register with no earlier writer reads as 0
        instr = instruction_of(view.program, w)
        if isinstance(instr, RegAssign):
            return _eval(view, w, instr.expr, memo)
        if w not in view.committed:
            return None  # value of an uncommitted load is undefined
        src = view.rf.get(w)
        if src is None:
            return None
        src_instr = instruction_of(view.program, src)
        return _eval(view, src, src_instr.value, memo)
    raise TypeError(f"not an expression: {expr!r}")


def _memo_of(view) -> dict:
    cache = getattr(view, "_caches", None)
    if cache is None:
        return {}
    return cache.setdefault("val", {})


def value_of(view, e: Event, expr: Expr) -> int | None:
    """Evaluate expr at event e, or None when it depends on an uncommitted
    load (the undefined result is a value, never an exception)."""
    return _eval(view, e, expr, _memo_of(view))


def addr_of(view, e: Event) -> int | None:
    """The memory location accessed by a load or store event."""
    instr = instruction_of(view.program, e)
    if not isinstance(instr, (Load, Store)):
        raise TypeError(f"{e!r} is not a memory access")
    return _eval(view, e, instr.addr, _memo_of(view))


def _adeps_expr(view, e: Event, expr: Expr, memo: dict) -> frozenset[Event]:
    key = (e, expr)
    if key in memo:
        return memo[key]
    memo[key] = frozenset()  # cycles contribute nothing new
    deps = _adeps_inner(view, e, expr, memo)
    memo[key] = deps
    return deps


def _adeps_inner(view, e: Event, expr: Expr, memo: dict) -> frozenset[Event]:
    if isinstance(expr, (Lit, AddrOf)):
        return frozenset()
    if isinstance(expr, BinOp):
        return _adeps_expr(view, e, expr.lhs, memo) | _adeps_expr(view, e, expr.rhs, memo)
    if isinstance(expr, Reg):
        w = _writer_of(view, e, expr.name)
        if w is None:
            return frozenset()
        instr = instruction_of(view.program, w)
        if isinstance(instr, RegAssign):
            return _adeps_expr(view, w, instr.expr, memo)
        return frozenset({w})  # a load is itself the dependency
    raise TypeError(f"not an expression: {expr!r}")


def adeps_of(view, e: Event) -> frozenset[Event]:
    """Load events feeding the value expressions of e (App-style adeps)."""
    instr = instruction_of(view.program, e)
    memo: dict = {}
    if isinstance(instr, (RegAssign, Branch)):
        expr = instr.expr if isinstance(instr, RegAssign) else instr.cond
        return _adeps_expr(view, e, expr, memo)
    if isinstance(instr, Load):
        return _adeps_expr(view, e, instr.addr, memo)
    if isinstance(instr, Store):
        return _adeps_expr(view, e, instr.addr, memo) | _adeps_expr(
            view, e, instr.value, memo
        )
    return frozenset()


# --- dependency relations --------------------------------------------------


def _structural_deps(view):
    """addr/data/ctrl and the fence relations: functions of F and po only
    (adeps chases register writers syntactically), independent of rf."""
    cache = getattr(view, "_caches", None)
    if cache is not None and "deps_structural" in cache:
        return cache["deps_structural"]

    program = view.program
    addr_dep: set = set()
    data_dep: set = set()
    ctrl_dep: set = set()
    ffence: set = set()
    lwsync: set = set()

    memo: dict = {}
    for thread in view.fetched:
        fence_sync: list[int] = []
        fence_lw: list[int] = []
        for e in thread:
            instr = instruction_of(program, e)
            if isinstance(instr, (Load, Store)):
                for d in _adeps_expr(view, e, instr.addr, memo):
                    addr_dep.add((d, e))
            if isinstance(instr, RegAssign):
                for d in _adeps_expr(view, e, instr.expr, memo):
                    data_dep.add((d, e))
            elif isinstance(instr, Branch):
                branch_deps = _adeps_expr(view, e, instr.cond, memo)
                for d in branch_deps:
                    data_dep.add((d, e))
                for later in thread[e.index + 1 :]:
                    for d in branch_deps:
                        ctrl_dep.add((d, later))
            elif isinstance(instr, Store):
                for d in _adeps_expr(view, e, instr.value, memo):
                    data_dep.add((d, e))
            if e.kind is Kind.SYNC:
                fence_sync.append(e.index)
            elif e.kind is Kind.LWSYNC:
                fence_lw.append(e.index)

        for fences, rel in ((fence_sync, ffence), (fence_lw, lwsync)):
            for i in fences:
                for before in thread[:i]:
                    for after in thread[i + 1 :]:
                        rel.add((before, after))

    lwfence = frozenset(
        (a, b)
        for a, b in lwsync
        if not (a.kind is Kind.STORE and b.kind is Kind.LOAD)
    )
    parts = (
        frozenset(addr_dep),
        frozenset(data_dep),
        frozenset(ctrl_dep),
        frozenset(ffence),
        frozenset(lwsync),
        lwfence,
    )
    if cache is not None:
        cache["deps_structural"] = parts
    return parts


def dep_bundle(view) -> DepBundle:
    """Compute the seven dependency relations over the fetched events."""
    cache = getattr(view, "_caches", None)
    if cache is not None and "deps" in cache:
        return cache["deps"]

    addr_dep, data_dep, ctrl_dep, ffence, lwsync, lwfence = _structural_deps(view)

    # po-loc depends on addresses, hence on the read-from assignment
    po_loc: set = set()
    for thread in view.fetched:
        addr_sites: list[tuple[Event, int]] = []
        for e in thread:
            if not e.is_memory_access:
                continue
            a = addr_of(view, e)
            if a is not None:
                for prev, aj in addr_sites:
                    if aj == a:
                        po_loc.add((prev, e))
                addr_sites.append((e, a))

    bundle = DepBundle(
        addr_dep,
        data_dep,
        ctrl_dep,
        frozenset(po_loc),
        ffence,
        lwsync,
        lwfence,
    )
    if cache is not None:
        cache["deps"] = bundle
    return bundle


# --- trace views and completeness ------------------------------------------


class TraceView:
    """Adapter presenting a bare Trace as a state view for evaluation."""

    def __init__(self, program: Program, trace: Trace):
        self.program = program
        threads: dict[int, list[Event]] = {}
        for e in trace.events:
            if not e.is_init:
                threads.setdefault(e.tid, []).append(e)
        n = max(threads, default=-1) + 1
        self.fetched = tuple(
            tuple(sorted(threads.get(t, []), key=lambda e: e.index)) for t in range(n)
        )
        self.committed = frozenset(trace.events)
        self.rf = {load: store for store, load in trace.rf}
        self._caches: dict = {}


def is_complete_trace(program: Program, trace: Trace) -> bool:
    """True iff each thread's committed events walk its code from the first
    instruction past the last, respecting branch evaluation."""
    view = TraceView(program, trace)
    if len(view.fetched) < program.n_threads:
        return False
    for tid in range(program.n_threads):
        events = view.fetched[tid] if tid < len(view.fetched) else ()
        cursor: str | None = program.first_label(tid)
        for i, e in enumerate(events):
            if e.index != i or cursor is None or e.label != cursor:
                return False
            instr = program.instruction(e.label)
            if isinstance(instr, Branch):
                v = value_of(view, e, instr.cond)
                if v is None:
                    return False
                cursor = instr.target if v != 0 else _next(program, e.label)
            else:
                cursor = _next(program, e.label)
        if cursor is not None:
            return False
    return True


def _next(program: Program, label: str) -> str | None:
    tid, pos = program.location(label)
    instrs = program.threads[tid].instrs
    return instrs[pos + 1][0] if pos + 1 < len(instrs) else None


# --- serialization ----------------------------------------------------------


def _event_sort_key(e: Event) -> tuple:
    return (e.tid, e.index)


def event_token(e: Event) -> str:
    if e.is_init:
        return e.label  # "init(x)"
    return f"{e.tid}:{e.index}"


def format_param(param: object) -> str:
    if param is STAR:
        return "*"
    if isinstance(param, Event):
        return f"rf={event_token(param)}"
    return f"co={param}"


def format_run(run: Iterable[ParamEvent]) -> str:
    """One step per line, `tid:index[param]`."""
    return "\n".join(f"{event_token(e)}[{format_param(p)}]" for e, p in run)


def serialize_trace(program: Program, trace: Trace) -> str:
    """Stable text form: one line per event, then po/co/rf edge lists."""
    lines = []
    for e in sorted(trace.events, key=_event_sort_key):
        instr = pretty_instr(instruction_of(program, e))
        if e.is_init:
            lines.append(f"{event_token(e)} {instr}")
        else:
            lines.append(f"{event_token(e)} {e.label} {instr}")

    def edge_line(name: str, pairs: Iterable[tuple[Event, Event]]) -> str:
        edges = sorted(pairs, key=lambda p: (_event_sort_key(p[0]), _event_sort_key(p[1])))
        return f"{name}: " + " ".join(
            f"{event_token(a)}->{event_token(b)}" for a, b in edges
        )

    threads: dict[int, list[Event]] = {}
    for e in trace.events:
        if not e.is_init:
            threads.setdefault(e.tid, []).append(e)
    po_chain = set()
    for events in threads.values():
        events.sort(key=lambda e: e.index)
        po_chain.update(zip(events, events[1:]))
    co_chain = set()
    for chain in trace.co_chains():
        co_chain.update(zip(chain, chain[1:]))
    lines.append(edge_line("po", po_chain))
    lines.append(edge_line("co", co_chain))
    lines.append(edge_line("rf", trace.rf))
    return "\n".join(lines)


# --- trace sets -------------------------------------------------------------


class TraceSet:
    """Canonical traces with multiplicity counts, keyed by serialization.

    With ``keep_traces=False`` only a digest of each serialization and its
    count are retained; distinctness bookkeeping stays exact while memory
    stays flat on very large trace sets (dump and witnesses unavailable).
    """

    def __init__(self, program: Program, keep_traces: bool = True):
        self.program = program
        self.keep_traces = keep_traces
        self.entries: dict[str, list] = {}  # key -> [Trace | None, count]

    def add(self, trace: Trace) -> bool:
        """Record one occurrence; returns True when the trace is new."""
        key = serialize_trace(self.program, trace)
        if not self.keep_traces:
            key = hashlib.sha256(key.encode()).hexdigest()
            trace = None
        entry = self.entries.get(key)
        if entry is None:
            self.entries[key] = [trace, 1]
            return True
        entry[1] += 1
        return False

    def keys(self) -> frozenset[str]:
        return frozenset(self.entries)

    def multiplicity(self, key: str) -> int:
        return self.entries[key][1]

    def traces(self) -> list[Trace]:
        return [t for t, _ in self.entries.values() if t is not None]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def same_traces(self, other: "TraceSet") -> bool:
        return self.keys() == other.keys()
