"""The operational execution model derived from the axiomatic one.

A state (lambda, F, E, po, co, rf) is a trace augmented with the set F of
fetched events and per-thread fetch cursors.  Events are committed out of
order, constrained by a commit-before order cb: an event is enabled when it
is fetched, uncommitted, and all its cb-predecessors are committed.

The FLB rules (FETCH, LOC, BRT, BRF) fetch instructions in control-flow
order -- never past an uncommitted branch of the same thread -- and commit
local events; flb_closure applies them exhaustively.  Memory accesses are
committed by the ST/LD rules with an explicit parameter (a coherence
position for stores, a source store for loads), guarded by the axiomatic
model on the resulting trace.

Two commit-before functions ship:

    cb0     = (addr | data | ctrl | rf)+
    cbpower = (cb0 | addr;po | po-loc | ffence | lwsync)+

cb0 is the weakest valid order but can block; cbpower is deadlock free.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field

from .axiomatic import axioms_hold, transitive_closure
from .lang import CondAnd, CondOr, Condition, MemEq, Program, Reg, RegEq
from .trace import (
    Event,
    Kind,
    ParamEvent,
    Trace,
    TraceView,
    addr_of,
    dep_bundle,
    init_events,
    instruction_of,
    is_complete_trace,
    make_event,
    value_of,
)

__all__ = [
    "CbKind",
    "State",
    "BudgetExceeded",
    "NotEnabled",
    "StepBlocked",
    "DeadlockFreedomViolation",
    "initial_state",
    "exec_of",
    "flb_closure",
    "compute_cb",
    "enabled_events",
    "allowed_params",
    "commit_candidates",
    "replay",
    "is_complete_state",
    "is_cb_extension",
    "find_event",
    "final_register_value",
    "final_memory_value",
    "condition_holds",
    "condition_holds_trace",
]


class CbKind(str, enum.Enum):
    CB0 = "cb0"
    POWER = "power"


# When True, cbpower uses the weakened lwfence (store->load pairs dropped)
# in place of the full lwsync relation.  The stronger full-lwsync form is
# the default; see docs/memory_model.md.
CB_POWER_WEAKENED_LWSYNC = False

DEFAULT_FETCH_BUDGET = 1000


class BudgetExceeded(Exception):
    def __init__(self, tid: int, budget: int):
        super().__init__(f"thread {tid} would fetch more than {budget} events")
        self.tid = tid
        self.budget = budget


class NotEnabled(Exception):
    def __init__(self, event: Event):
        super().__init__(f"event {event!r} is not enabled")
        self.event = event


class StepBlocked(Exception):
    def __init__(self, index: int, step: ParamEvent):
        super().__init__(f"run step {index} ({step!r}) is not an available candidate")
        self.index = index
        self.step = step


class DeadlockFreedomViolation(Exception):
    def __init__(self, event: Event, run):
        super().__init__(f"enabled event {event!r} has no commit candidate")
        self.event = event
        self.run = run


@dataclass(frozen=True)
class State:
    """One execution-model state; a persistent, immutable value.

    ``fetched`` holds each thread's events in fetch order, which is also
    program order (an event's index equals its position).  ``co`` holds one
    chain per address, initializer event first.  ``rf`` maps committed load
    events to their source stores.
    """

    program: Program
    cb_kind: CbKind
    fetch_budget: int
    cursors: tuple
    fetched: tuple
    committed: frozenset
    co: tuple
    rf: dict
    _caches: dict = field(default_factory=dict, compare=False, repr=False)

    def all_fetched(self):
        for thread in self.fetched:
            yield from thread


def initial_state(
    program: Program,
    fetch_budget: int = DEFAULT_FETCH_BUDGET,
    cb_kind: CbKind = CbKind.POWER,
) -> State:
    """sigma0: cursors at first labels, one committed init store per global."""
    inits = init_events(program)
    return State(
        program=program,
        cb_kind=cb_kind,
        fetch_budget=fetch_budget,
        cursors=tuple(program.first_label(t) for t in range(program.n_threads)),
        fetched=tuple(() for _ in range(program.n_threads)),
        committed=frozenset(inits),
        co=tuple((e,) for e in inits),
        rf={},
    )


def exec_of(state: State) -> Trace:
    """The trace (E, po|E, co, rf) of a state."""
    cached = state._caches.get("exec")
    if cached is not None:
        return cached
    po = set()
    for thread in state.fetched:
        committed_thread = [e for e in thread if e in state.committed]
        for i, a in enumerate(committed_thread):
            for b in committed_thread[i + 1 :]:
                po.add((a, b))
    co = set()
    for chain in state.co:
        for i, a in enumerate(chain):
            for b in chain[i + 1 :]:
                co.add((a, b))
    rf = frozenset((w, r) for r, w in state.rf.items())
    trace = Trace(frozenset(state.committed), frozenset(po), frozenset(co), rf)
    state._caches["exec"] = trace
    return trace


# --- commit-before ----------------------------------------------------------


def compute_cb(state: State, kind: CbKind | None = None) -> frozenset:
    """The commit-before order of a state: a relation over fetched events."""
    kind = kind or state.cb_kind
    key = ("cb", kind)
    cached = state._caches.get(key)
    if cached is not None:
        return cached
    deps = dep_bundle(state)
    rf_pairs = frozenset((w, r) for r, w in state.rf.items())
    base = deps.addr_dep | deps.data_dep | deps.ctrl_dep | rf_pairs
    if kind is CbKind.POWER:
        addr_po = set()
        for a, b in deps.addr_dep:
            if b.tid >= 0:
                for c in state.fetched[b.tid][b.index + 1 :]:
                    addr_po.add((a, c))
        lw = deps.lwfence_dep if CB_POWER_WEAKENED_LWSYNC else deps.lwsync_dep
        base = base | addr_po | deps.po_loc | deps.ffence_dep | lw
    cb = transitive_closure(base)
    state._caches[key] = cb
    return cb


def _cb_preds(state: State, kind: CbKind | None) -> dict:
    key = ("cb_preds", kind or state.cb_kind)
    cached = state._caches.get(key)
    if cached is not None:
        return cached
    cb = compute_cb(state, kind)
    preds: dict[Event, set[Event]] = {}
    for a, b in cb:
        preds.setdefault(b, set()).add(a)
    state._caches[key] = preds
    return preds


def _enabled(state: State, preds: dict, e: Event) -> bool:
    if e in state.committed:
        return False
    return all(p in state.committed for p in preds.get(e, ()))


def enabled_events(state: State, kind: CbKind | None = None) -> frozenset:
    """Fetched, uncommitted memory accesses whose cb-predecessors are all
    committed."""
    preds = _cb_preds(state, kind)
    return frozenset(
        e
        for e in state.all_fetched()
        if e.is_memory_access and _enabled(state, preds, e)
    )


# --- FLB closure ------------------------------------------------------------


def _freeze(program, cb_kind, budget, cursors, fetched, committed, co, rf) -> State:
    return State(
        program,
        cb_kind,
        budget,
        tuple(cursors),
        tuple(tuple(t) for t in fetched),
        frozenset(committed),
        co,
        rf,
    )


def _fetch_one(program, budget, cursors, fetched, t) -> None:
    label = cursors[t]
    index = len(fetched[t])
    if index >= budget:
        raise BudgetExceeded(t, budget)
    fetched[t].append(make_event(program, t, index, label))
    tid_, pos = program.location(label)
    instrs = program.threads[t].instrs
    cursors[t] = instrs[pos + 1][0] if pos + 1 < len(instrs) else None


def _can_fetch(cursors, fetched, committed, t) -> bool:
    if cursors[t] is None:
        return False
    return not any(
        e.kind is Kind.BRANCH and e not in committed for e in fetched[t]
    )


def flb_closure(
    state: State,
    fetch_budget: int | None = None,
    *,
    rule_rng: random.Random | None = None,
) -> State:
    """Apply FETCH/LOC/BRT/BRF until no rule fires.

    The result is order-independent; ``rule_rng`` randomizes the rule
    application order (used to test confluence).  Raises BudgetExceeded when
    a thread would fetch more than the budget.
    """
    program = state.program
    budget = state.fetch_budget if fetch_budget is None else fetch_budget
    cursors = list(state.cursors)
    fetched = [list(t) for t in state.fetched]
    committed = set(state.committed)
    co, rf = state.co, state.rf
    # values stay valid throughout: closure appends fetches and commits
    # locals only, neither of which affects any evaluated expression
    memo = dict(state._caches.get("val", ()))
    last_snap = None

    if rule_rng is None:
        while True:
            progressed = False
            for t in range(program.n_threads):
                while _can_fetch(cursors, fetched, committed, t):
                    _fetch_one(program, budget, cursors, fetched, t)
                    progressed = True
            # cb depends on F and rf only, so one snapshot covers all the
            # local commits below
            snap = _freeze(program, state.cb_kind, budget, cursors, fetched, committed, co, rf)
            snap._caches["val"] = memo
            last_snap = snap
            preds = _cb_preds(snap, None)
            changed = True
            while changed:
                changed = False
                for thread in fetched:
                    for e in thread:
                        if e.is_memory_access or e in committed:
                            continue
                        if not all(p in committed for p in preds.get(e, ())):
                            continue
                        if e.kind is Kind.BRANCH:
                            v = value_of(snap, e, program.instruction(e.label).cond)
                            if v is None:
                                continue
                            committed.add(e)
                            if v != 0:
                                cursors[e.tid] = program.instruction(e.label).target
                            changed = progressed = True
                        else:
                            committed.add(e)
                            changed = progressed = True
                # committing locals does not change cb, so preds stays valid
            if not progressed:
                break
    else:
        while True:
            snap = _freeze(program, state.cb_kind, budget, cursors, fetched, committed, co, rf)
            snap._caches["val"] = memo
            last_snap = snap
            preds = _cb_preds(snap, None)
            candidates: list[tuple] = []
            for t in range(program.n_threads):
                if _can_fetch(cursors, fetched, committed, t):
                    candidates.append(("fetch", t))
            for thread in fetched:
                for e in thread:
                    if e.is_memory_access or e in committed:
                        continue
                    if not all(p in committed for p in preds.get(e, ())):
                        continue
                    if e.kind is Kind.BRANCH:
                        v = value_of(snap, e, program.instruction(e.label).cond)
                        if v is not None:
                            candidates.append(("branch", e, v))
                    else:
                        candidates.append(("loc", e))
            if not candidates:
                break
            pick = candidates[rule_rng.randrange(len(candidates))]
            if pick[0] == "fetch":
                _fetch_one(program, budget, cursors, fetched, pick[1])
            elif pick[0] == "loc":
                committed.add(pick[1])
            else:
                _, e, v = pick
                committed.add(e)
                if v != 0:
                    cursors[e.tid] = program.instruction(e.label).target

    closed = _freeze(program, state.cb_kind, budget, cursors, fetched, committed, co, rf)
    closed._caches["val"] = memo
    if last_snap is not None:
        # the loop exits only after an iteration that changed nothing, so
        # the last snapshot's F/po/rf-derived caches describe the result
        for key in ("deps", "deps_structural", ("cb", state.cb_kind), ("cb_preds", state.cb_kind)):
            if key in last_snap._caches:
                closed._caches[key] = last_snap._caches[key]
    return closed


# --- committing memory accesses ---------------------------------------------


def _committed_child(state: State, e: Event, kind: CbKind, *, co=None, rf=None) -> State:
    child = State(
        state.program,
        kind,
        state.fetch_budget,
        state.cursors,
        state.fetched,
        state.committed | {e},
        state.co if co is None else co,
        state.rf if rf is None else rf,
    )
    parent_vals = state._caches.get("val")
    if "deps_structural" in state._caches:
        # functions of F and po only; commits never change them
        child._caches["deps_structural"] = state._caches["deps_structural"]
    if rf is None:
        # a store commit leaves F, po and rf unchanged, so the dependency
        # bundle, cb, and every evaluated expression carry over
        child._caches["deps"] = dep_bundle(state)
        for kind in CbKind:
            key = ("cb", kind)
            if key in state._caches:
                child._caches[key] = state._caches[key]
        if parent_vals:
            child._caches["val"] = dict(parent_vals)
    elif parent_vals:
        # committing a load can only turn undefined results defined;
        # defined values never change once their dependencies committed
        child._caches["val"] = {
            k: entry for k, entry in parent_vals.items() if entry[1] is not None
        }
    return child


def allowed_params(state: State, e: Event, kind: CbKind | None = None) -> list:
    """All (parameter, post-commit state) pairs the ST/LD rules admit.

    Stores are offered every coherence insertion point in ascending
    position; loads every committed same-address store, initializer first.
    Each candidate is filtered by the axiomatic model on the resulting
    trace.  The returned states are pre-closure.
    """
    kind = kind or state.cb_kind
    if e not in enabled_events(state, kind):
        raise NotEnabled(e)
    address = addr_of(state, e)
    assert address is not None, "enabled memory access must have a defined address"
    if not 0 <= address < len(state.co):
        raise ValueError(
            f"{e!r} accesses address {address}, outside the declared globals"
        )
    chain = state.co[address]
    out = []
    if e.kind is Kind.STORE:
        for n in range(len(chain)):
            new_chain = chain[: n + 1] + (e,) + chain[n + 1 :]
            co = state.co[:address] + (new_chain,) + state.co[address + 1 :]
            child = _committed_child(state, e, kind, co=co)
            if axioms_hold(exec_of(child), dep_bundle(child)):
                out.append((n, child))
    else:
        for e_w in chain:
            rf = dict(state.rf)
            rf[e] = e_w
            child = _committed_child(state, e, kind, rf=rf)
            if axioms_hold(exec_of(child), dep_bundle(child)):
                out.append((e_w, child))
    return out


def commit_candidates(state: State, e: Event, kind: CbKind | None = None) -> list:
    """allowed_params followed by FLB closure of each candidate state."""
    return [(p, flb_closure(s)) for p, s in allowed_params(state, e, kind)]


def replay(
    program: Program,
    run,
    kind: CbKind = CbKind.POWER,
    fetch_budget: int = DEFAULT_FETCH_BUDGET,
) -> State:
    """Fold flb_closure and commits over a run; the result is unique.

    Raises StepBlocked identifying the first step whose parameterized event
    is not an available candidate.
    """
    state = flb_closure(initial_state(program, fetch_budget, kind))
    for i, step in enumerate(run):
        e, p = step
        try:
            options = allowed_params(state, e, kind)
        except NotEnabled:
            raise StepBlocked(i, step) from None
        chosen = next((s for q, s in options if q == p), None)
        if chosen is None:
            raise StepBlocked(i, step)
        state = flb_closure(chosen)
    return state


def is_complete_state(program: Program, state: State) -> bool:
    return is_complete_trace(program, exec_of(state))


def is_cb_extension(small: State, big: State, kind: CbKind | None = None) -> bool:
    """The five conditions of the cb-extension definition, checked literally."""
    kind = kind or big.cb_kind
    f_small = frozenset(small.all_fetched())
    f_big = frozenset(big.all_fetched())
    # F is a po'-closed subset of F': per thread, a prefix of big's fetches
    if len(small.fetched) != len(big.fetched):
        return False
    for ours, theirs in zip(small.fetched, big.fetched):
        if tuple(ours) != tuple(theirs[: len(ours)]):
            return False
    # po = po'|F holds by construction once F is a per-thread prefix
    # co = co'|E
    e_small = small.committed
    if not e_small <= big.committed:
        return False
    big_co_pairs = {
        (a, b)
        for chain in big.co
        for i, a in enumerate(chain)
        for b in chain[i + 1 :]
        if a in e_small and b in e_small
    }
    small_co_pairs = {
        (a, b)
        for chain in small.co
        for i, a in enumerate(chain)
        for b in chain[i + 1 :]
    }
    if big_co_pairs != small_co_pairs:
        return False
    # rf = rf'|E
    big_rf = {(w, r) for r, w in big.rf.items() if r in e_small and w in e_small}
    small_rf = {(w, r) for r, w in small.rf.items()}
    if big_rf != small_rf:
        return False
    # E is a cb(sigma')-closed subset of E'
    cb_big = compute_cb(big, kind)
    for a, b in cb_big:
        if b in e_small and a in big.committed and a not in e_small:
            return False
    return True


# --- small helpers ----------------------------------------------------------


def find_event(state: State, label: str, occurrence: int = 0) -> Event:
    """The occurrence-th fetched event carrying a label."""
    seen = 0
    for e in state.all_fetched():
        if e.label == label:
            if seen == occurrence:
                return e
            seen += 1
    raise KeyError(f"no fetched event labelled {label!r} (occurrence {occurrence})")


def final_register_value(state: State, tid: int, reg: str) -> int | None:
    """The final value of a register: what a probe after the thread's last
    fetched event would read."""
    probe = Event(tid, len(state.fetched[tid]), "<final>", Kind.ASSIGN)
    return value_of(state, probe, Reg(reg))


def final_memory_value(state: State, address: int) -> int | None:
    chain = state.co[address]
    last = chain[-1]
    return value_of(state, last, instruction_of(state.program, last).value)


def condition_holds(state: State, cond: Condition) -> bool:
    """Evaluate a postcondition at a (complete) state."""
    if isinstance(cond, CondAnd):
        return all(condition_holds(state, p) for p in cond.parts)
    if isinstance(cond, CondOr):
        return any(condition_holds(state, p) for p in cond.parts)
    if isinstance(cond, RegEq):
        tid = state.program._thread_index[cond.thread]
        return final_register_value(state, tid, cond.reg) == cond.value
    if isinstance(cond, MemEq):
        address = state.program._var_addr[cond.var]
        return final_memory_value(state, address) == cond.value
    raise TypeError(f"not a condition: {cond!r}")


def condition_holds_trace(program: Program, trace: Trace, cond: Condition) -> bool:
    """condition_holds for a bare trace (no surrounding state)."""
    view = TraceView(program, trace)
    if isinstance(cond, CondAnd):
        return all(condition_holds_trace(program, trace, p) for p in cond.parts)
    if isinstance(cond, CondOr):
        return any(condition_holds_trace(program, trace, p) for p in cond.parts)
    if isinstance(cond, RegEq):
        tid = program._thread_index[cond.thread]
        fetched = view.fetched[tid] if tid < len(view.fetched) else ()
        probe = Event(tid, len(fetched), "<final>", Kind.ASSIGN)
        return value_of(view, probe, Reg(cond.reg)) == cond.value
    if isinstance(cond, MemEq):
        address = program._var_addr[cond.var]
        last = None
        for chain in trace.co_chains():
            if addr_of(view, chain[0]) == address:
                last = chain[-1]
                break
        if last is None:
            return program.inits[address][2] == cond.value
        return value_of(view, last, instruction_of(program, last).value) == cond.value
    raise TypeError(f"not a condition: {cond!r}")
