"""The RSMC exploration algorithm.

Explore drives the execution model from the initial state.  At each node it
FLB-closes the state, picks one enabled memory access (least-advanced
thread first, see _select) and recurses over every parameter the memory
model allows.  After
exploring a store it detects read->write races against loads already in the
run; each race contributes a branch template ``tail . e_w[*] . e_r[e_w]``
(the tail holding exactly the steps commit-before the store, with coherence
positions renumbered) queued on the load.  After exploring a load's own
parameters, every queued branch is traversed: fixed steps are replayed,
the ``*`` store explores all its insertion points, and the final load
re-reads from the reversed store -- or the branch dies if the model rejects
it, which (besides fetch-budget overruns) is the only source of blocked
runs under the POWER commit-before order.

Branch templates are normalized before queueing so that races rediscovered
along sibling runs dedupe instead of spawning redundant explorations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .execution import (
    BudgetExceeded,
    CbKind,
    DeadlockFreedomViolation,
    State,
    allowed_params,
    compute_cb,
    condition_holds,
    enabled_events,
    exec_of,
    flb_closure,
    initial_state,
    is_complete_state,
)
from .lang import Program
from .trace import STAR, Event, Kind, ParamEvent, TraceSet, addr_of

__all__ = [
    "Branch",
    "ExplorerBook",
    "Stats",
    "model_check",
    "cut_run",
    "normalize_run",
]

Branch = tuple  # a branch is a tuple of ParamEvent, ending e_w[*].e_r[e_w]


@dataclass
class ExplorerBook:
    """P/Q bookkeeping of one exploration.

    P[e] is the run that preceded the load e when Explore last committed
    it; Q[e] collects branch templates (insertion-ordered, deduplicated)
    that re-execute e reading from a raced store.
    """

    P: dict = field(default_factory=dict)
    Q: dict = field(default_factory=dict)
    q_peak: dict = field(default_factory=dict)

    def enqueue(self, load: Event, branch: Branch) -> None:
        bucket = self.Q.setdefault(load, [])
        if branch not in bucket:
            bucket.append(branch)
            peak = self.q_peak.get(load, 0)
            self.q_peak[load] = max(peak, len(bucket))


@dataclass
class Stats:
    complete_traces: int = 0  # SS
    blocked_runs: int = 0  # B
    explore_calls: int = 0
    traverse_calls: int = 0
    budget_hits: int = 0
    q_peak: dict = field(default_factory=dict)

    def summary(self, time_ms: float | None = None) -> str:
        text = (
            f"traces={self.complete_traces} blocked={self.blocked_runs} "
            f"explore_calls={self.explore_calls}"
        )
        if time_ms is not None:
            text += f" time_ms={time_ms:.0f}"
        return text


@dataclass
class _Context:
    program: Program
    kind: CbKind
    book: ExplorerBook
    stats: Stats
    traces: TraceSet
    violations: list
    check_deadlock_freedom: bool


def model_check(
    program: Program,
    kind: CbKind = CbKind.POWER,
    fetch_budget: int = 1000,
    *,
    check_deadlock_freedom: bool = False,
    keep_traces: bool = True,
):
    """Explore all traces of a program; returns (traces, stats, violations).

    ``traces`` is the set of distinct complete traces (with multiplicity
    counts, uniformly 1 when exploration is optimal); ``violations`` lists
    (trace, run) pairs for complete traces satisfying the program's exists
    clause.  Runs that overrun the fetch budget are abandoned and counted
    as blocked.  With ``check_deadlock_freedom`` every exploration node
    asserts that each enabled event has at least one candidate, raising
    DeadlockFreedomViolation otherwise.
    """
    book = ExplorerBook()
    stats = Stats()
    ctx = _Context(
        program,
        kind,
        book,
        stats,
        TraceSet(program, keep_traces),
        [],
        check_deadlock_freedom,
    )
    root_state = flb_closure(initial_state(program, fetch_budget, kind))
    _drive(_explore(ctx, (), root_state))
    stats.q_peak = {e: n for e, n in book.q_peak.items()}
    return ctx.traces, stats, ctx.violations


def _drive(root) -> None:
    stack = [root]
    while stack:
        try:
            child = next(stack[-1])
        except StopIteration:
            stack.pop()
        else:
            stack.append(child)


def _leaf(ctx: _Context, run, state: State) -> None:
    if is_complete_state(ctx.program, state):
        ctx.stats.complete_traces += 1
        trace = exec_of(state)
        key_is_new = ctx.traces.add(trace)
        post = ctx.program.postcondition
        if post is not None and condition_holds(state, post):
            if key_is_new or trace not in [t for t, _ in ctx.violations]:
                ctx.violations.append((trace, run))
    else:
        ctx.stats.blocked_runs += 1


def _children(ctx: _Context, run, state: State, e: Event):
    """(param-event, closed state) pairs for every allowed parameter.

    A node whose event admits no parameter at all is itself a dead end and
    counts as one blocked run; parameters whose closure overruns the fetch
    budget are counted individually as they are dropped.
    """
    params = allowed_params(state, e, ctx.kind)
    if not params:
        ctx.stats.blocked_runs += 1
        return []
    out = []
    for p, committed in params:
        try:
            closed = flb_closure(committed)
        except BudgetExceeded:
            ctx.stats.budget_hits += 1
            ctx.stats.blocked_runs += 1
            continue
        out.append((ParamEvent(e, p), closed))
    return out


def _assert_deadlock_free(ctx: _Context, run, state: State, enabled) -> None:
    for e in enabled:
        if not allowed_params(state, e, ctx.kind):
            raise DeadlockFreedomViolation(e, run)


def _select(state: State, enabled) -> Event:
    """Deterministic event choice: least-advanced thread first.

    Preferring the thread with the fewest fetched events keeps a
    budget-truncated loop from monopolizing the exploration: every other
    thread's stores get committed (and their races detected) before a
    spinning thread can exhaust its fetch budget.  Ties break on
    (tid, index)."""
    return min(enabled, key=lambda e: (len(state.fetched[e.tid]), e.tid, e.index))


def _explore(ctx: _Context, run, state: State):
    ctx.stats.explore_calls += 1
    enabled = sorted(enabled_events(state, ctx.kind))
    if not enabled:
        _leaf(ctx, run, state)
        return
    if ctx.check_deadlock_freedom:
        _assert_deadlock_free(ctx, run, state, enabled)
    e = _select(state, enabled)
    if e.kind is Kind.STORE:
        for pe, child in _children(ctx, run, state, e):
            yield _explore(ctx, run + (pe,), child)
        _detect_race(ctx, run, state, e)
    else:
        ctx.book.P[e] = run
        for pe, child in _children(ctx, run, state, e):
            yield _explore(ctx, run + (pe,), child)
        explored: set[Branch] = set()
        while True:
            pending = [b for b in ctx.book.Q.get(e, []) if b not in explored]
            if not pending:
                break
            branch = pending[0]
            explored.add(branch)
            yield _traverse(ctx, run, state, branch)


def _detect_race(ctx: _Context, run, state: State, e_w: Event) -> None:
    """Queue a reversal branch for every load racing with the store e_w."""
    cb = compute_cb(state, ctx.kind)
    addr_w = addr_of(state, e_w)
    for step in run:
        e_r = step.event
        if e_r.kind is not Kind.LOAD:
            continue
        if (e_r, e_w) in cb:
            continue
        if addr_of(state, e_r) != addr_w:
            continue
        prefix = ctx.book.P.get(e_r, ())
        if run[: len(prefix)] != prefix:
            # stale P entry: e_r was committed by Traverse inside a branch,
            # not by an Explore frame on the current path; the race is (or
            # will be) detected from the frame owning the load
            continue
        tail = run[len(prefix) :]
        kept = cut_run(tail, e_w, state, cb)
        base = normalize_run(kept, cb)
        branch = base + (ParamEvent(e_w, STAR), ParamEvent(e_r, e_w))
        ctx.book.enqueue(e_r, branch)


def _traverse(ctx: _Context, run, state: State, branch: Branch):
    ctx.stats.traverse_calls += 1
    if not branch:
        yield _explore(ctx, run, state)
        return
    step, rest = branch[0], branch[1:]
    e, p = step
    if e not in enabled_events(state, ctx.kind):
        ctx.stats.blocked_runs += 1
        return
    if p is STAR:
        for pe, child in _children(ctx, run, state, e):
            yield _traverse(ctx, run + (pe,), child, rest)
    else:
        params = allowed_params(state, e, ctx.kind)
        chosen = next((s for q, s in params if q == p), None)
        if chosen is None:
            # the final load (or a fixed step) does not accept its
            # parameter; stop exploring this branch
            ctx.stats.blocked_runs += 1
            return
        try:
            closed = flb_closure(chosen)
        except BudgetExceeded:
            ctx.stats.budget_hits += 1
            ctx.stats.blocked_runs += 1
            return
        yield _traverse(ctx, run + (step,), closed, rest)


# --- run surgery -------------------------------------------------------------


def cut_run(run, e: Event, state: State, cb=None):
    """Restrict a run to the steps commit-before e, renumbering retained
    store positions to account for removed same-address stores."""
    if cb is None:
        cb = compute_cb(state)
    removed: dict[int, set[int]] = {}
    out = []
    for step in run:
        e0, p0 = step
        if (e0, e) in cb:
            if e0.kind is Kind.STORE:
                gone = removed.get(addr_of(state, e0), ())
                p0 = p0 - sum(1 for i in gone if i < p0)
            out.append(ParamEvent(e0, p0))
        elif e0.kind is Kind.STORE:
            removed.setdefault(addr_of(state, e0), set()).add(p0)
    return tuple(out)


def normalize_run(run, cb):
    """The unique cb-linearization of a run's steps with cb-incomparable
    events ordered by (tid, index); parameters are unchanged."""
    steps = list(run)
    events = {s.event for s in steps}
    preds: dict[Event, set[Event]] = {s.event: set() for s in steps}
    for a, b in cb:
        if a in events and b in events:
            preds[b].add(a)
    out = []
    emitted: set[Event] = set()
    remaining = dict((s.event, s) for s in steps)
    while remaining:
        ready = [e for e, ps in preds.items() if e in remaining and ps <= emitted]
        nxt = min(ready)
        out.append(remaining.pop(nxt))
        emitted.add(nxt)
    return tuple(out)
