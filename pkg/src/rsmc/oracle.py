"""Brute-force reference explorers used as ground truth.

``enumerate_traces`` walks the full run tree of the operational model --
every enabled event and every commit candidate at every node -- and records
each complete trace with a multiplicity equal to the number of distinct
runs reaching it.

``enumerate_axiomatic`` takes the opposite route: it enumerates candidate
complete traces combinatorially (per-thread control paths, read-from
choices, coherence orders), propagates values through the read-from
assignment, and keeps the candidates the POWER predicate allows.

Both agree with each other and with RSMC on every supported program; the
test suite asserts exactly that.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .axiomatic import check_power
from .execution import (
    BudgetExceeded,
    CbKind,
    State,
    allowed_params,
    enabled_events,
    exec_of,
    flb_closure,
    initial_state,
    is_complete_state,
)
from .explore import Stats
from .lang import Branch, Program
from .trace import (
    Kind,
    TraceSet,
    addr_of,
    dep_bundle,
    init_events,
    is_complete_trace,
    make_event,
    value_of,
)

__all__ = [
    "TraceSet",
    "NodeCeilingExceeded",
    "NonStabilizingError",
    "enumerate_traces",
    "enumerate_axiomatic",
    "diff",
    "Diff",
]

DEFAULT_NODE_CEILING = 10_000_000


class NodeCeilingExceeded(Exception):
    def __init__(self, ceiling: int):
        super().__init__(f"exploration exceeded the node ceiling of {ceiling}")
        self.ceiling = ceiling


class NonStabilizingError(Exception):
    """A branch outcome could not be stabilized during value propagation.

    Candidate enumeration validates branch outcomes against fully assigned
    read-from choices, under which every value is either defined or part of
    a dependency cycle (and the candidate is rejected), so this error is
    not raised by the current enumeration strategy.  It remains part of the
    interface for callers that pre-screen programs.
    """


def enumerate_traces(
    program: Program,
    kind: CbKind = CbKind.POWER,
    fetch_budget: int = 1000,
    node_ceiling: int = DEFAULT_NODE_CEILING,
    stats: Stats | None = None,
) -> TraceSet:
    """Exhaustive DFS over the operational semantics; no race reversal."""
    ts = TraceSet(program)
    stats = stats if stats is not None else Stats()
    nodes = 0

    def rec(state: State) -> None:
        nonlocal nodes
        nodes += 1
        if nodes > node_ceiling:
            raise NodeCeilingExceeded(node_ceiling)
        enabled = sorted(enabled_events(state, kind))
        if not enabled:
            if is_complete_state(program, state):
                stats.complete_traces += 1
                ts.add(exec_of(state))
            else:
                stats.blocked_runs += 1
            return
        children = 0
        for e in enabled:
            for _, committed in allowed_params(state, e, kind):
                try:
                    closed = flb_closure(committed)
                except BudgetExceeded:
                    stats.budget_hits += 1
                    continue
                children += 1
                rec(closed)
        if children == 0:
            stats.blocked_runs += 1

    rec(flb_closure(initial_state(program, fetch_budget, kind)))
    return ts


# --- axiomatic enumeration ---------------------------------------------------


def _control_paths(program: Program, tid: int, budget: int):
    """All label sequences from the first instruction past the last one,
    following both branch outcomes, with at most ``budget`` events."""
    instrs = program.threads[tid].instrs
    index = {label: i for i, (label, _) in enumerate(instrs)}
    out: list[tuple[str, ...]] = []
    seen: set[tuple[str, ...]] = set()

    def rec(labels: list, pos: int | None) -> None:
        if pos is None:
            path = tuple(labels)
            if path not in seen:  # a branch may target its own fall-through
                seen.add(path)
                out.append(path)
            return
        if len(labels) >= budget:
            return  # cannot complete within the fetch budget
        label, instr = instrs[pos]
        labels.append(label)
        fallthrough = pos + 1 if pos + 1 < len(instrs) else None
        if isinstance(instr, Branch):
            rec(labels, index[instr.target])
            rec(labels, fallthrough)
        else:
            rec(labels, fallthrough)
        labels.pop()

    rec([], 0)
    return out


def _candidate_state(program: Program, fetched, committed, rf, co) -> State:
    return State(
        program=program,
        cb_kind=CbKind.POWER,
        fetch_budget=0,
        cursors=tuple(None for _ in range(program.n_threads)),
        fetched=fetched,
        committed=committed,
        co=co,
        rf=rf,
    )


def _interleavings(seqs):
    seqs = [s for s in seqs if s]
    if not seqs:
        yield ()
        return
    for i, seq in enumerate(seqs):
        head, rest = seq[0], seqs[:i] + [seq[1:]] + seqs[i + 1 :]
        for tail in _interleavings(rest):
            yield (head,) + tail


def enumerate_axiomatic(
    program: Program,
    fetch_budget: int = 1000,
    node_ceiling: int = DEFAULT_NODE_CEILING,
) -> TraceSet:
    """Enumerate candidate complete traces and filter by the POWER model."""
    ts = TraceSet(program)
    inits = init_events(program)
    paths = [
        _control_paths(program, tid, fetch_budget)
        for tid in range(program.n_threads)
    ]
    checked = 0

    for combo in itertools.product(*paths):
        fetched = tuple(
            tuple(make_event(program, tid, i, label) for i, label in enumerate(path))
            for tid, path in enumerate(combo)
        )
        events = [e for thread in fetched for e in thread]
        loads = sorted(e for e in events if e.kind is Kind.LOAD)
        stores = [e for e in events if e.kind is Kind.STORE]
        locals_committed = frozenset(
            e for e in events if e.kind is not Kind.LOAD
        ) | frozenset(inits)
        sources = list(inits) + stores

        def branch_outcomes_hold(view) -> bool:
            # a decided branch value must match the path actually taken
            for tid, thread in enumerate(view.fetched):
                for i, e in enumerate(thread):
                    if e.kind is not Kind.BRANCH:
                        continue
                    instr = program.instruction(e.label)
                    v = value_of(view, e, instr.cond)
                    if v is None:
                        continue
                    nxt = thread[i + 1].label if i + 1 < len(thread) else None
                    _, pos = program.location(e.label)
                    instrs = program.threads[tid].instrs
                    fall = instrs[pos + 1][0] if pos + 1 < len(instrs) else None
                    expected = instr.target if v != 0 else fall
                    if nxt != expected:
                        return False
            return True

        def finalize(rf: dict) -> None:
            nonlocal checked
            committed = frozenset(events) | frozenset(inits)
            probe = _candidate_state(
                program, fetched, committed, rf, tuple((e,) for e in inits)
            )
            by_addr: dict[int, list] = {a: [] for _, a, _ in program.inits}
            for thread in fetched:
                for e in thread:
                    if e.kind is not Kind.STORE:
                        continue
                    a = addr_of(probe, e)
                    if a is None or a not in by_addr:
                        return  # undefined or out-of-range address
                    by_addr[a].append(e)
            per_addr_orders = []
            for _, a, _ in program.inits:
                threads_stores: dict[int, list] = {}
                for e in by_addr[a]:
                    threads_stores.setdefault(e.tid, []).append(e)
                per_addr_orders.append(
                    [
                        (inits[a],) + order
                        for order in _interleavings(list(threads_stores.values()))
                    ]
                )
            for co in itertools.product(*per_addr_orders):
                checked += 1
                if checked > node_ceiling:
                    raise NodeCeilingExceeded(node_ceiling)
                state = _candidate_state(program, fetched, committed, rf, tuple(co))
                trace = exec_of(state)
                if not is_complete_trace(program, trace):
                    continue
                if check_power(trace, dep_bundle(state), program).allowed:
                    ts.add(trace)

        def assign(i: int, rf: dict, committed: frozenset) -> None:
            view = _candidate_state(
                program, fetched, committed, rf, tuple((e,) for e in inits)
            )
            if not branch_outcomes_hold(view):
                return
            if i == len(loads):
                finalize(rf)
                return
            r = loads[i]
            addr_r = addr_of(view, r)
            for w in sources:
                if not w.is_init and w.tid == r.tid and w.index > r.index:
                    continue  # same-thread po-later source always violates SC/loc
                addr_w = addr_of(view, w)
                if addr_r is not None and addr_w is not None and addr_r != addr_w:
                    continue
                rf2 = dict(rf)
                rf2[r] = w
                assign(i + 1, rf2, committed | {r})

        assign(0, {}, locals_committed)
    return ts


# --- trace set comparison ----------------------------------------------------


@dataclass(frozen=True)
class Diff:
    only_in_left: tuple[str, ...]
    only_in_right: tuple[str, ...]

    @property
    def empty(self) -> bool:
        return not self.only_in_left and not self.only_in_right

    def render(self) -> str:
        if self.empty:
            return "diff: empty"
        lines = [
            f"diff: only-in-left={len(self.only_in_left)} "
            f"only-in-right={len(self.only_in_right)}"
        ]
        if self.only_in_left:
            lines.append("only-in-left:")
            lines.extend("  " + l for l in self.only_in_left[0].splitlines())
        if self.only_in_right:
            lines.append("only-in-right:")
            lines.extend("  " + l for l in self.only_in_right[0].splitlines())
        return "\n".join(lines)


def diff(a: TraceSet, b: TraceSet) -> Diff:
    """Symmetric difference of two trace sets (by canonical serialization)."""
    return Diff(
        tuple(sorted(a.keys() - b.keys())),
        tuple(sorted(b.keys() - a.keys())),
    )
