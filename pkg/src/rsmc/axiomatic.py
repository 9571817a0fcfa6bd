"""The axiomatic POWER memory model over traces.

A trace is allowed when it is internally consistent and satisfies the four
POWER axioms:

* SC PER LOCATION:  acyclic(po-loc | com)
* NO THIN AIR:      acyclic(hb)
* OBSERVATION:      irreflexive(fre; prop; hb*)
* PROPAGATION:      acyclic(co | prop)

where com = co | rf | fr and hb = ppo | fences | rfe.  The preserved
program order ppo is the least fixpoint of the ii/ci/ic/cc inclusion
system seeded with

    ii0 = dp | rdw | rfi          ci0 = ctrl+cfence | detour
    ic0 = {}                      cc0 = dp | po-loc | ctrl | (addr; po)

with ppo = (ii & RR) | (ic & RW), dp = addr | data, and the fence
relations ffence = sync pairs, lwfence = lwsync pairs minus store->load,
fences = ffence | lwfence.  Propagation uses

    prop-base = (rfe?; fences); hb*
    prop      = (prop-base & WW) | (com*; prop-base*; ffence; hb*)

See docs/memory_model.md for notes on how these relations are pinned.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .lang import Program
from .trace import (
    DepBundle,
    Event,
    Kind,
    Trace,
    TraceView,
    addr_of,
    instruction_of,
    value_of,
)

__all__ = [
    "Axiom",
    "DerivedRelations",
    "Verdict",
    "Rel",
    "compose",
    "transitive_closure",
    "acyclic",
    "find_cycle",
    "irreflexive_composition",
    "derive_relations",
    "axioms_hold",
    "check_power",
    "InconsistentTraceError",
]

Rel = frozenset  # relations are frozensets of (Event, Event) pairs


class Axiom(str, enum.Enum):
    INTERNAL = "InternalConsistency"
    SC_PER_LOCATION = "ScPerLocation"
    NO_THIN_AIR = "NoThinAir"
    OBSERVATION = "Observation"
    PROPAGATION = "Propagation"


class InconsistentTraceError(Exception):
    """Raised by derive_relations when rf or co is structurally malformed."""


# --- relation algebra -------------------------------------------------------


def _succ(rel) -> dict[Event, set[Event]]:
    out: dict[Event, set[Event]] = {}
    for a, b in rel:
        out.setdefault(a, set()).add(b)
    return out


def compose(r1, r2) -> frozenset:
    if not r1 or not r2:
        return frozenset()
    by_src = _succ(r2)
    return frozenset(
        (a, c) for a, b in r1 for c in by_src.get(b, ())
    )


def transitive_closure(rel) -> frozenset:
    if not rel:
        return frozenset()
    succ = _succ(rel)
    closed: set[tuple[Event, Event]] = set()
    for start in succ:
        seen: set[Event] = set()
        stack = list(succ[start])
        while stack:
            n = stack.pop()
            if n in seen:
                continue
            seen.add(n)
            stack.extend(succ.get(n, ()))
        closed.update((start, n) for n in seen)
    return frozenset(closed)


def acyclic(rel) -> bool:
    succ = _succ(rel)
    WHITE, GREY, BLACK = 0, 1, 2
    color: dict[Event, int] = {}
    for start in succ:
        if color.get(start, WHITE) is not WHITE:
            continue
        stack = [(start, iter(succ.get(start, ())))]
        color[start] = GREY
        while stack:
            node, it = stack[-1]
            advanced = False
            for n in it:
                c = color.get(n, WHITE)
                if c == GREY:
                    return False
                if c == WHITE:
                    color[n] = GREY
                    stack.append((n, iter(succ.get(n, ()))))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                stack.pop()
    return True


def find_cycle(rel) -> list[Event] | None:
    """A minimal-length cycle (BFS per node, smallest start wins ties)."""
    succ = _succ(rel)
    best: list[Event] | None = None
    for start in sorted(succ):
        # BFS back to start
        parents: dict[Event, Event] = {}
        frontier = [start]
        found = False
        while frontier and not found:
            nxt = []
            for n in frontier:
                for m in sorted(succ.get(n, ())):
                    if m == start:
                        parents[start] = n
                        found = True
                        break
                    if m not in parents:
                        parents[m] = n
                        nxt.append(m)
                if found:
                    break
            frontier = nxt
        if not found:
            continue
        path = [start]
        node = parents[start]
        while node != start:
            path.append(node)
            node = parents[node]
        path.append(start)
        path.reverse()
        if best is None or len(path) < len(best):
            best = path
    return best


def irreflexive_composition(rels: list) -> bool:
    """True iff no event x satisfies x ->rel1;...;relk x."""
    if not rels:
        return True
    nodes = {e for rel in rels for pair in rel for e in pair}
    reach: dict[Event, set[Event]] = {a: {a} for a in nodes}
    for rel in rels:
        succ = _succ(rel)
        reach = {
            a: {c for b in bs for c in succ.get(b, ())} for a, bs in reach.items()
        }
    return all(a not in bs for a, bs in reach.items())


def _restrict(rel, events) -> frozenset:
    return frozenset((a, b) for a, b in rel if a in events and b in events)


# --- derived relations ------------------------------------------------------


@dataclass(frozen=True)
class DerivedRelations:
    """All relations the POWER axioms are stated over, for one trace."""

    fr: frozenset
    fre: frozenset
    rfe: frozenset
    rfi: frozenset
    coe: frozenset
    com: frozenset
    fences: frozenset
    ffence: frozenset
    ppo: frozenset
    hb: frozenset
    prop_base: frozenset
    prop: frozenset
    po_loc: frozenset
    co: frozenset
    rf: frozenset
    fixpoint_rounds: int
    hb_plus: frozenset | None = None


def _external(rel) -> frozenset:
    # initializer events belong to no thread: edges touching them are
    # neither external nor internal (they can never close a cycle either
    # way, since nothing precedes an initializer)
    return frozenset(
        (a, b) for a, b in rel if a.tid != b.tid and not a.is_init and not b.is_init
    )


def _internal(rel) -> frozenset:
    return frozenset(
        (a, b) for a, b in rel if a.tid == b.tid and not a.is_init and not b.is_init
    )


def derive_relations(trace: Trace, deps: DepBundle) -> DerivedRelations:
    events = trace.events
    mem = frozenset(e for e in events if e.is_memory_access)
    loads = frozenset(e for e in mem if e.kind is Kind.LOAD)
    stores = mem - loads

    co = _restrict(trace.co, events)
    rf = _restrict(trace.rf, events)
    _check_structure(trace, co, rf, loads, stores)

    co_succ = _succ(co)
    fr = frozenset(
        (b, w2)
        for a, b in rf
        for w2 in co_succ.get(a, ())
    )
    rfe, rfi = _external(rf), _internal(rf)
    fre = _external(fr)
    coe = _external(co)
    com = co | rf | fr

    addr = frozenset((a, b) for a, b in deps.addr_dep if a in events and b in mem)
    data_all = _restrict(deps.data_dep, events)
    data = frozenset((a, b) for a, b in data_all if b in mem)
    ctrl = frozenset((a, b) for a, b in deps.ctrl_dep if a in events and b in mem)
    po_loc = _restrict(deps.po_loc, events)
    ffence = frozenset((a, b) for a, b in deps.ffence_dep if a in mem and b in mem)
    lwfence = frozenset((a, b) for a, b in deps.lwfence_dep if a in mem and b in mem)

    dp = addr | data
    addr_po = frozenset(
        (a, c) for a, b in addr for bb, c in trace.po if bb == b and c in mem
    )

    # ctrl+cfence: a load controlling a branch, with an isync between the
    # branch and the later access
    isyncs = [e for e in events if e.kind is Kind.ISYNC]
    branch_deps = {
        b: frozenset(a for a, bb in data_all if bb == b)
        for b in events
        if b.kind is Kind.BRANCH
    }
    cfence = set()
    for b, dep_loads in branch_deps.items():
        for i in isyncs:
            if not _po(b, i):
                continue
            for a, c in trace.po:
                if a == i and c in mem:
                    cfence.update((d, c) for d in dep_loads)
    cfence = frozenset(cfence)

    rdw = po_loc & compose(fre, rfe)
    detour = po_loc & compose(coe, rfe)

    ii0 = dp | rdw | rfi
    ci0 = cfence | detour
    cc0 = dp | po_loc | ctrl | addr_po

    ii, ci, ic, cc = ii0, ci0, frozenset(), cc0
    rounds = 0
    while True:
        rounds += 1
        nii = ii0 | ci | compose(ic, ci) | compose(ii, ii)
        nci = ci0 | compose(ci, ii) | compose(cc, ci)
        nic = ii | cc | compose(ic, cc) | compose(ii, ic)
        ncc = cc0 | ci | compose(ci, ic) | compose(cc, cc)
        if (nii, nci, nic, ncc) == (ii, ci, ic, cc):
            break
        ii, ci, ic, cc = nii, nci, nic, ncc

    ppo = frozenset(
        (a, b)
        for a, b in ii
        if a in loads and b in loads
    ) | frozenset((a, b) for a, b in ic if a in loads and b in stores)

    fences = ffence | lwfence
    hb = ppo | fences | rfe
    if fences:
        hb_plus = transitive_closure(hb)
        base = fences | compose(rfe, fences)
        prop_base = base | compose(base, hb_plus)
        if ffence:
            com_plus = transitive_closure(com)
            pb_plus = transitive_closure(prop_base)
            left = ffence | compose(pb_plus, ffence)
            left = left | compose(com_plus, left)
            second = left | compose(left, hb_plus)
        else:
            second = frozenset()
        prop = (
            frozenset((a, b) for a, b in prop_base if a in stores and b in stores)
            | second
        )
    else:
        # both prop-base constituents factor through a fence
        hb_plus = None
        prop_base = frozenset()
        prop = frozenset()

    return DerivedRelations(
        fr=fr,
        fre=fre,
        rfe=rfe,
        rfi=rfi,
        coe=coe,
        com=com,
        fences=fences,
        ffence=ffence,
        ppo=ppo,
        hb=hb,
        prop_base=prop_base,
        prop=prop,
        po_loc=po_loc,
        co=co,
        rf=rf,
        fixpoint_rounds=rounds,
        hb_plus=hb_plus,
    )


def _po(a: Event, b: Event) -> bool:
    return a.tid == b.tid and a.tid >= 0 and a.index < b.index


def _check_structure(trace, co, rf, loads, stores) -> None:
    by_load: dict[Event, Event] = {}
    for a, b in rf:
        if a not in stores or b not in loads:
            raise InconsistentTraceError(f"rf edge {a!r}->{b!r} is not store->load")
        if b in by_load:
            raise InconsistentTraceError(f"load {b!r} has two rf sources")
        by_load[b] = a
    for a, b in co:
        if a not in stores or b not in stores:
            raise InconsistentTraceError(f"co edge {a!r}->{b!r} is not store->store")
        if (b, a) in co:
            raise InconsistentTraceError(f"co contains both {a!r}<->{b!r}")
        if b.is_init:
            raise InconsistentTraceError(f"initializer {b!r} is not co-first")


# --- the model predicate ----------------------------------------------------


@dataclass(frozen=True)
class Verdict:
    allowed: bool
    violated_axioms: tuple[Axiom, ...]
    witness_cycle: tuple[Event, ...] | None = None

    def render(self) -> str:
        if self.allowed:
            return "ALLOWED"
        axiom = self.violated_axioms[0].value
        if self.witness_cycle:
            path = " -> ".join(repr(e) for e in self.witness_cycle)
            return f"FORBIDDEN {axiom}: {path}"
        return f"FORBIDDEN {axiom}"


def _internally_consistent(trace: Trace, program: Program | None, view=None) -> bool:
    if program is None:
        return True
    if view is None:
        view = TraceView(program, trace)
    stores_by_addr: dict[int, set[Event]] = {}
    for e in trace.events:
        if e.kind is not Kind.STORE:
            continue
        a = addr_of(view, e)
        if a is None:
            return False
        stores_by_addr.setdefault(a, set()).add(e)
    # co must totally order the stores of each address with init first
    expected = sum(len(g) * (len(g) - 1) // 2 for g in stores_by_addr.values())
    if len(trace.co) != expected:
        return False
    for x, y in trace.co:
        if addr_of(view, x) != addr_of(view, y) or y.is_init:
            return False
    rf_by_load = {b: a for a, b in trace.rf}
    for e in trace.events:
        if e.kind is not Kind.LOAD:
            continue
        src = rf_by_load.get(e)
        if src is None:
            return False
        ae = addr_of(view, e)
        if ae is None or addr_of(view, src) != ae:
            return False
        # the load's value is the store's value; it must be defined
        src_instr = instruction_of(program, src)
        if value_of(view, src, src_instr.value) is None:
            return False
    return True


def axioms_hold(trace: Trace, deps: DepBundle) -> bool:
    """The four POWER axioms alone, without the internal-consistency pass.

    Used as the rule guard on states the operational engine builds itself,
    where rf address agreement, value definedness and per-address coherence
    totality hold by construction.
    """
    rels = derive_relations(trace, deps)
    return (
        acyclic(rels.po_loc | rels.com)
        and acyclic(rels.hb)
        and _observation_holds(rels)
        and acyclic(rels.co | rels.prop)
    )


def check_power(
    trace: Trace,
    deps: DepBundle,
    program: Program | None = None,
    view=None,
) -> Verdict:
    """Decide whether a trace is allowed under POWER.

    The verdict encodes failures; no exception is raised for forbidden
    traces.  When the program is supplied, the internal-consistency check
    also verifies rf address agreement and value definedness; ``view`` may
    supply an existing state covering the trace to evaluate against.
    """
    try:
        rels = derive_relations(trace, deps)
    except InconsistentTraceError:
        return Verdict(False, (Axiom.INTERNAL,))
    if not _internally_consistent(trace, program, view):
        return Verdict(False, (Axiom.INTERNAL,))

    violated: list[Axiom] = []
    witness: tuple[Event, ...] | None = None

    def record(axiom: Axiom, rel) -> None:
        nonlocal witness
        violated.append(axiom)
        if witness is None:
            cycle = find_cycle(rel)
            if cycle:
                witness = tuple(cycle)

    sc_rel = rels.po_loc | rels.com
    if not acyclic(sc_rel):
        record(Axiom.SC_PER_LOCATION, sc_rel)
    if not acyclic(rels.hb):
        record(Axiom.NO_THIN_AIR, rels.hb)
    if not _observation_holds(rels):
        violated.append(Axiom.OBSERVATION)
        if witness is None:
            witness = _observation_witness(rels)
    prop_rel = rels.co | rels.prop
    if not acyclic(prop_rel):
        record(Axiom.PROPAGATION, prop_rel)

    return Verdict(not violated, tuple(violated), witness)


def _observation_holds(rels: DerivedRelations) -> bool:
    if not rels.prop or not rels.fre:
        return True
    hb_plus = rels.hb_plus if rels.hb_plus is not None else transitive_closure(rels.hb)
    prop_succ = _succ(rels.prop)
    for a, b in rels.fre:
        for c in prop_succ.get(b, ()):
            if c == a or (c, a) in hb_plus:
                return False
    return True


def _observation_witness(rels: DerivedRelations) -> tuple[Event, ...] | None:
    hb_plus = transitive_closure(rels.hb)
    for a, b in sorted(rels.fre):
        for bb, c in sorted(rels.prop):
            if bb != b:
                continue
            if c == a:
                return (a, b, a)
            if (c, a) in hb_plus:
                return (a, b, c, a)
    return None
