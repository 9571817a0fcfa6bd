from __future__ import annotations

import random

import pytest

from conftest import iter_reachable_states, load, run_of
from rsmc.axiomatic import (
    Axiom,
    acyclic,
    check_power,
    compose,
    derive_relations,
    find_cycle,
    irreflexive_composition,
    transitive_closure,
)
from rsmc.execution import (
    CbKind,
    State,
    exec_of,
    find_event,
    flb_closure,
    initial_state,
    replay,
)
from rsmc.trace import DepBundle, dep_bundle, init_events, make_event


def straightline_state(program, co_chains, rf_pairs):
    """A hand-built complete state for a branch-free program.

    co_chains maps variable name to the store labels in coherence order;
    rf_pairs maps load label to source label (or "init(x)")."""
    inits = init_events(program)
    fetched = tuple(
        tuple(make_event(program, t, i, label) for i, (label, _) in enumerate(th.instrs))
        for t, th in enumerate(program.threads)
    )
    by_label = {e.label: e for th in fetched for e in th}
    by_label.update({e.label: e for e in inits})
    co = []
    for name, addr, _ in program.inits:
        chain = (inits[addr],) + tuple(by_label[l] for l in co_chains.get(name, ()))
        co.append(chain)
    rf = {by_label[r]: by_label[w] for r, w in rf_pairs.items()}
    committed = frozenset(e for th in fetched for e in th) | frozenset(inits)
    return State(
        program, CbKind.POWER, 0, tuple(None for _ in program.threads),
        fetched, committed, tuple(co), rf,
    )


LB_RUN = (("L3", 0), ("L0", "L3"), ("L1", 0), ("L2", "L1"))


def test_lb_data_relaxed_outcome_is_allowed(lb_data):
    base = flb_closure(initial_state(lb_data))
    state = replay(lb_data, run_of(base, LB_RUN))
    trace, deps = exec_of(state), dep_bundle(state)
    verdict = check_power(trace, deps, lb_data)
    assert verdict.allowed and not verdict.violated_axioms
    assert verdict.render() == "ALLOWED"

    rels = derive_relations(trace, deps)
    l0, l1, l2, l3 = (find_event(state, f"L{i}") for i in range(4))
    assert (l1, l2) in rels.rfe and (l3, l0) in rels.rfe
    assert (l0, l1) in rels.ppo
    assert (l2, l3) not in rels.ppo  # the relaxation POWER permits


def test_single_thread_has_no_external_edges():
    program = load("straight_line")
    base = flb_closure(initial_state(program))
    run = run_of(base, (("L1", 0), ("L2", "L1")))
    state = replay(program, run)
    rels = derive_relations(exec_of(state), dep_bundle(state))
    assert rels.rfe == frozenset()
    assert rels.fre == frozenset()
    assert rels.coe == frozenset()
    assert check_power(exec_of(state), dep_bundle(state), program).allowed


def test_sync_between_load_and_store_forbids_lb_outcome(lb_data_sync):
    state = straightline_state(
        lb_data_sync,
        co_chains={"x": ("L3",), "y": ("L1",)},
        rf_pairs={"L0": "L3", "L2": "L1"},
    )
    verdict = check_power(exec_of(state), dep_bundle(state), lb_data_sync)
    assert not verdict.allowed
    assert Axiom.NO_THIN_AIR in verdict.violated_axioms
    assert verdict.witness_cycle is not None
    assert verdict.render().startswith("FORBIDDEN ")


def test_rf_to_different_address_is_internally_inconsistent(lb_data):
    state = straightline_state(
        lb_data,
        co_chains={"x": ("L3",), "y": ("L1",)},
        rf_pairs={"L0": "L1", "L2": "L1"},  # L0 loads x but reads a y store
    )
    verdict = check_power(exec_of(state), dep_bundle(state), lb_data)
    assert not verdict.allowed
    assert verdict.violated_axioms == (Axiom.INTERNAL,)


def test_dekker_block_every_completion_is_forbidden(dekker_block):
    # completing the blocked cb0 state of dekker_block.lit: any coherence
    # position for L1 closes a forbidden cycle (through co and prop; the
    # po-loc/com axiom too once L1 lands after L2)
    for pos, chain in enumerate(
        (("L1", "L2", "L3"), ("L2", "L1", "L3"), ("L2", "L3", "L1"))
    ):
        state = straightline_state(
            dekker_block,
            co_chains={"x": chain, "y": ("L5",)},
            rf_pairs={"L0": "L5"},
        )
        verdict = check_power(exec_of(state), dep_bundle(state), dekker_block)
        assert not verdict.allowed, f"position {pos} must be forbidden"
        if pos == 0:
            assert verdict.violated_axioms == (Axiom.PROPAGATION,)
        else:
            assert Axiom.SC_PER_LOCATION in verdict.violated_axioms
        rels = derive_relations(exec_of(state), dep_bundle(state))
        assert not acyclic(rels.co | rels.prop)


def test_acyclic_and_irreflexive_basics():
    assert acyclic(frozenset())
    a, b = object(), object()
    assert not acyclic(frozenset({(a, b), (b, a)}))
    assert acyclic(frozenset({(a, b)}))
    assert find_cycle(frozenset({(a, b)})) is None
    assert irreflexive_composition([])
    assert irreflexive_composition([frozenset({(a, b)}), frozenset({(b, b)})])
    assert not irreflexive_composition([frozenset({(a, b)}), frozenset({(b, a)})])


def test_compose_and_closure():
    r1 = frozenset({(1, 2), (2, 3)})
    assert compose(r1, r1) == frozenset({(1, 3)})
    assert transitive_closure(r1) == frozenset({(1, 2), (2, 3), (1, 3)})


def test_witness_cycle_is_minimal_and_deterministic(lb_data_sync):
    state = straightline_state(
        lb_data_sync,
        co_chains={"x": ("L3",), "y": ("L1",)},
        rf_pairs={"L0": "L3", "L2": "L1"},
    )
    v1 = check_power(exec_of(state), dep_bundle(state), lb_data_sync)
    v2 = check_power(exec_of(state), dep_bundle(state), lb_data_sync)
    assert v1.witness_cycle == v2.witness_cycle
    assert v1.witness_cycle[0] == v1.witness_cycle[-1]
    # the hb cycle visits the four memory accesses
    assert len(v1.witness_cycle) == 5


@pytest.mark.parametrize("name", ["lb_data", "mp_lwfence_ffence", "sb_syncs_min"])
def test_ppo_fences_hb_are_program_order_compatible(name):
    program = load(name)
    for state in iter_reachable_states(program, limit=40):
        trace = exec_of(state)
        rels = derive_relations(trace, dep_bundle(state))
        po = set(trace.po)
        assert rels.ppo <= po
        assert rels.fences <= po
        for a, b in rels.hb:
            if a.tid == b.tid:
                assert (a, b) in po


@pytest.mark.parametrize("name", ["lb_data", "mp_lwfence_ffence", "term_loop"])
def test_fixpoint_converges_within_square_rounds(name):
    program = load(name)
    budget = 20 if name == "term_loop" else 1000
    for state in iter_reachable_states(program, fetch_budget=budget, limit=40):
        trace = exec_of(state)
        rels = derive_relations(trace, dep_bundle(state))
        assert rels.fixpoint_rounds <= max(1, len(trace.events) ** 2)


def _augmented(deps: DepBundle, extra) -> DepBundle:
    return DepBundle(
        deps.addr_dep | extra,
        deps.data_dep | extra,
        deps.ctrl_dep | extra,
        deps.po_loc | extra,
        deps.ffence_dep | extra,
        deps.lwsync_dep | extra,
        deps.lwfence_dep | extra,
    )


def test_adding_edges_never_turns_forbidden_traces_allowed(dekker_block):
    rng = random.Random(7)
    state = straightline_state(
        dekker_block,
        co_chains={"x": ("L1", "L2", "L3"), "y": ("L5",)},
        rf_pairs={"L0": "L5"},
    )
    trace, deps = exec_of(state), dep_bundle(state)
    assert not check_power(trace, deps, dekker_block).allowed
    events = sorted(trace.events)
    for _ in range(25):
        extra = frozenset(
            (rng.choice(events), rng.choice(events)) for _ in range(rng.randrange(1, 4))
        )
        extra = frozenset((a, b) for a, b in extra if a != b)
        verdict = check_power(trace, _augmented(deps, extra), dekker_block)
        assert not verdict.allowed


def test_monotonicity_along_runs(lb_data, mp_fences):
    # M holds on every prefix of a reachable state's run: an extension being
    # allowed implies the restriction was allowed
    for program in (lb_data, mp_fences):
        from conftest import random_run_states

        for seed in range(6):
            states = random_run_states(program, seed=seed)
            for state in states:
                assert check_power(exec_of(state), dep_bundle(state), program).allowed
