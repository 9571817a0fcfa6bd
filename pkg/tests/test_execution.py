from __future__ import annotations

import random

import pytest

from conftest import iter_reachable_states, load, random_run_states, run_of
from rsmc.axiomatic import acyclic, check_power
from rsmc.execution import (
    BudgetExceeded,
    CbKind,
    NotEnabled,
    StepBlocked,
    allowed_params,
    commit_candidates,
    compute_cb,
    condition_holds,
    enabled_events,
    exec_of,
    final_memory_value,
    final_register_value,
    find_event,
    flb_closure,
    initial_state,
    is_cb_extension,
    is_complete_state,
    replay,
)
from rsmc.lang import parse_program
from rsmc.trace import dep_bundle

LB_RUN = (("L3", 0), ("L0", "L3"), ("L1", 0), ("L2", "L1"))
DEKKER_RUN = (("L3", 0), ("L5", 0), ("L0", "L5"), ("L2", 0))


def test_initial_state_lb(lb_data):
    state = initial_state(lb_data)
    assert len(state.committed) == 2
    assert all(e.is_init for e in state.committed)
    assert state.fetched == ((), ())
    assert state.co == tuple((e,) for e in sorted(state.committed, key=lambda e: e.index))
    assert state.rf == {}
    assert state.cursors == ("L0", "L2")


def test_initial_state_single_global():
    program = parse_program("x = 5\nthread P:\nL0: r0 := x;\n")
    state = initial_state(program)
    assert len(state.committed) == 1


def test_initial_state_sb10w_has_three_inits():
    state = initial_state(load("sb10w_syncs"))
    assert len(state.committed) == 3


def test_flb_closure_lb_fetches_everything_commits_nothing(lb_data):
    state = flb_closure(initial_state(lb_data))
    assert [e.label for e in state.fetched[0]] == ["L0", "L1"]
    assert [e.label for e in state.fetched[1]] == ["L2", "L3"]
    assert all(e.is_init for e in state.committed)  # no local instructions
    assert flb_closure(state) == state  # closed state is a fixpoint


def test_flb_closure_blocks_at_uncommitted_branch(term_loop):
    state = flb_closure(initial_state(term_loop))
    assert [e.label for e in state.fetched[0]] == ["L0", "L1"]
    assert state.cursors[0] == "L2"  # cursor advanced, fetch blocked
    assert [e.label for e in state.fetched[1]] == ["L3", "L4", "L5"]


def test_flb_closure_budget_exceeded():
    program = parse_program("x = 0\nthread P:\nL0: x := 1;\nL1: x := 2;\n")
    with pytest.raises(BudgetExceeded) as err:
        flb_closure(initial_state(program, fetch_budget=1))
    assert err.value.tid == 0


def test_compute_cb_dekker(dekker_block):
    state = flb_closure(initial_state(dekker_block))
    l0, l1, l2 = (find_event(state, f"L{i}") for i in range(3))
    cb0 = compute_cb(state, CbKind.CB0)
    power = compute_cb(state, CbKind.POWER)
    assert (l0, l1) in cb0  # data dependency
    assert (l1, l2) not in cb0
    assert (l1, l2) in power  # po-loc
    assert cb0 <= power


def test_compute_cb_empty_without_deps(rww):
    state = flb_closure(initial_state(rww))
    assert compute_cb(state, CbKind.CB0) == frozenset()


def test_compute_cb_includes_rf(lb_data):
    base = flb_closure(initial_state(lb_data))
    state = replay(lb_data, run_of(base, (("L3", 0), ("L0", "L3"))))
    l0, l3 = find_event(state, "L0"), find_event(state, "L3")
    assert (l3, l0) in compute_cb(state, CbKind.CB0)


def test_enabled_events_lb(lb_data):
    state = flb_closure(initial_state(lb_data))
    labels = {e.label for e in enabled_events(state)}
    assert labels == {"L0", "L2", "L3"}  # L1 blocked by its data dependency


def test_enabled_events_complete_state_empty(lb_data):
    base = flb_closure(initial_state(lb_data))
    state = replay(lb_data, run_of(base, LB_RUN))
    assert enabled_events(state) == frozenset()


def test_dekker_blocked_state_l1_enabled_no_candidates(dekker_block):
    base = flb_closure(initial_state(dekker_block, cb_kind=CbKind.CB0))
    state = replay(dekker_block, run_of(base, DEKKER_RUN), CbKind.CB0)
    l1 = find_event(state, "L1")
    assert l1 in enabled_events(state, CbKind.CB0)
    assert allowed_params(state, l1, CbKind.CB0) == []
    assert commit_candidates(state, l1, CbKind.CB0) == []


def test_commit_candidates_lb_walkthrough(lb_data):
    state = flb_closure(initial_state(lb_data))
    l3 = find_event(state, "L3")
    first = commit_candidates(state, l3)
    assert [p for p, _ in first] == [0]  # sole coherence position for x

    state = first[0][1]
    l0 = find_event(state, "L0")
    params = [p for p, _ in commit_candidates(state, l0)]
    assert params[0].is_init and params[1].label == "L3"  # init first, then co order

    read_l3 = dict(commit_candidates(state, l0))[params[1]]
    assert final_register_value(read_l3, 0, "r0") == 1


def test_commit_candidates_requires_enabled(lb_data):
    state = flb_closure(initial_state(lb_data))
    l1 = find_event(state, "L1")
    with pytest.raises(NotEnabled):
        commit_candidates(state, l1)


def test_replay_lb_run_reaches_the_relaxed_trace(lb_data):
    base = flb_closure(initial_state(lb_data))
    state = replay(lb_data, run_of(base, LB_RUN))
    assert is_complete_state(lb_data, state)
    l0, l1, l2, l3 = (find_event(state, f"L{i}") for i in range(4))
    assert state.rf == {l0: l3, l2: l1}
    assert final_register_value(state, 0, "r0") == 1
    assert final_register_value(state, 1, "r1") == 2
    assert final_memory_value(state, 0) == 1
    assert final_memory_value(state, 1) == 2


def test_replay_empty_run_is_the_closed_initial_state(lb_data):
    assert replay(lb_data, ()) == flb_closure(initial_state(lb_data))


def test_replay_blocked_step_reports_index(dekker_block):
    base = flb_closure(initial_state(dekker_block, cb_kind=CbKind.CB0))
    for position in (0, 1, 2):
        run = run_of(base, DEKKER_RUN + (("L1", position),))
        with pytest.raises(StepBlocked) as err:
            replay(dekker_block, run, CbKind.CB0)
        assert err.value.index == 4


def test_is_complete_state(lb_data, dekker_block):
    base = flb_closure(initial_state(lb_data))
    assert not is_complete_state(lb_data, base)
    assert is_complete_state(lb_data, replay(lb_data, run_of(base, LB_RUN)))
    dbase = flb_closure(initial_state(dekker_block, cb_kind=CbKind.CB0))
    blocked = replay(dekker_block, run_of(dbase, DEKKER_RUN), CbKind.CB0)
    assert not is_complete_state(dekker_block, blocked)


def test_cb_extension_reflexive_and_along_runs(lb_data):
    base = flb_closure(initial_state(lb_data))
    complete = replay(lb_data, run_of(base, LB_RUN))
    assert is_cb_extension(base, base)
    assert is_cb_extension(complete, complete)
    assert is_cb_extension(base, complete)
    assert not is_cb_extension(complete, base)
    prefix = replay(lb_data, run_of(base, LB_RUN[:2]))
    assert is_cb_extension(prefix, complete)


def test_cb_extension_rejects_conflicting_coherence(rww):
    state = flb_closure(initial_state(rww))
    l1 = find_event(state, "L1")
    after_l1 = dict(commit_candidates(state, l1))[0]
    l2 = find_event(after_l1, "L2")
    first, second = (s for _, s in commit_candidates(after_l1, l2))
    assert not is_cb_extension(first, second)
    assert not is_cb_extension(second, first)


def test_every_committed_candidate_passes_the_full_model_check(lb_data, mp_fences):
    # the rule guard M(exec sigma') re-checked post hoc, including internal
    # consistency against the program
    for program in (lb_data, mp_fences):
        for state in iter_reachable_states(program, limit=40):
            verdict = check_power(exec_of(state), dep_bundle(state), program)
            assert verdict.allowed


@pytest.mark.parametrize(
    "name,budget",
    [("lb_data", 1000), ("mp_lwfence_ffence", 1000), ("rww", 1000), ("term_loop", 20)],
)
def test_cbpower_is_valid_on_reachable_states(name, budget):
    # Validity: cb acyclic and cb0 contained in cbpower wherever M holds
    program = load(name)
    for state in iter_reachable_states(program, fetch_budget=budget, limit=80):
        power = compute_cb(state, CbKind.POWER)
        assert acyclic(power)
        assert compute_cb(state, CbKind.CB0) <= power


def test_flb_confluence_randomized_orders(lb_data, term_loop, mp_fences):
    for program, budget in ((lb_data, 1000), (term_loop, 20), (mp_fences, 1000)):
        reference = flb_closure(initial_state(program, budget))
        for seed in range(30):
            rng = random.Random(seed)
            assert flb_closure(initial_state(program, budget), rule_rng=rng) == reference


def test_flb_confluence_mid_run(lb_data):
    for seed in range(5):
        for state in random_run_states(lb_data, seed=seed):
            for retry in range(5):
                rng = random.Random(retry)
                assert flb_closure(state, rule_rng=rng) == state


def test_weakened_lwsync_toggle_stays_sound(mp_fences, monkeypatch):
    import rsmc.execution as execution
    from rsmc.explore import model_check
    from rsmc.oracle import enumerate_traces

    monkeypatch.setattr(execution, "CB_POWER_WEAKENED_LWSYNC", True)
    traces, stats, _ = model_check(mp_fences, CbKind.POWER)
    oracle = enumerate_traces(mp_fences, CbKind.POWER)
    assert len(traces) == 3
    assert traces.same_traces(oracle)
    state = flb_closure(initial_state(mp_fences))
    l0, l2 = find_event(state, "L0"), find_event(state, "L2")
    assert (l0, l2) in compute_cb(state, CbKind.POWER)  # store->store survives


def test_postcondition_evaluation(lb_data):
    program = load("lb_data_exists")
    base = flb_closure(initial_state(program))
    state = replay(program, run_of(base, LB_RUN))
    assert condition_holds(state, program.postcondition)
    other = replay(program, run_of(base, (("L3", 0), ("L0", "init(x)"), ("L1", 0), ("L2", "L1"))))
    assert not condition_holds(other, program.postcondition)
