from __future__ import annotations

import random
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from rsmc.execution import (
    BudgetExceeded,
    CbKind,
    allowed_params,
    enabled_events,
    find_event,
    flb_closure,
    initial_state,
)
from rsmc.lang import parse_program
from rsmc.trace import ParamEvent

CORPUS = Path(__file__).parent / "corpus"

settings.register_profile(
    "rsmc",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("rsmc")


def corpus_path(name: str) -> Path:
    return CORPUS / f"{name}.lit"


def load(name: str):
    return parse_program(corpus_path(name).read_text())


def sb_with_syncs(extra_stores: int) -> str:
    """The Dekker/SB idiom: 3-instruction core guarding some z stores."""
    lines = ["x = 0", "y = 0"]
    if extra_stores:
        lines.append("z = 0")
    for name, pre, reg, mine, other in (
        ("P", "L", "r0", "x", "y"),
        ("Q", "M", "r1", "y", "x"),
    ):
        lines.append(f"thread {name}:")
        lines.append(f"{pre}0: {mine} := 1;")
        lines.append(f"{pre}1: sync;")
        lines.append(f"{pre}2: {reg} := {other};")
        lines.append(f"{pre}3: if {reg} = 1 goto {pre}END;")
        for i in range(extra_stores):
            lines.append(f"{pre}Z{i}: z := 1;")
        lines.append(f"{pre}END: {reg} := 0;")
    return "\n".join(lines)


def run_of(state, steps):
    """Build a run from (label, param) pairs against a closed state.

    Parameters: an int is a coherence position, a label string names the
    rf-source event (first occurrence), "init(x)" the initializer.
    """
    out = []
    for label, param in steps:
        e = find_event(state, label)
        if isinstance(param, str):
            if param.startswith("init("):
                var = param[5:-1]
                addr = state.program._var_addr[var]
                param = state.co[addr][0]
            else:
                param = find_event(state, param)
        out.append(ParamEvent(e, param))
    return tuple(out)


def iter_reachable_states(program, kind=CbKind.POWER, fetch_budget=1000, limit=2000):
    """DFS over the run tree yielding every closed state (bounded)."""
    stack = [flb_closure(initial_state(program, fetch_budget, kind))]
    seen = 0
    while stack and seen < limit:
        state = stack.pop()
        seen += 1
        yield state
        for e in sorted(enabled_events(state, kind)):
            for _, committed in allowed_params(state, e, kind):
                try:
                    stack.append(flb_closure(committed))
                except BudgetExceeded:
                    pass


def random_run_states(program, kind=CbKind.POWER, seed=0, fetch_budget=1000):
    """States along one randomly chosen maximal run (including sigma0')."""
    rng = random.Random(seed)
    state = flb_closure(initial_state(program, fetch_budget, kind))
    states = [state]
    while True:
        enabled = sorted(enabled_events(state, kind))
        options = []
        for e in enabled:
            options.extend(allowed_params(state, e, kind))
        if not options:
            return states
        _, committed = options[rng.randrange(len(options))]
        try:
            state = flb_closure(committed)
        except BudgetExceeded:
            return states
        states.append(state)


_REGS = ("r0", "r1")
_VARS = ("x", "y")


@st.composite
def small_program_text(draw, max_threads=3, max_instrs=3):
    """Random tiny programs with forward branches only (no loops)."""
    n_threads = draw(st.integers(1, max_threads))
    lines = [f"{v} = 0" for v in _VARS]
    for t in range(n_threads):
        lines.append(f"thread T{t}:")
        n = draw(st.integers(1, max_instrs))
        labels = [f"I{t}_{i}" for i in range(n)]
        for i in range(n):
            kinds = ["load", "store", "storereg", "fence", "assign"]
            if i < n - 1:
                kinds.append("branch")
            kind = draw(st.sampled_from(kinds))
            var = draw(st.sampled_from(_VARS))
            reg = draw(st.sampled_from(_REGS))
            if kind == "load":
                instr = f"{reg} := {var}"
            elif kind == "store":
                instr = f"{var} := {draw(st.integers(0, 2))}"
            elif kind == "storereg":
                instr = f"{var} := {reg} + {draw(st.integers(0, 1))}"
            elif kind == "fence":
                instr = draw(st.sampled_from(["sync", "lwsync", "isync"]))
            elif kind == "assign":
                instr = f"{reg} := {draw(st.integers(0, 2))}"
            else:
                target = labels[draw(st.integers(i + 1, n - 1))]
                instr = f"if {reg} = {draw(st.integers(0, 1))} goto {target}"
            lines.append(f"{labels[i]}: {instr};")
    return "\n".join(lines)


@pytest.fixture(scope="session")
def lb_data():
    return load("lb_data")


@pytest.fixture(scope="session")
def lb_data_sync():
    return load("lb_data_sync")


@pytest.fixture(scope="session")
def mp_fences():
    return load("mp_lwfence_ffence")


@pytest.fixture(scope="session")
def rww():
    return load("rww")


@pytest.fixture(scope="session")
def dekker_block():
    return load("dekker_block")


@pytest.fixture(scope="session")
def term_loop():
    return load("term_loop")


@st.composite
def looping_program_text(draw):
    """Tiny two-thread programs where one thread may branch backwards."""
    lines = [f"{v} = 0" for v in _VARS]
    lines.append("thread T0:")
    n = draw(st.integers(2, 3))
    labels = [f"A{i}" for i in range(n)]
    back_from = draw(st.integers(1, n - 1))
    for i in range(n):
        if i == back_from:
            target = labels[draw(st.integers(0, i - 1))]
            reg = draw(st.sampled_from(_REGS))
            lines.append(f"{labels[i]}: if {reg} = 1 goto {target};")
        else:
            var = draw(st.sampled_from(_VARS))
            reg = draw(st.sampled_from(_REGS))
            kind = draw(st.sampled_from(["load", "store"]))
            if kind == "load":
                lines.append(f"{labels[i]}: {reg} := {var};")
            else:
                lines.append(f"{labels[i]}: {var} := {draw(st.integers(1, 2))};")
    lines.append("thread T1:")
    m = draw(st.integers(1, 2))
    for i in range(m):
        var = draw(st.sampled_from(_VARS))
        lines.append(f"B{i}: {var} := {draw(st.integers(1, 2))};")
    return "\n".join(lines)
