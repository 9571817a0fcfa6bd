"""Stateless model checking of litmus-style programs under POWER."""

from .axiomatic import Axiom, Verdict, acyclic, check_power, derive_relations
from .execution import (
    BudgetExceeded,
    CbKind,
    DeadlockFreedomViolation,
    NotEnabled,
    State,
    StepBlocked,
    commit_candidates,
    compute_cb,
    enabled_events,
    exec_of,
    flb_closure,
    initial_state,
    is_cb_extension,
    is_complete_state,
    replay,
)
from .explore import ExplorerBook, Stats, model_check
from .lang import ParseError, Program, next_label, address_of_var, parse_program, pretty_print
from .oracle import TraceSet, diff, enumerate_axiomatic, enumerate_traces
from .trace import (
    DepBundle,
    Event,
    Kind,
    ParamEvent,
    STAR,
    Trace,
    dep_bundle,
    is_complete_trace,
    serialize_trace,
    value_of,
    addr_of,
)

__version__ = "0.1.0"
