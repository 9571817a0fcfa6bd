"""Command-line front end.

    rsmc check FILE [--mode rsmc|oracle|axiomatic] [--cb power|cb0] ...
    rsmc diff FILE [--cb power|cb0] [--fetch-budget N]

``check`` explores the program and prints a summary line
``traces=<n> blocked=<b>``, the exists-clause verdict when the program has
one, canonical trace blocks under --dump-traces, and a machine-readable
stats line under --stats.  ``diff`` runs both the RSMC explorer and the
run-DFS oracle and reports their trace-set difference.

Exit codes: 0 completed (postcondition unwitnessed or absent), 1
postcondition witnessed, 2 usage or parse error, 3 fetch budget or node
ceiling exceeded, 4 internal invariant violation (deadlock-freedom
assertion or rsmc/oracle mismatch).
"""

from __future__ import annotations

import argparse
import sys
import time

from .execution import (
    BudgetExceeded,
    CbKind,
    DeadlockFreedomViolation,
    condition_holds_trace,
)
from .explore import Stats, model_check
from .lang import ParseError, parse_program
from .oracle import NodeCeilingExceeded, diff, enumerate_axiomatic, enumerate_traces
from .trace import format_run

__all__ = ["main", "render_report"]

EXIT_OK = 0
EXIT_WITNESSED = 1
EXIT_USAGE = 2
EXIT_BUDGET = 3
EXIT_INVARIANT = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rsmc",
        description="Explore the POWER-allowed traces of a litmus-style program.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("input", help="program file")
        p.add_argument(
            "--cb",
            choices=["power", "cb0"],
            default="power",
            help="commit-before order (default: power)",
        )
        p.add_argument(
            "--fetch-budget",
            type=int,
            default=1000,
            metavar="N",
            help="per-thread fetched-event cap (default: 1000)",
        )

    check = sub.add_parser("check", help="explore one program")
    common(check)
    check.add_argument(
        "--mode",
        choices=["rsmc", "oracle", "axiomatic"],
        default="rsmc",
        help="exploration engine (default: rsmc)",
    )
    check.add_argument("--dump-traces", action="store_true", help="print canonical traces")
    check.add_argument("--stats", action="store_true", help="print exploration statistics")
    check.add_argument(
        "--check-invariants",
        action="store_true",
        help="assert deadlock freedom at every exploration node",
    )

    d = sub.add_parser("diff", help="compare rsmc against the run-DFS oracle")
    common(d)
    return parser


def render_report(
    traces,
    stats: Stats,
    verdicts,
    *,
    dump_traces: bool = False,
    show_stats: bool = False,
    time_ms: float | None = None,
) -> str:
    """Deterministic, sorted report text suitable for golden-file testing."""
    lines = [f"traces={len(traces)} blocked={stats.blocked_runs}"]
    for verdict in verdicts:
        lines.append(verdict)
    if dump_traces:
        for key in sorted(traces.keys()):
            lines.append("")
            lines.append(key)
    if show_stats:
        lines.append(stats.summary(time_ms))
    return "\n".join(lines)


def _check(args) -> int:
    program = parse_program(_read(args.input))
    kind = CbKind.POWER if args.cb == "power" else CbKind.CB0
    started = time.perf_counter()
    witnessed_run = None
    if args.mode == "rsmc":
        traces, stats, violations = model_check(
            program,
            kind,
            args.fetch_budget,
            check_deadlock_freedom=args.check_invariants,
        )
        if violations:
            witnessed_run = violations[0][1]
    else:
        stats = Stats()
        if args.mode == "oracle":
            traces = enumerate_traces(program, kind, args.fetch_budget, stats=stats)
        else:
            traces = enumerate_axiomatic(program, args.fetch_budget)
        violations = []
        if program.postcondition is not None:
            violations = [
                (t, None)
                for t in traces.traces()
                if condition_holds_trace(program, t, program.postcondition)
            ]
    elapsed_ms = (time.perf_counter() - started) * 1000

    verdicts = []
    if program.postcondition is not None:
        if violations:
            verdicts.append("exists: witnessed")
            if witnessed_run is not None:
                verdicts.extend(format_run(witnessed_run).splitlines())
        else:
            verdicts.append("exists: unwitnessed")

    print(
        render_report(
            traces,
            stats,
            verdicts,
            dump_traces=args.dump_traces,
            show_stats=args.stats,
            time_ms=elapsed_ms if args.stats else None,
        )
    )
    if violations:
        return EXIT_WITNESSED
    if stats.budget_hits:
        return EXIT_BUDGET
    return EXIT_OK


def _diff(args) -> int:
    program = parse_program(_read(args.input))
    kind = CbKind.POWER if args.cb == "power" else CbKind.CB0
    left, _, _ = model_check(program, kind, args.fetch_budget)
    right = enumerate_traces(program, kind, args.fetch_budget)
    report = diff(left, right)
    print(report.render())
    return EXIT_OK if report.empty else EXIT_INVARIANT


def _read(path: str) -> str:
    with open(path, "r", encoding="utf-8") as handle:
        return handle.read()


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "check":
            return _check(args)
        return _diff(args)
    except (OSError, ParseError) as exc:
        print(f"rsmc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BudgetExceeded, NodeCeilingExceeded) as exc:
        print(f"rsmc: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except DeadlockFreedomViolation as exc:
        print(f"rsmc: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
