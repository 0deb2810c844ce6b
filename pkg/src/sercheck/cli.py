"""Command-line front end: ``sercheck verify | generate | bench``."""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields

from .closure import build_order
from .history import HistoryParseError, InvalidHistory, load_history, serialize_history
from .oracle import OracleCapExceeded, is_serializable_bruteforce
from .verify import (
    EXIT_CODES,
    INVALID_HISTORY,
    NOT_SERIALIZABLE,
    SERIALIZABLE,
    Verdict,
    format_cycle,
    verify,
)
from .workload import ANOMALY_KINDS, PRESETS, GenParams, InjectionError, generate_serializable, inject_anomaly, preset

CONSTRAINT_COUNTERS = (
    "item_constraints_total",
    "item_constraints_after_avoidance",
    "item_constraints_after_pruning",
    "predicate_constraints",
    "predicate_constraints_after_pruning",
    "forced_edges",
)
GRAPH_COUNTERS = ("transactions", "known_edges", "closure_cells", "variables", "clauses")
RUN_COUNTERS = ("wall_seconds", "peak_rss_mb")
ORACLE_CAP = 10**6

BENCH_COLUMNS = (
    "preset", "txns", "seed", "status", "wall_seconds", "closure_cells", "n_squared",
    "item_constraints_total", "item_constraints_after_pruning", "peak_rss_mb",
)


# -- reporting ------------------------------------------------------------------


def _anomaly_fields(v: Verdict) -> list[tuple[str, object]]:
    a = v.anomaly
    if a is None:
        return []
    out: list[tuple[str, object]] = [("anomaly.kind", a.kind)]
    for i, cyc in enumerate(a.cycles):
        out.append((f"anomaly.cycle.{i}", format_cycle(cyc)))
    for i, r in enumerate(a.reads):
        out.append((f"anomaly.read.{i}", f"t{r.reader} reads {r.key}:{r.vid} of t{r.writer}"))
    if a.unknown_read is not None:
        ur = a.unknown_read
        out.append(("anomaly.unknown_read", f"t{ur.txn} op {ur.op_index} {ur.pred} on {ur.key}"))
    return out


def _report_fields(v: Verdict, args, oracle: dict | None) -> list[tuple[str, object]]:
    out: list[tuple[str, object]] = [("status", v.status), ("exit_code", v.exit_code)]
    out += _anomaly_fields(v)
    for i, msg in enumerate(v.violations):
        out.append((f"violation.{i}", msg))
    if args.stats:
        for k in GRAPH_COUNTERS + CONSTRAINT_COUNTERS + RUN_COUNTERS:
            if k in v.stats:
                out.append((f"stats.{k}", v.stats[k]))
    if args.solver_stats and v.stats.get("solver"):
        for k, val in v.stats["solver"].items():
            out.append((f"solver.{k}", val))
    if oracle is not None:
        out += [(f"oracle.{k}", val) for k, val in oracle.items()]
    return out


def _print_text(v: Verdict, fields_: list[tuple[str, object]], out) -> None:
    a = v.anomaly
    print(v.status if a is None else f"{v.status}: {a.kind}", file=out)
    for key, val in fields_:
        if key in ("status", "exit_code", "anomaly.kind"):
            continue
        if key.startswith("anomaly.") or key.startswith("violation."):
            print(f"  {val}", file=out)
        else:
            print(f"  {key} = {val}", file=out)


def _print_machine(fields_: list[tuple[str, object]], out) -> None:
    for key, val in fields_:
        print(f"{key}={val}", file=out)


# -- commands -------------------------------------------------------------------


def _run_oracle(h, use_time: bool, verdict: Verdict) -> dict:
    try:
        o = is_serializable_bruteforce(h, cap=ORACLE_CAP, real_time=use_time)
    except OracleCapExceeded as exc:
        return {"verdict": "SKIPPED", "reason": str(exc)}
    status = SERIALIZABLE if o.serializable else NOT_SERIALIZABLE
    agrees = verdict.status == status if verdict.status != INVALID_HISTORY else None
    return {"verdict": status, "complete_histories": o.total, "checked": o.checked, "agrees": agrees}


def cmd_verify(args) -> int:
    try:
        h = load_history(args.path)
    except (OSError, HistoryParseError, InvalidHistory) as exc:
        print(f"{INVALID_HISTORY}: {exc}", file=sys.stderr)
        if args.report == "machine":
            print(f"status={INVALID_HISTORY}\nexit_code={EXIT_CODES[INVALID_HISTORY]}")
        return EXIT_CODES[INVALID_HISTORY]
    use_time = not args.no_time_edges
    v = verify(h, use_time=use_time, pruning=not args.no_pruning, budget=args.budget)
    oracle = _run_oracle(h, use_time, v) if args.oracle else None
    if args.dump_graph:
        with open(args.dump_graph, "w") as f:
            if v.graph is not None:
                f.write(v.graph.to_dot())
            else:
                f.write("digraph known {\n}\n")
    fields_ = _report_fields(v, args, oracle)
    if args.report == "machine":
        _print_machine(fields_, sys.stdout)
    else:
        _print_text(v, fields_, sys.stdout)
    return v.exit_code


def _params_from_args(args) -> GenParams:
    overrides = {}
    for f in fields(GenParams):
        val = getattr(args, f.name, None)
        if val is not None:
            overrides[f.name] = val
    if args.txns is not None:
        overrides["txn_count"] = args.txns
    if args.preset:
        return preset(args.preset, **overrides)
    p = GenParams(**overrides)
    p.validate()
    return p


def cmd_generate(args) -> int:
    try:
        p = _params_from_args(args)
        h = generate_serializable(p)
        if args.inject:
            h = inject_anomaly(h, args.inject, seed=p.seed, control=args.control)
    except (ValueError, InjectionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    text = serialize_history(h)
    if args.out and args.out != "-":
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


def bench_row(name: str, txns: int, seed: int, use_time: bool = True) -> dict:
    h = generate_serializable(preset(name, txn_count=txns, seed=seed))
    v = verify(h, use_time=use_time)
    n = len(build_order(h, use_time).ids)
    row = {"preset": name, "txns": txns, "seed": seed, "status": v.status, "n_squared": n * n}
    for k in BENCH_COLUMNS:
        if k not in row:
            row[k] = v.stats.get(k, "")
    return row


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    jobs = [(args.preset, n, args.seed, not args.no_time_edges) for n in sizes]
    print("\t".join(BENCH_COLUMNS))
    if args.jobs > 1:
        # one process per size keeps memory figures isolated
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            rows = list(ex.map(bench_row, *zip(*jobs)))
    else:
        rows = [bench_row(*j) for j in jobs]
    for row in rows:
        print("\t".join(str(row[c]) for c in BENCH_COLUMNS))
        sys.stdout.flush()
    return 0


# -- argument parsing -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sercheck", description="Black-box serializability checker.")
    sub = ap.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="check a history file")
    v.add_argument("path")
    v.add_argument("--no-time-edges", action="store_true", help="ignore client timestamps")
    v.add_argument("--no-pruning", action="store_true", help="skip constraint reduction")
    v.add_argument("--oracle", action="store_true", help="also run the exhaustive checker")
    v.add_argument("--stats", action="store_true", help="print graph and constraint counters")
    v.add_argument("--solver-stats", action="store_true", help="print solver counters")
    v.add_argument("--dump-graph", metavar="FILE", help="write the known graph as DOT")
    v.add_argument("--budget", type=int, metavar="CONFLICTS", help="solver conflict budget")
    v.add_argument("--report", choices=("text", "machine"), default="text")
    v.set_defaults(func=cmd_verify)

    g = sub.add_parser("generate", help="write a synthetic history")
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--txns", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--objects", dest="object_count", type=int)
    g.add_argument("--tables", dest="table_count", type=int)
    g.add_argument("--sessions", dest="session_count", type=int)
    g.add_argument("--ops", dest="ops_per_txn", type=int)
    g.add_argument("--read-ratio", type=float)
    g.add_argument("--write-ratio", type=float)
    g.add_argument("--pred-read-ratio", type=float)
    g.add_argument("--pred-write-ratio", type=float)
    g.add_argument("--overlap", dest="overlap_factor", type=float)
    g.add_argument("--abort-ratio", type=float)
    g.add_argument("--inject", choices=ANOMALY_KINDS)
    g.add_argument("--control", action="store_true", help="inject the serializable variant")
    g.add_argument("-o", "--out", help="output file (default stdout)")
    g.set_defaults(func=cmd_generate)

    b = sub.add_parser("bench", help="time verification across sizes")
    b.add_argument("--preset", default="blindw-wr", choices=sorted(PRESETS))
    b.add_argument("--sizes", default="1000,5000,10000")
    b.add_argument("--seed", type=int, default=1)
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--no-time-edges", action="store_true")
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
