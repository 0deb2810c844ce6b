"""End-to-end verification pipeline and independent witness replay."""

from __future__ import annotations

import resource
import sys
import time
from dataclasses import asdict, dataclass, field

from .closure import CycleDetected, build_closure, build_order
from .constraints import (
    NoCompletion,
    gen_item_constraints,
    gen_predicate_constraints,
    potential_item_constraints,
    reduce,
)
from .deps import INIT, PRED_RW, PRED_WR, RW, TIME, WR, WW, DependencyLabel, Edge
from .graph import build_known_graph
from .history import (
    AbortedRead,
    InvalidHistory,
    ObservedHistory,
    UnknownRead,
    detect_read_anomalies,
    eval_predicate,
    item_reads,
    validate,
)
from .solver import SAT, UNKNOWN, check_model, encode, solve

SERIALIZABLE = "SERIALIZABLE"
NOT_SERIALIZABLE = "NOT_SERIALIZABLE"
INVALID_HISTORY = "INVALID_HISTORY"
INDETERMINATE = "INDETERMINATE"

EXIT_CODES = {SERIALIZABLE: 0, NOT_SERIALIZABLE: 1, INVALID_HISTORY: 2, INDETERMINATE: 3}

ABORTED_READ = "ABORTED_READ"
INTERMEDIATE_READ = "INTERMEDIATE_READ"
CYCLE = "CYCLE"
NO_COMPLETION = "NO_COMPLETION"


class SolverMismatch(AssertionError):
    """A SAT answer failed independent re-verification."""


@dataclass
class Anomaly:
    kind: str
    # cycles over transaction ids; each is a closed walk of labeled edges
    cycles: list[list[Edge]] = field(default_factory=list)
    reads: list = field(default_factory=list)
    unknown_read: UnknownRead | None = None


@dataclass
class Verdict:
    status: str
    anomaly: Anomaly | None = None
    violations: list[str] = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    graph: object = None  # known graph, kept for DOT dumps

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.status]


def _to_ids(ids: list[int], path: list[Edge]) -> list[Edge]:
    return [Edge(ids[e.src] if e.src != INIT else INIT, ids[e.dst], e.label) for e in path]


def _peak_rss_mb() -> float:
    rss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return rss / (1024 * 1024) if sys.platform == "darwin" else rss / 1024


def verify(
    h: ObservedHistory,
    use_time: bool = True,
    pruning: bool = True,
    budget: int | None = None,
) -> Verdict:
    t0 = time.perf_counter()
    stats: dict = {}

    def done(v: Verdict) -> Verdict:
        stats["wall_seconds"] = round(time.perf_counter() - t0, 6)
        stats["peak_rss_mb"] = round(_peak_rss_mb(), 1)
        v.graph = stats.pop("_graph", None)
        v.stats = stats
        return v

    problems = validate(h)
    if problems:
        return done(Verdict(INVALID_HISTORY, violations=problems))
    try:
        anomalies = detect_read_anomalies(h)
        if anomalies:
            kind = ABORTED_READ if isinstance(anomalies[0], AbortedRead) else INTERMEDIATE_READ
            return done(Verdict(NOT_SERIALIZABLE, Anomaly(kind, reads=anomalies)))
        return _verify_graph(h, use_time, pruning, budget, stats, done)
    except InvalidHistory as exc:
        return done(Verdict(INVALID_HISTORY, violations=exc.violations))


def _verify_graph(h, use_time, pruning, budget, stats, done) -> Verdict:
    order = build_order(h, use_time)
    ids = order.ids
    g = build_known_graph(h, order)
    stats["transactions"] = len(order)
    stats["known_edges"] = len(g.edges)
    stats["closure_cells"] = order.cell_count
    stats["item_constraints_total"] = potential_item_constraints(g)
    stats["_graph"] = g
    try:
        c = build_closure(order, g.edges)
    except CycleDetected as exc:
        return done(Verdict(NOT_SERIALIZABLE, Anomaly(CYCLE, [_to_ids(ids, exc.path)])))

    items = gen_item_constraints(g, order)
    stats["item_constraints_after_avoidance"] = len(items)
    try:
        preds = gen_predicate_constraints(h, g, order)
    except NoCompletion as exc:
        stats["item_constraints_after_pruning"] = len(items)
        return done(Verdict(NOT_SERIALIZABLE, Anomaly(NO_COMPLETION, unknown_read=exc.read)))
    stats["predicate_constraints"] = len(preds)

    forced: list[Edge] = []
    if pruning:
        outcome = reduce(c, items, preds)
        items, preds, forced = outcome.items, outcome.preds, outcome.forced
        stats["forced_edges"] = len(forced)
        if outcome.refutation is not None:
            stats["item_constraints_after_pruning"] = len(items)
            stats["predicate_constraints_after_pruning"] = len(preds)
            ref = outcome.refutation
            cycles = list({tuple(c): c for c in (_to_ids(ids, cyc) for cyc in ref.cycles)}.values())
            return done(Verdict(NOT_SERIALIZABLE, Anomaly(ref.kind, cycles)))
    stats["item_constraints_after_pruning"] = len(items)
    stats["predicate_constraints_after_pruning"] = len(preds)

    enc = encode(items, preds)
    stats["variables"] = enc.num_vars
    stats["clauses"] = len(enc.clauses)
    result = solve(enc, c, budget=budget)
    stats["solver"] = asdict(result.stats)
    if result.status == UNKNOWN:
        return done(Verdict(INDETERMINATE))
    if result.status == SAT:
        base = list(g.edges) + [(e.src, e.dst) for e in forced]
        problems = check_model(enc, result.model, base, order)
        if problems:
            raise SolverMismatch("; ".join(problems))
        return done(Verdict(SERIALIZABLE))
    cycles = [_to_ids(ids, result.cycle)] if result.cycle else []
    return done(Verdict(NOT_SERIALIZABLE, Anomaly(CYCLE, cycles)))


# -- witness replay ------------------------------------------------------------


def _reads_key(h: ObservedHistory, tid: int, key: str) -> bool:
    t = h.by_id[tid]
    if any(k == key for _, k, _ in item_reads(t)):
        return True
    return any(ur.txn == tid and ur.key == key for ur in h.unknown_reads)


def _installs(h: ObservedHistory, tid: int, key: str) -> int | None:
    if tid == INIT:
        return 0 if key in h.initial else None
    return h.installed.get(tid, {}).get(key)


def _theta(h: ObservedHistory, tid: int, key: str, pred: str) -> bool | None:
    vid = _installs(h, tid, key)
    if vid is None:
        return None
    p = next((ur.pred for ur in h.unknown_reads if ur.key == key and str(ur.pred) == pred), None)
    if p is None:
        return None
    return eval_predicate(p, h.versions[(key, vid)].attrs)


def _unknown_reader(h: ObservedHistory, tid: int, key: str, pred: str) -> bool:
    return any(ur.txn == tid and ur.key == key and str(ur.pred) == pred for ur in h.unknown_reads)


def edge_problem(h: ObservedHistory, e: Edge) -> str | None:
    """Why edge ``e`` (over txn ids) is not a possible dependency of ``h``; None if it is."""
    lab: DependencyLabel = e.label
    src_ok = e.src == INIT or (e.src in h.by_id and h.by_id[e.src].committed)
    if not src_ok or e.dst not in h.by_id or not h.by_id[e.dst].committed:
        return f"{e}: endpoint is not a committed transaction"
    if e.src == e.dst:
        return f"{e}: self edge"
    if lab.kind == TIME:
        s, d = h.by_id[e.src], h.by_id[e.dst]
        return None if s.end <= d.start else f"{e}: no time order"
    if lab.kind == WR:
        if _installs(h, e.src, lab.key) != lab.vid:
            return f"{e}: source does not install {lab.key}:{lab.vid}"
        if not any(k == lab.key and v == lab.vid for _, k, v in item_reads(h.by_id[e.dst])):
            return f"{e}: target does not read {lab.key}:{lab.vid}"
        return None
    if lab.kind == WW:
        if _installs(h, e.src, lab.key) is None or _installs(h, e.dst, lab.key) is None:
            return f"{e}: both ends must install {lab.key}"
        return None
    if lab.kind == RW:
        if not _reads_key(h, e.src, lab.key) or _installs(h, e.dst, lab.key) is None:
            return f"{e}: needs a read of {lab.key} then an install"
        return None
    if lab.kind == PRED_WR:
        if not _unknown_reader(h, e.dst, lab.key, lab.pred) or _theta(h, e.src, lab.key, lab.pred) is not False:
            return f"{e}: not a possible predicate read"
        return None
    if lab.kind == PRED_RW:
        if not _unknown_reader(h, e.src, lab.key, lab.pred) or _theta(h, e.dst, lab.key, lab.pred) is not True:
            return f"{e}: not a possible predicate anti-dependency"
        return None
    return f"{e}: unknown label {lab.kind}"


def replay_cycle(h: ObservedHistory, cycle: list[Edge]) -> list[str]:
    """Problems found when replaying a witness cycle; empty means it checks out."""
    if not cycle:
        return ["empty cycle"]
    problems = [p for e in cycle if (p := edge_problem(h, e))]
    for a, b in zip(cycle, cycle[1:] + cycle[:1]):
        if a.dst != b.src:
            problems.append(f"walk breaks between {a} and {b}")
    return problems


def replay_witness(h: ObservedHistory, verdict: Verdict) -> list[str]:
    """Independent check of a NOT_SERIALIZABLE verdict's evidence."""
    a = verdict.anomaly
    if verdict.status != NOT_SERIALIZABLE or a is None:
        return ["no anomaly to replay"]
    if a.kind in (ABORTED_READ, INTERMEDIATE_READ):
        if not a.reads:
            return ["no offending read"]
        problems = []
        for r in a.reads:
            v = h.versions.get((r.key, r.vid))
            writer = h.by_id.get(r.writer)
            if v is None or writer is None or v.writer != r.writer:
                problems.append(f"{r}: version not written by {r.writer}")
            elif isinstance(r, AbortedRead) and writer.committed:
                problems.append(f"{r}: writer committed")
            elif not isinstance(r, AbortedRead) and v.final:
                problems.append(f"{r}: version is final")
        return problems
    if a.kind == NO_COMPLETION and a.unknown_read is not None:
        ur = a.unknown_read
        for vid, w in _versions_of(h, ur.key):
            if not eval_predicate(ur.pred, h.versions[(ur.key, vid)].attrs):
                return [f"{ur}: version {vid} would complete the read"]
        return []
    if not a.cycles:
        return ["no cycle recorded"]
    problems = []
    for cyc in a.cycles:
        problems.extend(replay_cycle(h, cyc))
    return problems


def _versions_of(h: ObservedHistory, key: str) -> list[tuple[int, int]]:
    out = [(0, INIT)] if key in h.initial else []
    out.extend((inst[key], tid) for tid, inst in h.installed.items() if key in inst)
    return out


def format_cycle(cycle: list[Edge]) -> str:
    def name(t: int) -> str:
        return "t_init" if t == INIT else f"t{t}"

    return "".join(f"{name(e.src)} -{e.label}-> " for e in cycle) + name(cycle[0].src) if cycle else ""
