"""Exhaustive ground truth: enumerate every complete history and test its DSG.

Nothing here uses timestamps or the compact closure.  The dependency rules
are applied directly to each candidate version order, so this module is the
reference the verifier is compared against.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from itertools import permutations, product
from typing import Iterator

from .deps import INIT, PRED_RW, PRED_WR, RW, WR, WW
from .history import (
    INIT_VID,
    ObservedHistory,
    PredicateRead,
    PredicateWrite,
    UnknownRead,
    _own_versions_before,
    detect_read_anomalies,
    eval_predicate,
    item_reads,
)

DEFAULT_CAP = 10**7
WARSHALL_LIMIT = 2000


class OracleCapExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class CompleteHistory:
    history: ObservedHistory
    version_order: dict[str, tuple[int, ...]]
    completion: dict[UnknownRead, int]


@dataclass
class OracleResult:
    serializable: bool
    checked: int
    total: int
    order: list[int] | None = None  # a serial order of committed txn ids when serializable
    reason: str = ""


def _installers(h: ObservedHistory) -> dict[str, list[int]]:
    """key -> non-initial installed vids."""
    out: dict[str, list[int]] = defaultdict(list)
    for tid, inst in h.installed.items():
        for key, vid in inst.items():
            out[key].append(vid)
    return {k: sorted(v) for k, v in out.items()}


def _writer_of(h: ObservedHistory, key: str, vid: int) -> int:
    w = h.versions[(key, vid)].writer
    return INIT if w is None else w


def _candidates(h: ObservedHistory, ur: UnknownRead, installers: dict[str, list[int]]) -> list[int]:
    vids = ([INIT_VID] if ur.key in h.initial else []) + installers.get(ur.key, [])
    out = []
    for vid in vids:
        v = h.versions[(ur.key, vid)]
        if not eval_predicate(ur.pred, v.attrs):
            out.append(vid)
    return out


def count_complete_histories(h: ObservedHistory) -> int:
    installers = _installers(h)
    total = 1
    for key in h.keys:
        total *= math.factorial(len(installers.get(key, [])))
    for ur in h.unknown_reads:
        total *= len(_candidates(h, ur, installers))
    return total


def enumerate_complete_histories(h: ObservedHistory, cap: int = DEFAULT_CAP) -> Iterator[CompleteHistory]:
    total = count_complete_histories(h)
    if total > cap:
        raise OracleCapExceeded(f"{total} complete histories exceed the cap of {cap}")
    installers = _installers(h)
    keys = h.keys
    per_key = []
    for key in keys:
        head = (INIT_VID,) if key in h.initial else ()
        per_key.append([head + p for p in permutations(installers.get(key, []))])
    reads = h.unknown_reads
    per_read = [_candidates(h, ur, installers) for ur in reads]
    for orders in product(*per_key):
        vo = dict(zip(keys, orders))
        for choice in product(*per_read):
            yield CompleteHistory(h, vo, dict(zip(reads, choice)))


def _theta_reads(ch: CompleteHistory) -> Iterator[tuple[int, object, str, int]]:
    """(reader, predicate, key, vid) for every evaluated key of every predicate operation."""
    h = ch.history
    for t in h.committed:
        for i, op in enumerate(t.ops):
            if isinstance(op, PredicateRead):
                seen = dict(op.matched)
            elif isinstance(op, PredicateWrite):
                seen = {u.key: u.old_vid for u in op.matched}
            else:
                continue
            own = _own_versions_before(t, i)
            for key in h.scope(op.pred.table):
                if key in seen:
                    yield t.id, op.pred, key, seen[key]
                elif key not in own:
                    yield t.id, op.pred, key, ch.completion[UnknownRead(t.id, i, op.pred, key)]


def build_dsg(ch: CompleteHistory) -> set[tuple[int, int, str]]:
    """Direct dependency edges (src txn, dst txn, kind); edges touching INIT are omitted."""
    h = ch.history
    edges: set[tuple[int, int, str]] = set()

    def add(u: int, v: int, kind: str) -> None:
        if u != v and u != INIT and v != INIT:
            edges.add((u, v, kind))

    pos = {key: {vid: k for k, vid in enumerate(order)} for key, order in ch.version_order.items()}
    for key, order in ch.version_order.items():
        for a, b in zip(order, order[1:]):
            add(_writer_of(h, key, a), _writer_of(h, key, b), WW)

    for t in h.committed:
        for _, key, vid in item_reads(t):
            w = _writer_of(h, key, vid)
            if w == t.id:
                continue
            add(w, t.id, WR)
            order = ch.version_order[key]
            k = pos[key][vid]
            if k + 1 < len(order):
                add(t.id, _writer_of(h, key, order[k + 1]), RW)

    for tid, pred, key, vid in _theta_reads(ch):
        order = ch.version_order[key]
        if _writer_of(h, key, vid) == tid:
            continue
        truth = [eval_predicate(pred, h.versions[(key, v)].attrs) for v in order]
        p = pos[key][vid]
        start = p
        while start > 0 and truth[start - 1] == truth[p]:
            start -= 1
        add(_writer_of(h, key, order[start]), tid, PRED_WR)
        nxt = p + 1
        while nxt < len(order) and truth[nxt] == truth[p]:
            nxt += 1
        if nxt < len(order):
            add(tid, _writer_of(h, key, order[nxt]), PRED_RW)
    return edges


def topological_order(nodes: list[int], edges) -> list[int] | None:
    """A topological order of ``nodes`` or None if the edges contain a cycle."""
    succ: dict[int, list[int]] = defaultdict(list)
    indeg = {v: 0 for v in nodes}
    for u, v, *_ in edges:
        succ[u].append(v)
        indeg[v] += 1
    ready = sorted((v for v, d in indeg.items() if d == 0), reverse=True)
    out = []
    while ready:
        u = ready.pop()
        out.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                ready.append(v)
    return out if len(out) == len(nodes) else None


def real_time_edges(h: ObservedHistory) -> list[tuple[int, int, str]]:
    """u -> v whenever u commits no later than v starts."""
    ts = h.committed
    return [(u.id, v.id, "TIME") for u in ts for v in ts if u is not v and u.end <= v.start]


def is_serializable_bruteforce(
    h: ObservedHistory, cap: int = DEFAULT_CAP, real_time: bool = False
) -> OracleResult:
    """With ``real_time`` the serial order must also respect commit-before-start."""
    total = count_complete_histories(h)
    anomalies = detect_read_anomalies(h)
    if anomalies:
        return OracleResult(False, 0, total, reason=type(anomalies[0]).__name__)
    nodes = [t.id for t in h.committed]
    extra = real_time_edges(h) if real_time else []
    checked = 0
    for ch in enumerate_complete_histories(h, cap):
        checked += 1
        order = topological_order(nodes, list(build_dsg(ch)) + extra)
        if order is not None:
            return OracleResult(True, checked, total, order)
    return OracleResult(False, checked, total, reason="every complete history is cyclic")


def warshall_closure(edges, n: int) -> list[list[bool]]:
    """Reflexive transitive closure of ``edges`` over vertices 0..n-1."""
    if n > WARSHALL_LIMIT:
        raise ValueError(f"refusing a {n}x{n} Warshall closure (limit {WARSHALL_LIMIT})")
    rows = [1 << i for i in range(n)]
    for u, v, *_ in edges:
        rows[u] |= 1 << v
    for k in range(n):
        bit = 1 << k
        rk = rows[k]
        for i in range(n):
            if rows[i] & bit:
                rows[i] |= rk
    return [[bool(rows[i] >> j & 1) for j in range(n)] for i in range(n)]
