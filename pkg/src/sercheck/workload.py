"""Synthetic histories: serial simulation with overlapping client intervals.

Transactions run one at a time against an in-memory store.  Transaction
``k`` commits at tick ``(k + 1) * SPACING`` and its client interval contains
that commit point, so any time order between two intervals agrees with the
serial order and the history is serializable by construction.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, replace

from .history import (
    ABORTED,
    COMMITTED,
    INIT_VID,
    ObservedHistory,
    Predicate,
    PredicateRead,
    PredicateUpdate,
    PredicateWrite,
    Read,
    Transaction,
    Write,
    eval_predicate,
    table_of,
)

SPACING = 1000
ATTRS = ("v1", "v2")
ATTR_RANGE = 100

ANOMALY_KINDS = (
    "aborted-read",
    "intermediate-read",
    "lost-update",
    "write-skew",
    "dirty-write-cycle",
    "phantom",
)


class InjectionError(ValueError):
    pass


@dataclass(frozen=True)
class GenParams:
    txn_count: int = 100
    object_count: int = 100
    table_count: int = 1
    read_ratio: float = 0.5
    write_ratio: float = 0.5
    pred_read_ratio: float = 0.0
    pred_write_ratio: float = 0.0
    session_count: int = 8
    overlap_factor: float = 0.5
    seed: int = 0
    ops_per_txn: int = 4
    # whole transactions are read-only or write-only, picked by the ratios
    blind: bool = False
    abort_ratio: float = 0.0
    # share of accesses that go to the first hot_keys keys of a table
    hot_keys: int = 0
    hot_prob: float = 0.0

    def validate(self) -> None:
        ratios = (self.read_ratio, self.write_ratio, self.pred_read_ratio, self.pred_write_ratio)
        if any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
            raise ValueError("operation ratios must be non-negative and sum to 1")
        if self.txn_count < 0:
            raise ValueError("txn_count must be >= 0")
        for name in ("object_count", "table_count", "session_count", "ops_per_txn"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.table_count > self.object_count:
            raise ValueError("need at least one object per table")
        if not 0 <= self.overlap_factor <= 1 or not 0 <= self.abort_ratio <= 1:
            raise ValueError("overlap_factor and abort_ratio must lie in [0, 1]")


PRESETS: dict[str, GenParams] = {
    "blindw-rh": GenParams(object_count=10_000, read_ratio=0.8, write_ratio=0.2, blind=True,
                           session_count=24, ops_per_txn=8),
    "blindw-wr": GenParams(object_count=10_000, read_ratio=0.5, write_ratio=0.5, blind=True,
                           session_count=24, ops_per_txn=8),
    "blindw-wh": GenParams(object_count=10_000, read_ratio=0.2, write_ratio=0.8, blind=True,
                           session_count=24, ops_per_txn=8),
    "blindw-pred": GenParams(object_count=20, read_ratio=0.0, write_ratio=0.0, pred_read_ratio=0.5,
                             pred_write_ratio=0.5, blind=True, session_count=8, ops_per_txn=2),
    "tpcc-like": GenParams(object_count=2_000, table_count=4, read_ratio=0.6, write_ratio=0.4,
                           session_count=16, ops_per_txn=10, hot_keys=10, hot_prob=0.3),
    "ctwitter-like": GenParams(object_count=5_000, table_count=2, read_ratio=0.85, write_ratio=0.15,
                               session_count=32, ops_per_txn=6, hot_keys=50, hot_prob=0.5),
}


def preset(name: str, **overrides) -> GenParams:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    return replace(PRESETS[name], **overrides)


def _random_attrs(rng: random.Random) -> tuple[tuple[str, int], ...]:
    return tuple((a, rng.randrange(ATTR_RANGE)) for a in ATTRS)


def _random_predicate(rng: random.Random, table: str) -> Predicate:
    attr = rng.choice(ATTRS)
    lo = rng.randrange(ATTR_RANGE)
    hi = min(ATTR_RANGE, lo + rng.randint(1, ATTR_RANGE // 4))
    return Predicate(table, ((attr, ">=", lo), (attr, "<", hi)))


def _intervals(p: GenParams, rng: random.Random) -> list[tuple[int, int]]:
    # half-widths stay below half a session period so one session never overlaps itself
    limit = max(1, p.session_count * SPACING // 2 - 1)
    width = max(1, min(limit, int(p.overlap_factor * p.session_count * SPACING / 2)))
    out = []
    for k in range(p.txn_count):
        commit = (k + 1) * SPACING + p.session_count * SPACING
        out.append((commit - rng.randint(1, width), commit + rng.randint(1, width)))
    return out


def generate_serializable(p: GenParams) -> ObservedHistory:
    p.validate()
    rng = random.Random(p.seed)
    tables = [f"t{i}" for i in range(p.table_count)]
    keys_by_table: dict[str, list[str]] = {t: [] for t in tables}
    for i in range(p.object_count):
        t = tables[i % p.table_count]
        keys_by_table[t].append(f"{t}.k{i}")
    initial = {k: _random_attrs(rng) for ks in keys_by_table.values() for k in ks}
    store = {k: (INIT_VID, attrs) for k, attrs in initial.items()}
    next_vid = {k: 1 for k in initial}
    kinds = ("R", "W", "PR", "PW")
    weights = (p.read_ratio, p.write_ratio, p.pred_read_ratio, p.pred_write_ratio)
    intervals = _intervals(p, rng)

    def pick_key(table: str) -> str:
        ks = keys_by_table[table]
        if p.hot_keys and rng.random() < p.hot_prob:
            return ks[rng.randrange(min(p.hot_keys, len(ks)))]
        return ks[rng.randrange(len(ks))]

    txns = []
    for k in range(p.txn_count):
        local: dict[str, tuple[int, tuple]] = {}

        def current(key: str) -> tuple[int, tuple]:
            return local.get(key) or store[key]

        def fresh(key: str) -> int:
            vid = next_vid[key]
            next_vid[key] = vid + 1
            return vid

        txn_kind = rng.choices(kinds, weights)[0] if p.blind else None
        ops = []
        for _ in range(p.ops_per_txn):
            kind = txn_kind or rng.choices(kinds, weights)[0]
            table = rng.choice(tables)
            if kind == "R":
                key = pick_key(table)
                ops.append(Read(key, current(key)[0]))
            elif kind == "W":
                key = pick_key(table)
                attrs = _random_attrs(rng)
                vid = fresh(key)
                local[key] = (vid, attrs)
                ops.append(Write(key, vid, attrs))
            else:
                pred = _random_predicate(rng, table)
                hits = [key for key in keys_by_table[table] if eval_predicate(pred, current(key)[1])]
                if kind == "PR":
                    ops.append(PredicateRead(pred, tuple((key, current(key)[0]) for key in hits)))
                else:
                    updates = []
                    for key in hits:
                        attrs = _random_attrs(rng)
                        vid = fresh(key)
                        updates.append(PredicateUpdate(key, current(key)[0], vid, attrs))
                        local[key] = (vid, attrs)
                    ops.append(PredicateWrite(pred, tuple(updates)))
        aborted = rng.random() < p.abort_ratio
        if not aborted:
            store.update(local)
        start, end = intervals[k]
        txns.append(Transaction(k + 1, k % p.session_count, start, end,
                                ABORTED if aborted else COMMITTED, tuple(ops)))
    return ObservedHistory(tuple(txns), initial)


# -- anomaly injection ----------------------------------------------------------


def _next_vid(h: ObservedHistory, key: str) -> int:
    return max((vid for (k, vid) in h.versions if k == key), default=0) + 1


def _fresh_table(h: ObservedHistory, stem: str) -> str:
    used = {table_of(k) for k, _ in h.versions} | {table_of(k) for k in h.initial}
    n = 0
    while f"{stem}{n}" in used:
        n += 1
    return f"{stem}{n}"


def _tail(h: ObservedHistory) -> tuple[int, int, int]:
    """Next free txn and session ids plus a start tick after every existing interval."""
    tid = max((t.id for t in h.transactions), default=0) + 1
    session = max((t.session for t in h.transactions), default=-1) + 1
    tick = max((t.end for t in h.transactions), default=0) + SPACING
    return tid, session, tick


def _committed_reads(h: ObservedHistory, rng: random.Random, nonzero: bool) -> list[tuple[int, int, Read]]:
    out = []
    for ti, t in enumerate(h.transactions):
        if not t.committed:
            continue
        for oi, op in enumerate(t.ops):
            if isinstance(op, Read):
                v = h.versions.get((op.key, op.vid))
                if v is None or v.writer == t.id:
                    continue
                if nonzero and v.writer is None:
                    continue
                out.append((ti, oi, op))
    rng.shuffle(out)
    return out


def _replace_op(t: Transaction, index: int, op) -> Transaction:
    return replace(t, ops=t.ops[:index] + (op,) + t.ops[index + 1:])


def inject_anomaly(h: ObservedHistory, kind: str, seed: int = 0, control: bool = False) -> ObservedHistory:
    """Return ``h`` with one anomaly of ``kind`` added, or its serializable twin if ``control``."""
    rng = random.Random(seed)
    if kind == "aborted-read":
        return _inject_aborted_read(h, rng, control)
    if kind == "intermediate-read":
        return _inject_intermediate_read(h, rng, control)
    builders = {
        "lost-update": _lost_update,
        "write-skew": _write_skew,
        "dirty-write-cycle": _dirty_write_cycle,
        "phantom": _phantom,
    }
    if kind not in builders:
        raise ValueError(f"unknown anomaly kind {kind!r}")
    return builders[kind](h, control)


def _inject_aborted_read(h: ObservedHistory, rng: random.Random, control: bool) -> ObservedHistory:
    reads = _committed_reads(h, rng, nonzero=False)
    if not reads:
        raise InjectionError("history has no committed read to redirect")
    ti, oi, op = reads[0]
    tid, session, _ = _tail(h)
    reader = h.transactions[ti]
    vid = _next_vid(h, op.key)
    attrs = h.versions[(op.key, op.vid)].attrs
    writer = Transaction(tid, session, reader.start, reader.end, ABORTED, (Write(op.key, vid, attrs),))
    txns = list(h.transactions)
    if not control:
        txns[ti] = _replace_op(reader, oi, Read(op.key, vid))
    txns.append(writer)
    return ObservedHistory(tuple(txns), h.initial)


def _inject_intermediate_read(h: ObservedHistory, rng: random.Random, control: bool) -> ObservedHistory:
    reads = _committed_reads(h, rng, nonzero=True)
    for ti, oi, op in reads:
        v = h.versions[(op.key, op.vid)]
        wi = next(i for i, t in enumerate(h.transactions) if t.id == v.writer)
        w = h.transactions[wi]
        pos = next((i for i, o in enumerate(w.ops) if isinstance(o, Write) and o.key == op.key
                    and o.vid == op.vid), None)
        if pos is None:
            continue  # installed through a predicate write; try another read
        vid = _next_vid(h, op.key)
        txns = list(h.transactions)
        txns[wi] = replace(w, ops=w.ops[:pos] + (Write(op.key, vid, v.attrs),) + w.ops[pos:])
        if not control:
            txns[ti] = _replace_op(txns[ti], oi, Read(op.key, vid))
        return ObservedHistory(tuple(txns), h.initial)
    raise InjectionError("history has no committed read of a written version to redirect")


def _append(h: ObservedHistory, initial: dict, specs: list[tuple[int, tuple]]) -> ObservedHistory:
    """Append transactions given as (start offset, ops); all end together so they overlap."""
    tid, session, tick = _tail(h)
    span = SPACING * (len(specs) + 1)
    txns = list(h.transactions)
    for k, (offset, ops) in enumerate(specs):
        txns.append(Transaction(tid + k, session + k, tick + offset, tick + span + offset,
                                COMMITTED, tuple(ops)))
    merged = dict(h.initial)
    merged.update(initial)
    return ObservedHistory(tuple(txns), merged)


def _lost_update(h: ObservedHistory, control: bool) -> ObservedHistory:
    tb = _fresh_table(h, "lu")
    x = f"{tb}.x"
    init = {x: (("v", 0),)}
    t1 = [Read(x, 0), Write(x, 1, (("v", 1),))]
    t2 = [Read(x, 1 if control else 0), Write(x, 2, (("v", 2),))]
    return _append(h, init, [(0, t1), (10, t2)])


def _write_skew(h: ObservedHistory, control: bool) -> ObservedHistory:
    tb = _fresh_table(h, "ws")
    x, y = f"{tb}.x", f"{tb}.y"
    init = {x: (("v", 0),), y: (("v", 0),)}
    t1 = [Read(x, 0), Read(y, 0), Write(x, 1, (("v", 1),))]
    t2 = [Read(x, 1 if control else 0), Read(y, 0), Write(y, 1, (("v", 1),))]
    return _append(h, init, [(0, t1), (10, t2)])


def _dirty_write_cycle(h: ObservedHistory, control: bool) -> ObservedHistory:
    tb = _fresh_table(h, "dw")
    x, y = f"{tb}.x", f"{tb}.y"
    init = {x: (("v", 0),), y: (("v", 0),)}
    t1 = [Write(x, 1, (("v", 1),)), Write(y, 1, (("v", 1),))]
    t2 = [Write(x, 2, (("v", 2),)), Write(y, 2, (("v", 2),))]
    t3 = [Read(x, 2 if control else 1), Read(y, 2)]
    return _append(h, init, [(0, t1), (10, t2), (20, t3)])


def _phantom(h: ObservedHistory, control: bool) -> ObservedHistory:
    tb = _fresh_table(h, "ph")
    x, y = f"{tb}.x", f"{tb}.y"
    pred = Predicate(tb, (("v", "=", 1),))
    t0 = [Write(x, 3, (("v", 0),)), Write(y, 3, (("v", 0),))]
    t2 = [Read(x, 3), Write(x, 2, (("v", 2),)), Write(y, 2, (("v", 2),))]
    t1 = [Read(y, 2), Write(x, 1, (("v", 1),)), Write(y, 1, (("v", 1),))]
    matched = ((x, 1), (y, 1)) if control else ((x, 1),)
    t3 = [PredicateRead(pred, matched)]
    return _append(h, {}, [(0, t0), (10, t2), (20, t1), (30, t3)])


# -- small random histories for differential testing ----------------------------

FUZZ_PREDICATES = (
    (("v", "=", 1),),
    (("v", "<", 2),),
    (("v", ">=", 2),),
    (("v", "!=", 0),),
    (("v", ">", 0), ("v", "<=", 2)),
)


def random_small_history(seed: int, max_txns: int = 8, max_keys: int = 3,
                         max_writers: int = 3, pred_share: float = 0.3,
                         clean_reads: bool = False) -> ObservedHistory:
    """Arbitrary (often non-serializable) history with stale reads and aborts mixed in.

    Reads pick any existing version, so anomalies of every kind show up.  Each
    key gets an initial version and at most ``max_writers`` more.  With
    ``clean_reads`` other transactions only observe initial versions and final
    plain writes of committed transactions, which rules out aborted and
    intermediate reads and leaves the ordering problem.
    """
    rng = random.Random(seed)
    table = "f"
    keys = [f"{table}.k{i}" for i in range(rng.randint(1, max_keys))]
    initial = {k: (("v", rng.randrange(4)),) for k in keys}
    n_committed = rng.randint(1, max_txns)
    n_aborted = rng.choice((0, 0, 0, 1, 2))
    total = n_committed + n_aborted
    statuses = [COMMITTED] * n_committed + [ABORTED] * n_aborted
    rng.shuffle(statuses)

    # versions: key -> [(vid, attrs, writer index)]
    pool: dict[str, list[tuple[int, tuple, int | None]]] = {k: [(0, initial[k], None)] for k in keys}
    next_vid = {k: 1 for k in keys}
    plans: list[list] = [[] for _ in range(total)]

    def new_version(key: str, writer: int) -> tuple[int, tuple]:
        vid = next_vid[key]
        next_vid[key] += 1
        attrs = (("v", rng.randrange(4)),)
        pool[key].append((vid, attrs, writer))
        return vid, attrs

    writers_left = {k: max_writers for k in keys}
    for i in range(total):
        for _ in range(rng.randint(1, 4)):
            r = rng.random()
            if r < pred_share:
                plans[i].append(("PR" if rng.random() < 0.6 else "PW", Predicate(table, rng.choice(FUZZ_PREDICATES))))
            elif r < pred_share + (1 - pred_share) / 2:
                plans[i].append(("R", rng.choice(keys)))
            else:
                key = rng.choice(keys)
                if writers_left[key] <= 0 and not any(p[0] == "W" and p[1] == key for p in plans[i]):
                    plans[i].append(("R", key))
                    continue
                if not any(p[0] == "W" and p[1] == key for p in plans[i]):
                    writers_left[key] -= 1
                plans[i].append(("W", key))
    # assign write versions first so reads can target any of them
    writes: list[dict] = [dict() for _ in range(total)]
    for i, plan in enumerate(plans):
        for j, step in enumerate(plan):
            if step[0] == "W":
                writes[i][j] = new_version(step[1], i)

    visible = None
    if clean_reads:
        last: dict[tuple[int, str], int] = {}
        for i, per_txn in enumerate(writes):
            for j in sorted(per_txn):
                last[(i, plans[i][j][1])] = per_txn[j][0]
        visible = {(key, vid) for (i, key), vid in last.items() if statuses[i] == COMMITTED}

    def observable(key: str, v: tuple, i: int) -> bool:
        if v[2] == i:
            return False
        return visible is None or v[2] is None or (key, v[0]) in visible

    txns = []
    for i, plan in enumerate(plans):
        ops = []
        own: dict[str, tuple[int, tuple]] = {}  # this txn's latest version per key so far
        for j, step in enumerate(plan):
            if step[0] == "R":
                key = step[1]
                if key in own:
                    vid = own[key][0]
                else:
                    vid = rng.choice([v for v in pool[key] if observable(key, v, i)])[0]
                ops.append(Read(key, vid))
            elif step[0] == "W":
                vid, attrs = writes[i][j]
                own[step[1]] = (vid, attrs)
                ops.append(Write(step[1], vid, attrs))
            else:
                pred = step[1]
                matched = []
                for key in keys:
                    if key in own:
                        if eval_predicate(pred, own[key][1]):
                            matched.append((key, own[key][0]))
                        continue
                    hits = [v for v in pool[key] if observable(key, v, i) and eval_predicate(pred, v[1])]
                    if hits and rng.random() < 0.5:
                        matched.append((key, rng.choice(hits)[0]))
                # an update over a visible plain write would make that write intermediate
                clobbers = visible is not None and any((k, own[k][0]) in visible for k, _ in matched if k in own)
                if step[0] == "PR" or clobbers:
                    ops.append(PredicateRead(pred, tuple(matched)))
                else:
                    updates = []
                    for key, old in matched:
                        if key not in own:
                            if writers_left[key] <= 0:
                                continue
                            writers_left[key] -= 1
                        vid, attrs = new_version(key, i)
                        own[key] = (vid, attrs)
                        updates.append(PredicateUpdate(key, old, vid, attrs))
                    ops.append(PredicateWrite(pred, tuple(updates)))
        start = rng.randrange(100)
        txns.append(Transaction(i + 1, i, start, start + rng.randint(1, 60), statuses[i], tuple(ops)))
    return ObservedHistory(tuple(txns), initial)


def retime(h: ObservedHistory, serial_order: list[int], seed: int = 0) -> ObservedHistory:
    """Give committed transactions intervals around increasing commit points in ``serial_order``."""
    rng = random.Random(seed)
    point = {tid: (k + 1) * 100 for k, tid in enumerate(serial_order)}
    txns = []
    for t in h.transactions:
        if t.id in point:
            c = point[t.id]
            t = replace(t, start=c - rng.randint(1, 150), end=c + rng.randint(1, 150))
        txns.append(t)
    return ObservedHistory(tuple(txns), h.initial)
