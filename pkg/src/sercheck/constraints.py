"""Item and predicate constraints, their generation and reduction."""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from itertools import combinations

from .closure import CompactClosure, CycleDetected, TxnOrder
from .deps import INIT, PRED_RW, PRED_WR, RW, WW, DependencyLabel, Edge
from .graph import KnownGraph
from .history import ObservedHistory, Predicate, UnknownRead, eval_predicate


@dataclass
class ItemConstraint:
    """Exactly one of ``forward`` (first before second) or ``backward`` holds."""

    id: int
    key: str
    first: int
    second: int
    forward: list[Edge]
    backward: list[Edge]


@dataclass
class PredEdge:
    edge: Edge
    # write order (t_m, t_n) the edge depends on; None once determined
    derive: tuple[int, int] | None = None

    @property
    def determined(self) -> bool:
        return self.derive is None


@dataclass
class Alternative:
    writer: int  # vertex whose version the unknown read observed (INIT allowed)
    edges: list[PredEdge]

    @property
    def determined(self) -> list[Edge]:
        return [pe.edge for pe in self.edges if pe.derive is None]

    @property
    def undetermined(self) -> list[PredEdge]:
        return [pe for pe in self.edges if pe.derive is not None]

    def signature(self) -> tuple:
        return tuple(sorted((pe.edge.src, pe.edge.dst, pe.derive or ()) for pe in self.edges))


@dataclass
class PredicateConstraint:
    id: int
    txn: int
    pred: Predicate
    key: str
    alternatives: list[Alternative]


@dataclass
class ConstraintStats:
    item_total: int = 0
    item_after_avoidance: int = 0
    item_after_pruning: int = 0
    pred_total: int = 0
    pred_after_pruning: int = 0
    forced_edges: int = 0


@dataclass
class Refutation:
    """Why no completion can be acyclic: the cycles that ruled out each option."""

    kind: str  # "CYCLE" or "NO_COMPLETION"
    cycles: list[list[Edge]] = field(default_factory=list)
    read: UnknownRead | None = None


@dataclass
class ReductionOutcome:
    items: list[ItemConstraint]
    preds: list[PredicateConstraint]
    forced: list[Edge]
    refutation: Refutation | None = None


class NoCompletion(Exception):
    def __init__(self, read: UnknownRead):
        super().__init__(f"txn {read.txn}: every version of {read.key} satisfies {read.pred}")
        self.read = read


# -- generation ---------------------------------------------------------------


def _non_init_installers(g: KnownGraph, key: str) -> list[tuple[int, int]]:
    return [(vid, w) for vid, w in g.writers_of(key) if w != INIT]


def potential_item_constraints(g: KnownGraph) -> int:
    total = 0
    for key in g.writers:
        k = len(_non_init_installers(g, key))
        total += k * (k - 1) // 2
    return total


def _item_side(g: KnownGraph, key: str, a: int, vid_a: int, b: int) -> list[Edge]:
    ww = DependencyLabel(WW, key)
    rw = DependencyLabel(RW, key)
    side = [Edge(a, b, ww)]
    side.extend(Edge(r, b, rw) for r in g.readers_of(key, vid_a) if r != b and r != a)
    return side


def gen_item_constraints(g: KnownGraph, order: TxnOrder) -> list[ItemConstraint]:
    out: list[ItemConstraint] = []
    for key in sorted(g.writers):
        ws = sorted(_non_init_installers(g, key), key=lambda p: p[1])
        for (vid_a, a), (vid_b, b) in combinations(ws, 2):
            if order.use_time and not order.overlap(a, b):
                continue
            out.append(ItemConstraint(
                len(out), key, a, b,
                _item_side(g, key, a, vid_a, b),
                _item_side(g, key, b, vid_b, a),
            ))
    return out


def gen_predicate_constraints(
    h: ObservedHistory, g: KnownGraph, order: TxnOrder
) -> list[PredicateConstraint]:
    """One constraint per unknown predicate read; raises NoCompletion if one has no option."""
    out: list[PredicateConstraint] = []
    versions = h.versions
    index = order.index
    use_time = order.use_time
    start, end = order.start, order.end

    def implied(u: int, v: int) -> bool:
        if v == INIT:
            return False
        return u == INIT or (use_time and end[u] <= start[v])

    attrs_cache: dict[tuple[str, int], dict] = {}
    key_cache: dict[str, tuple] = {}

    def key_info(key: str) -> tuple:
        # (vertex -> vid, non-initial installers sorted by end, their ends, longest duration)
        if key not in key_cache:
            ws = g.writers_of(key)
            vid_of = {w: vid for vid, w in ws}
            by_end = sorted((w for _, w in ws if w != INIT), key=lambda w: end[w])
            longest = max((end[w] - start[w] for w in by_end), default=0)
            key_cache[key] = (vid_of, by_end, [end[w] for w in by_end], longest)
        return key_cache[key]

    def holds(pred: Predicate, key: str, w: int, vid_of: dict) -> bool:
        vk = (key, vid_of[w])
        if vk not in attrs_cache:
            attrs_cache[vk] = dict(versions[vk].attrs)
        return eval_predicate(pred, attrs_cache[vk])

    for ur in h.unknown_reads:
        t = index[ur.txn]
        key, pred = ur.key, ur.pred
        vid_of, by_end, ends, longest = key_info(key)
        if use_time:
            false_w, true_w = _time_window(t, pred, key, vid_of, by_end, ends, longest,
                                           start, end, holds)
        else:
            false_w, true_w = [], []
            for w in vid_of:
                if holds(pred, key, w, vid_of):
                    if w != t:
                        true_w.append(w)
                else:
                    false_w.append(w)  # the reader's own later install may be the version it observed
        if not false_w:
            raise NoCompletion(ur)
        pwr = DependencyLabel(PRED_WR, key, pred=str(pred))
        prw = DependencyLabel(PRED_RW, key, pred=str(pred))
        alts: list[Alternative] = []
        seen: set[tuple] = set()
        for m in false_w:
            edges: list[PredEdge] = []
            if m != t and not implied(m, t):
                edges.append(PredEdge(Edge(m, t, pwr)))
            for n in true_w:
                if n == m or implied(n, m) or implied(t, n):
                    continue
                derive = None if implied(m, n) else (m, n)
                edges.append(PredEdge(Edge(t, n, prw), derive))
            if not edges:
                # this option adds nothing, so the read is always satisfiable
                alts = []
                break
            alt = Alternative(m, edges)
            sig = alt.signature()
            if sig not in seen:
                seen.add(sig)
                alts.append(alt)
        if alts:
            out.append(PredicateConstraint(len(out), t, pred, key, alts))
    return out


def _time_window(t, pred, key, vid_of, by_end, ends, longest, start, end, holds):
    """Candidate observed versions and anti-dependency targets for a read by ``t``.

    Writers outside the window are either ordered before a theta-true
    version that precedes the reader (so they would close a cycle) or start
    after the reader ends (so their edges point against real time).
    """
    # latest start among theta-true versions committed before the reader
    latest = None
    i = bisect_right(ends, start[t]) - 1
    while i >= 0 and (latest is None or ends[i] > latest):
        w = by_end[i]
        if holds(pred, key, w, vid_of) and (latest is None or start[w] > latest):
            latest = start[w]
        i -= 1
    lo = 0 if latest is None else bisect_right(ends, latest)
    false_w, true_w, dead = [], [], []
    if INIT in vid_of and not holds(pred, key, INIT, vid_of):
        (false_w if latest is None else dead).append(INIT)
    # surviving options start after latest - longest; older true versions
    # precede all of them and need no anti-dependency
    first = 0 if latest is None else bisect_right(ends, latest - longest)
    horizon = end[t] + longest
    for i in range(first, len(by_end)):
        if ends[i] > horizon:
            break
        w = by_end[i]
        if start[w] >= end[t]:
            continue
        if holds(pred, key, w, vid_of):
            if w != t:
                true_w.append(w)
        elif i >= lo:
            false_w.append(w)
        else:
            dead.append(w)
    if not false_w:
        if dead:
            # every option is cut off; keep the most recent so reduction reports a cycle
            false_w.append(dead[-1])
        else:
            # no theta-false version in the window; look further only to decide
            for i in range(len(by_end) - 1, -1, -1):
                if not holds(pred, key, by_end[i], vid_of):
                    false_w.append(by_end[i])
                    break
    return false_w, true_w


# -- reduction ----------------------------------------------------------------


class _ShortCircuit(Exception):
    def __init__(self, refutation: Refutation):
        self.refutation = refutation


def _blocking_cycle(c: CompactClosure, edges: list[Edge]) -> list[Edge] | None:
    for e in edges:
        if c.reachable(e.dst, e.src):
            return c.find_path(e.dst, e.src) + [e]
    return None


def _force(c: CompactClosure, edges: list[Edge], forced: list[Edge]) -> bool:
    changed = False
    for e in edges:
        try:
            if c.insert_edge(e.src, e.dst, e.label) == "OK":
                forced.append(e)
                changed = True
        except CycleDetected as exc:
            raise _ShortCircuit(Refutation("CYCLE", [exc.path])) from None
    return changed


def reduce(
    c: CompactClosure,
    items: list[ItemConstraint],
    preds: list[PredicateConstraint],
) -> ReductionOutcome:
    """Apply the pruning rules to a fixpoint, inserting forced edges into ``c``."""
    items = list(items)
    preds = [
        PredicateConstraint(p.id, p.txn, p.pred, p.key,
                            [Alternative(a.writer, [PredEdge(pe.edge, pe.derive) for pe in a.edges])
                             for a in p.alternatives])
        for p in preds
    ]
    forced: list[Edge] = []
    try:
        changed = True
        while changed:
            changed = False
            keep_items = []
            for ic in items:
                fwd = _blocking_cycle(c, ic.forward)
                bwd = _blocking_cycle(c, ic.backward)
                if fwd and bwd:
                    raise _ShortCircuit(Refutation("CYCLE", [fwd, bwd]))
                if fwd or bwd:
                    _force(c, ic.backward if fwd else ic.forward, forced)
                    changed = True
                else:
                    keep_items.append(ic)
            items = keep_items

            keep_preds = []
            for pc in preds:
                status = _reduce_predicate(c, pc, forced)
                if status is not None:
                    changed = True
                if status != "retired":
                    keep_preds.append(pc)
            preds = keep_preds
    except _ShortCircuit as sc:
        return ReductionOutcome(items, preds, forced, sc.refutation)
    return ReductionOutcome(items, preds, forced)


def _reduce_predicate(c: CompactClosure, pc: PredicateConstraint, forced: list[Edge]) -> str | None:
    """Returns None when nothing changed, "changed", or "retired"."""
    changed = False
    cycles: list[list[Edge]] = []
    alive: list[Alternative] = []
    for alt in pc.alternatives:
        edges = []
        for pe in alt.edges:
            if pe.derive is not None:
                m, n = pe.derive
                if c.reachable(m, n):
                    pe = PredEdge(pe.edge)
                    changed = True
                elif c.reachable(n, m):
                    changed = True
                    continue
            edges.append(pe)
        alt.edges = edges
        cyc = _blocking_cycle(c, alt.determined)
        if cyc is not None:
            cycles.append(cyc)
            changed = True
            continue
        alive.append(alt)
    pc.alternatives = alive
    if not alive:
        raise _ShortCircuit(Refutation("NO_COMPLETION", cycles))
    for alt in alive:
        if not alt.undetermined and all(c.reachable(e.src, e.dst) for e in alt.determined):
            return "retired"
    if len(alive) == 1:
        alt = alive[0]
        if _force(c, alt.determined, forced):
            changed = True
        if not alt.undetermined:
            return "retired"
    return "changed" if changed else None
