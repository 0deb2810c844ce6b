"""Boolean encoding of the remaining constraints and a CDCL search.

Acyclicity is never written as clauses.  The search keeps a compact closure
in sync with the assignment: true literals insert their edges, a cycle turns
into a conflict clause, and literals whose edges would close a cycle are set
false with the cycle as their reason.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable

from .closure import CompactClosure, CycleDetected, TxnOrder
from .constraints import ItemConstraint, PredicateConstraint
from .deps import INIT, Edge

SAT = "SAT"
UNSAT = "UNSAT"
UNKNOWN = "UNKNOWN"

ITEM = "item"
ALT = "alt"
EDGE = "edge"


@dataclass
class Encoding:
    num_vars: int = 0
    clauses: list[list[int]] = field(default_factory=list)
    # var -> edges added when true, edges added when false
    edges: dict[int, tuple[list[Edge], list[Edge]]] = field(default_factory=dict)
    kind: dict[int, str] = field(default_factory=dict)
    origin: dict[int, object] = field(default_factory=dict)
    # per predicate constraint, its alternative variables
    groups: list[list[int]] = field(default_factory=list)
    # (edge var, alternative var, write-order literal) for each undetermined edge
    implications: list[tuple[int, int, int]] = field(default_factory=list)

    def lit_edges(self, lit: int) -> list[Edge]:
        pos, neg = self.edges[abs(lit)]
        return pos if lit > 0 else neg

    def _new(self, kind: str, origin: object, pos: list[Edge], neg: list[Edge]) -> int:
        self.num_vars += 1
        v = self.num_vars
        self.kind[v] = kind
        self.origin[v] = origin
        self.edges[v] = (pos, neg)
        return v


def expected_clause_count(preds: list[PredicateConstraint]) -> int:
    total = 0
    for pc in preds:
        k = len(pc.alternatives)
        total += 1 + k * (k - 1) // 2
        total += sum(len(a.undetermined) for a in pc.alternatives)
    return total


def encode(items: list[ItemConstraint], preds: list[PredicateConstraint]) -> Encoding:
    enc = Encoding()
    item_var: dict[tuple[str, int, int], int] = {}
    for ic in items:
        v = enc._new(ITEM, ic, list(ic.forward), list(ic.backward))
        item_var[(ic.key, ic.first, ic.second)] = v
    for pc in preds:
        alt_vars = [enc._new(ALT, (pc, alt), alt.determined, []) for alt in pc.alternatives]
        enc.groups.append(alt_vars)
        enc.clauses.append(list(alt_vars))
        enc.clauses.extend([-a, -b] for a, b in combinations(alt_vars, 2))
        for a, alt in zip(alt_vars, pc.alternatives):
            for pe in alt.undetermined:
                m, n = pe.derive
                lo, hi = (m, n) if m < n else (n, m)
                iv = item_var.get((pc.key, lo, hi))
                if iv is None:
                    raise ValueError(f"no write-order constraint for {pc.key} between {m} and {n}")
                order_lit = iv if m == lo else -iv
                e = enc._new(EDGE, pe, [pe.edge], [])
                enc.clauses.append([e, -a, -order_lit])
                enc.implications.append((e, a, order_lit))
    return enc


@dataclass
class SolverStats:
    decisions: int = 0
    conflicts: int = 0
    learned: int = 0
    propagations: int = 0
    theory_propagations: int = 0
    theory_conflicts: int = 0
    restarts: int = 0


@dataclass
class SolveResult:
    status: str
    model: dict[int, bool] = field(default_factory=dict)
    learned: list[list[int]] = field(default_factory=list)
    cycle: list[Edge] | None = None
    stats: SolverStats = field(default_factory=SolverStats)


def luby(i: int) -> int:
    """i-th element (1-based) of the Luby sequence 1 1 2 1 1 2 4 ..."""
    k = 1
    while (1 << k) - 1 < i:
        k += 1
    while True:
        if i == (1 << k) - 1:
            return 1 << (k - 1)
        i -= (1 << (k - 1)) - 1
        k = 1
        while (1 << k) - 1 < i:
            k += 1


class _Conflict(Exception):
    def __init__(self, clause: list[int], cycle: list[Edge] | None = None):
        self.clause = clause
        self.cycle = cycle


class Solver:
    RESTART_UNIT = 100
    VSIDS_AFTER = 100

    def __init__(
        self,
        enc: Encoding,
        closure: CompactClosure,
        extra_clauses: list[list[int]] = (),
        budget: int | None = None,
        heuristic: bool = True,
        theory_propagation: bool = True,
    ):
        self.enc = enc
        self.c = closure
        self.order: TxnOrder = closure.order
        self.budget = budget
        self.heuristic = heuristic
        # when off, acyclicity is enforced only through conflicts
        self.theory_propagation = theory_propagation
        n = enc.num_vars
        self.value = [0] * (n + 1)
        self.level = [0] * (n + 1)
        self.reason: list[list[int] | None] = [None] * (n + 1)
        self.trail: list[int] = []
        self.trail_lim: list[int] = []
        self.savepoints: list[int] = []
        self.theory_head = 0
        self.bcp_head = 0
        self.watches: dict[int, list[list[int]]] = {}
        self.units: list[int] = []
        self.learned: list[list[int]] = []
        self.activity = [0.0] * (n + 1)
        self.bump = 1.0
        self.phase = [False] * (n + 1)
        self.stats = SolverStats()
        self.last_cycle: list[Edge] | None = None
        self.empty_clause = False
        # scan for edges blocked by the base graph before the first decision
        self.scan_pending = True
        self._init_phases()
        self.static_order = self._static_order()
        self.static_pos = 0
        for cl in list(enc.clauses) + [list(x) for x in extra_clauses]:
            self._add_clause(list(cl))

    # -- setup ----------------------------------------------------------------

    def _add_clause(self, cl: list[int], learnt: bool = False) -> None:
        cl = list(dict.fromkeys(cl))
        if any(-l in cl for l in cl):
            return
        if not cl:
            self.empty_clause = True
            return
        if len(cl) == 1:
            self.units.append(cl[0])
            return
        self.watches.setdefault(cl[0], []).append(cl)
        self.watches.setdefault(cl[1], []).append(cl)

    def _init_phases(self) -> None:
        order, enc = self.order, self.enc
        start, end = order.start, order.end
        for v, kind in enc.kind.items():
            if kind == ITEM:
                ic: ItemConstraint = enc.origin[v]
                a, b = ic.first, ic.second
                self.phase[v] = (start[a], end[a], a) <= (start[b], end[b], b)
        for group in enc.groups:
            if not group:
                continue
            pc, _ = enc.origin[group[0]]
            limit = end[pc.txn]

            def rank(var: int) -> tuple:
                w = enc.origin[var][1].writer
                e = float("-inf") if w == INIT else end[w]
                return (e <= limit, e, -var)

            best = max(group, key=rank)
            for var in group:
                self.phase[var] = var == best

    def _static_order(self) -> list[int]:
        enc, start = self.enc, self.order.start
        items, alts, edges = [], [], []
        for v, kind in enc.kind.items():
            if kind == ITEM:
                ic = enc.origin[v]
                items.append((abs(start[ic.first] - start[ic.second]), v))
            elif kind == ALT:
                alts.append((0 if self.phase[v] else 1, v))
            else:
                edges.append(v)
        if not self.heuristic:
            return sorted(enc.kind)
        return [v for _, v in sorted(items)] + [v for _, v in sorted(alts)] + edges

    # -- assignment -----------------------------------------------------------

    def _lit_value(self, lit: int) -> int:
        v = self.value[abs(lit)]
        return v if lit > 0 else -v

    def _assign(self, lit: int, reason: list[int] | None) -> None:
        v = abs(lit)
        self.value[v] = 1 if lit > 0 else -1
        self.level[v] = len(self.trail_lim)
        self.reason[v] = reason
        self.trail.append(lit)

    def _new_level(self) -> None:
        self.trail_lim.append(len(self.trail))
        self.savepoints.append(self.c.savepoint())

    def _backtrack(self, level: int) -> None:
        if len(self.trail_lim) <= level:
            return
        cut = self.trail_lim[level]
        for lit in self.trail[cut:]:
            v = abs(lit)
            self.phase[v] = lit > 0
            self.value[v] = 0
            self.reason[v] = None
        del self.trail[cut:]
        del self.trail_lim[level:]
        self.c.rollback(self.savepoints[level])
        del self.savepoints[level:]
        self.bcp_head = min(self.bcp_head, cut)
        self.theory_head = min(self.theory_head, cut)
        self.static_pos = 0

    # -- propagation ----------------------------------------------------------

    def _bcp(self) -> None:
        while self.bcp_head < len(self.trail):
            lit = self.trail[self.bcp_head]
            self.bcp_head += 1
            self.stats.propagations += 1
            false_lit = -lit
            ws = self.watches.get(false_lit)
            if not ws:
                continue
            keep = []
            i = 0
            while i < len(ws):
                cl = ws[i]
                i += 1
                if cl[0] == false_lit:
                    cl[0], cl[1] = cl[1], cl[0]
                if self._lit_value(cl[0]) == 1:
                    keep.append(cl)
                    continue
                for k in range(2, len(cl)):
                    if self._lit_value(cl[k]) != -1:
                        cl[1], cl[k] = cl[k], cl[1]
                        self.watches.setdefault(cl[1], []).append(cl)
                        break
                else:
                    keep.append(cl)
                    if self._lit_value(cl[0]) == -1:
                        keep.extend(ws[i:])
                        self.watches[false_lit] = keep
                        raise _Conflict(list(cl))
                    self._assign(cl[0], cl)
            self.watches[false_lit] = keep

    def _cycle_clause(self, path: list[Edge]) -> list[int]:
        lits = []
        for e in path:
            owner = self.c.owner(e)
            if owner is not None:
                lits.append(-owner)
        return list(dict.fromkeys(lits))

    def _theory(self) -> bool:
        """Insert edges of new true literals, then imply negations. True if anything changed."""
        changed = False
        while self.theory_head < len(self.trail):
            lit = self.trail[self.theory_head]
            self.theory_head += 1
            for e in self.enc.lit_edges(lit):
                try:
                    if self.c.insert_edge(e.src, e.dst, e.label, owner=lit) == "OK":
                        changed = True
                except CycleDetected as exc:
                    self.stats.theory_conflicts += 1
                    self.last_cycle = exc.path
                    clause = [-lit] + [x for x in self._cycle_clause(exc.path) if x != -lit]
                    raise _Conflict(clause, exc.path) from None
        if not self.theory_propagation or (not changed and not self.scan_pending):
            return False
        self.scan_pending = False
        implied = False
        c = self.c
        for v in range(1, self.enc.num_vars + 1):
            if self.value[v]:
                continue
            pos, neg = self.enc.edges[v]
            for lit, edges in ((v, pos), (-v, neg)):
                for e in edges:
                    if c.reachable(e.dst, e.src):
                        path = c.find_path(e.dst, e.src)
                        self.last_cycle = path + [e]
                        reason = [-lit] + [x for x in self._cycle_clause(path) if x != -lit]
                        self._assign(-lit, reason)
                        self.stats.theory_propagations += 1
                        implied = True
                        break
                if self.value[v]:
                    break
        return implied

    def _propagate(self) -> None:
        while True:
            self._bcp()
            if not self._theory() and self.bcp_head == len(self.trail):
                return

    # -- conflict analysis ----------------------------------------------------

    def _analyze(self, conflict: list[int]) -> tuple[list[int], int]:
        current = max(self.level[abs(l)] for l in conflict)
        if current < len(self.trail_lim):
            self._backtrack(current)
        seen: set[int] = set()
        learnt: list[int] = []
        counter = 0
        idx = len(self.trail) - 1
        clause = conflict
        p = 0
        while True:
            for q in clause:
                v = abs(q)
                if v == abs(p) or v in seen or self.level[v] == 0:
                    continue
                seen.add(v)
                self._bump(v)
                if self.level[v] == current:
                    counter += 1
                else:
                    learnt.append(q)
            while abs(self.trail[idx]) not in seen:
                idx -= 1
            p = self.trail[idx]
            idx -= 1
            counter -= 1
            if counter <= 0:
                break
            clause = self.reason[abs(p)]
        learnt.insert(0, -p)
        back = max((self.level[abs(l)] for l in learnt[1:]), default=0)
        if len(learnt) > 1:
            # second watch on the highest remaining level
            k = max(range(1, len(learnt)), key=lambda i: self.level[abs(learnt[i])])
            learnt[1], learnt[k] = learnt[k], learnt[1]
        self.bump *= 1.05
        return learnt, back

    def _bump(self, v: int) -> None:
        self.activity[v] += self.bump
        if self.activity[v] > 1e100:
            self.activity = [a * 1e-100 for a in self.activity]
            self.bump *= 1e-100

    # -- decisions ------------------------------------------------------------

    def _pick(self) -> int:
        if self.heuristic and self.stats.conflicts < self.VSIDS_AFTER:
            while self.static_pos < len(self.static_order):
                v = self.static_order[self.static_pos]
                if not self.value[v]:
                    return v if self.phase[v] else -v
                self.static_pos += 1
            return 0
        best, best_act = 0, -1.0
        for v in range(1, self.enc.num_vars + 1):
            if not self.value[v] and self.activity[v] > best_act:
                best, best_act = v, self.activity[v]
        if not best:
            return 0
        return best if self.phase[best] else -best

    # -- main loop ------------------------------------------------------------

    def _level0_conflict(self, cf: _Conflict) -> SolveResult:
        if cf.cycle is not None:
            self.last_cycle = cf.cycle
        return SolveResult(UNSAT, learned=self.learned, cycle=self.last_cycle, stats=self.stats)

    def solve(self) -> SolveResult:
        if self.empty_clause:
            return SolveResult(UNSAT, stats=self.stats)
        try:
            for u in self.units:
                val = self._lit_value(u)
                if val == -1:
                    return SolveResult(UNSAT, stats=self.stats)
                if val == 0:
                    self._assign(u, [u])
            self._propagate()
        except _Conflict as cf:
            return self._level0_conflict(cf)

        restart_idx = 1
        restart_at = self.RESTART_UNIT * luby(restart_idx)
        since_restart = 0
        while True:
            lit = self._pick()
            if not lit:
                model = {v: self.value[v] > 0 for v in range(1, self.enc.num_vars + 1)}
                return SolveResult(SAT, model=model, learned=self.learned, stats=self.stats)
            self.stats.decisions += 1
            self._new_level()
            self._assign(lit, None)
            while True:
                try:
                    self._propagate()
                    break
                except _Conflict as cf:
                    self.stats.conflicts += 1
                    since_restart += 1
                    if all(self.level[abs(l)] == 0 for l in cf.clause):
                        return self._level0_conflict(cf)
                    if self.budget is not None and self.stats.conflicts > self.budget:
                        return SolveResult(UNKNOWN, learned=self.learned, stats=self.stats)
                    learnt, back = self._analyze(cf.clause)
                    self._backtrack(back)
                    self.learned.append(list(learnt))
                    self.stats.learned += 1
                    if len(learnt) > 1:
                        self._add_clause(learnt, learnt=True)
                        self._assign(learnt[0], learnt)
                    else:
                        self._assign(learnt[0], [learnt[0]])
                    if since_restart >= restart_at and len(self.trail_lim) > 0:
                        self.stats.restarts += 1
                        since_restart = 0
                        restart_idx += 1
                        restart_at = self.RESTART_UNIT * luby(restart_idx)
                        kept = learnt[0] if back == 0 else None
                        self._backtrack(0)
                        if kept is not None and not self.value[abs(kept)]:
                            self._assign(kept, [kept])


def solve(
    enc: Encoding,
    closure: CompactClosure,
    budget: int | None = None,
    extra_clauses: list[list[int]] = (),
    heuristic: bool = True,
    theory_propagation: bool = True,
) -> SolveResult:
    return Solver(enc, closure, extra_clauses, budget, heuristic, theory_propagation).solve()


# -- independent checks ------------------------------------------------------


def acyclic_with_time(order: TxnOrder, edges: list[tuple[int, int]]) -> bool:
    """Kahn's algorithm on explicit edges plus all time edges, via timestamp chain nodes."""
    n = len(order)
    adj: list[list[int]] = [[] for _ in range(n)]
    for u, v in edges:
        if u != INIT:
            adj[u].append(v)
    if order.use_time and n:
        points = sorted(set(order.start) | set(order.end))
        pos = {p: n + k for k, p in enumerate(points)}
        adj.extend([] for _ in points)
        for k in range(len(points) - 1):
            adj[n + k].append(n + k + 1)
        for i in range(n):
            adj[i].append(pos[order.end[i]])
            adj[pos[order.start[i]]].append(i)
    total = len(adj)
    indeg = [0] * total
    for out in adj:
        for v in out:
            indeg[v] += 1
    ready = [v for v in range(total) if indeg[v] == 0]
    done = 0
    while ready:
        u = ready.pop()
        done += 1
        for v in adj[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                ready.append(v)
    return done == total


def check_model(enc: Encoding, model: dict[int, bool], base_edges: list[tuple[int, int]],
                order: TxnOrder) -> list[str]:
    """Problems with a SAT model, such as an unsatisfied clause or a cycle."""
    problems = []
    for cl in enc.clauses:
        if not any(model[abs(l)] == (l > 0) for l in cl):
            problems.append(f"clause {cl} unsatisfied")
    for group in enc.groups:
        chosen = sum(model[v] for v in group)
        if chosen != 1:
            problems.append(f"alternative group {group} has {chosen} choices")
    for e, a, order_lit in enc.implications:
        if model[a] and model[abs(order_lit)] == (order_lit > 0) and not model[e]:
            problems.append(f"edge variable {e} must hold")
    edges = list(base_edges)
    for v, val in model.items():
        edges.extend((x.src, x.dst) for x in enc.lit_edges(v if val else -v))
    if not acyclic_with_time(order, edges):
        problems.append("compatible graph has a cycle")
    return problems


def clause_is_implied(
    enc: Encoding,
    make_closure: Callable[[], CompactClosure],
    clause: list[int],
    prior: list[list[int]] = (),
) -> bool:
    """Asserting the negation of ``clause`` must fail under propagation alone."""
    s = Solver(enc, make_closure(), extra_clauses=prior)
    if s.empty_clause:
        return True
    try:
        for u in s.units:
            if s._lit_value(u) == -1:
                return True
            if s._lit_value(u) == 0:
                s._assign(u, [u])
        s._propagate()
        for lit in clause:
            val = s._lit_value(-lit)
            if val == -1:
                return True
            if val == 0:
                s._new_level()
                s._assign(-lit, None)
                s.scan_pending = True
                s._propagate()
    except _Conflict:
        return True
    return False
