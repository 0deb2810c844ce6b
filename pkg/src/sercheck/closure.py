"""Compact transitive closure over timestamp-ordered transactions.

Transactions are sorted by start timestamp.  Transaction ``i`` only stores
reachability for the window ``lo[i] <= j <= hi[i]`` of transactions that
overlap it; everything after the window is reachable through a time
dependency and nothing before it can be reachable in an acyclic graph.

Row ``i`` lives at ``R[O[i] + j - L[i]]``.  ``P`` maps a cell index to the
inserted edge that made it true, which lets :meth:`CompactClosure.find_path`
rebuild a witness path without storing one per cell.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from itertools import accumulate
from typing import Iterable, Mapping, Sequence

from .deps import TIME_LABEL, DependencyLabel, Edge
from .history import ObservedHistory, Transaction

OK = "OK"
NOOP = "NOOP"


class CycleDetected(Exception):
    def __init__(self, path: list[Edge]):
        super().__init__(f"cycle of length {len(path)}")
        self.path = path


class TxnOrder:
    """Committed transactions sorted by (start, end, id) with overlap windows."""

    def __init__(self, txns: Iterable[Transaction], use_time: bool = True):
        self.txns: list[Transaction] = sorted(txns, key=lambda t: (t.start, t.end, t.id))
        self.use_time = use_time
        n = len(self.txns)
        self.ids = [t.id for t in self.txns]
        self.index = {tid: i for i, tid in enumerate(self.ids)}
        self.start = [t.start for t in self.txns]
        self.end = [t.end for t in self.txns]
        if not use_time:
            self.lo = [0] * n
            self.hi = [n - 1] * n
            self.min_succ = [-1] * n
            return
        prefix_max = list(accumulate(self.end, max))
        # first j whose end exceeds s_i; the prefix maximum crosses s_i there
        self.lo = [bisect_right(prefix_max, s) for s in self.start]
        self.hi = [bisect_left(self.start, e) - 1 for e in self.end]
        suffix = [-1] * (n + 1)
        for i in range(n - 1, -1, -1):
            best = suffix[i + 1]
            suffix[i] = i if best < 0 or self.end[i] <= self.end[best] else best
        self.min_succ = [suffix[h + 1] for h in self.hi]

    def __len__(self) -> int:
        return len(self.txns)

    def time_before(self, i: int, j: int) -> bool:
        return self.use_time and self.end[i] <= self.start[j]

    def overlap(self, i: int, j: int) -> bool:
        return not (self.end[i] <= self.start[j] or self.end[j] <= self.start[i])

    @property
    def cell_count(self) -> int:
        return sum(h - l + 1 for l, h in zip(self.lo, self.hi))


def build_order(h: ObservedHistory, use_time: bool = True) -> TxnOrder:
    return TxnOrder(h.committed, use_time)


class Trail:
    """Undo log of closure changes with LIFO savepoints."""

    def __init__(self):
        self.entries: list[tuple] = []
        self.marks: list[int] = []

    def __len__(self) -> int:
        return len(self.entries)

    def savepoint(self) -> int:
        self.marks.append(len(self.entries))
        return len(self.marks) - 1


class CompactClosure:
    def __init__(self, order: TxnOrder, edges: Mapping[tuple[int, int], DependencyLabel]):
        self.order = order
        n = len(order)
        self.L = order.lo
        self.O = [0] * n
        total = 0
        for i in range(n):
            self.O[i] = total
            total += order.hi[i] - order.lo[i] + 1
        self.R = bytearray(total)
        self.P: dict[int, tuple[int, int]] = {}
        self.succ: list[list[int]] = [[] for _ in range(n)]
        self.edge_info: dict[tuple[int, int], tuple[DependencyLabel, object]] = {}
        for (u, v), label in edges.items():
            self.succ[u].append(v)
            self.edge_info[(u, v)] = (label, None)
        self.trail = Trail()

    def __len__(self) -> int:
        return len(self.order)

    @property
    def cells(self) -> int:
        return len(self.R)

    def cell(self, i: int, j: int) -> int | None:
        lo = self.L[i]
        if lo <= j <= self.order.hi[i]:
            return self.O[i] + j - lo
        return None

    def reachable(self, i: int, j: int) -> bool:
        if i == j:
            return True
        lo = self.L[i]
        if j > self.order.hi[i]:
            return True
        if j < lo:
            return False
        return self.R[self.O[i] + j - lo] == 1

    def snapshot(self) -> tuple[bytes, dict[int, tuple[int, int]]]:
        return bytes(self.R), dict(self.P)

    def matrix(self) -> list[list[bool]]:
        n = len(self)
        return [[self.reachable(i, j) for j in range(n)] for i in range(n)]

    # -- mutation ---------------------------------------------------------

    def savepoint(self) -> int:
        return self.trail.savepoint()

    def rollback(self, savepoint: int) -> None:
        trail = self.trail
        if not 0 <= savepoint < len(trail.marks):
            raise KeyError(f"unknown savepoint {savepoint}")
        mark = trail.marks[savepoint]
        entries = trail.entries
        R, P = self.R, self.P
        while len(entries) > mark:
            entry = entries.pop()
            if entry[0] == "edge":
                _, u, v = entry
                self.succ[u].pop()
                del self.edge_info[(u, v)]
            else:
                k, old_r, old_p = entry
                R[k] = old_r
                if old_p is None:
                    P.pop(k, None)
                else:
                    P[k] = old_p
        del trail.marks[savepoint:]

    def insert_edge(self, i: int, j: int, label: DependencyLabel, owner: object = None) -> str:
        """Add edge i -> j; returns OK or NOOP, raises CycleDetected with the closing path."""
        n = len(self)
        if not (0 <= i < n and 0 <= j < n):
            raise IndexError(f"edge ({i}, {j}) out of range")
        if i == j:
            raise ValueError("self edge")
        if self.reachable(i, j):
            return NOOP
        if self.reachable(j, i):
            raise CycleDetected(self.find_path(j, i) + [Edge(i, j, label)])
        entries = self.trail.entries
        self.succ[i].append(j)
        self.edge_info[(i, j)] = (label, owner)
        entries.append(("edge", i, j))

        lo, hi, O, R, P = self.L, self.order.hi, self.O, self.R, self.P
        lo_i, hi_i, lo_j, hi_j = lo[i], hi[i], lo[j], hi[j]
        base_j = O[j] - lo_j
        pq = (i, j)
        for u in range(lo_j, min(hi_i, hi_j) + 1):
            if not self.reachable(u, i):
                continue
            lo_u = lo[u]
            base_u = O[u] - lo_u
            v_lo = max(lo_u, lo_i, lo_j)
            v_hi = min(hi[u], hi_i)
            for v in range(v_lo, v_hi + 1):
                k = base_u + v
                if R[k]:
                    continue
                # r(j, v): past j's window it holds by time
                if v == j or v > hi_j or R[base_j + v]:
                    R[k] = 1
                    P[k] = pq
                    entries.append((k, 0, None))
        return OK

    # -- paths ------------------------------------------------------------

    def _successors(self, a: int) -> Sequence[int]:
        return self.succ[a]

    def find_path(self, i: int, j: int) -> list[Edge]:
        """Edges of a path i ~> j; requires reachable(i, j)."""
        out: list[Edge] = []
        order = self.order
        hi = order.hi
        stack: list[tuple] = [(i, j)]
        while stack:
            item = stack.pop()
            if len(item) == 3:
                out.append(item[2])
                continue
            a, b = item
            if a == b:
                continue
            info = self.edge_info.get((a, b))
            if info is not None:
                out.append(Edge(a, b, info[0]))
                continue
            if order.time_before(a, b):
                out.append(Edge(a, b, TIME_LABEL))
                continue
            k = self.cell(a, b)
            if k is None or not self.R[k]:
                raise ValueError(f"{b} is not reachable from {a}")
            pq = self.P.get(k)
            if pq is not None:
                p, q = pq
                stack.append((q, b))
                stack.append((p, q, Edge(p, q, self.edge_info[(p, q)][0])))
                stack.append((a, p))
                continue
            step = None
            for w in self.succ[a]:
                if w == b or self.reachable(w, b):
                    step = Edge(a, w, self.edge_info[(a, w)][0])
                    break
            if step is None and order.use_time:
                for w in range(hi[a] + 1, min(hi[b], len(self) - 1) + 1):
                    if self.reachable(w, b):
                        step = Edge(a, w, TIME_LABEL)
                        break
            if step is None:
                raise AssertionError(f"closure claims {a} ~> {b} but no successor reaches it")
            stack.append((step.dst, b))
            out.append(step)
        return out

    def owner(self, edge: Edge) -> object:
        info = self.edge_info.get((edge.src, edge.dst))
        return None if info is None else info[1]


def build_closure(order: TxnOrder, edges: Mapping[tuple[int, int], DependencyLabel]) -> CompactClosure:
    """Compact closure of ``edges`` plus implied time edges; raises CycleDetected."""
    c = CompactClosure(order, edges)
    n = len(order)
    lo, hi, msucc = order.lo, order.hi, order.min_succ
    succ = c.succ
    state = bytearray(n)  # 0 new, 1 on stack, 2 done
    queue: list[int] = []
    og = n
    # frame: [vertex, next explicit-successor position, next time-successor index]
    for root in range(n):
        if state[root]:
            continue
        stack = [[root, 0, hi[root] + 1]]
        via: list[Edge | None] = [None]
        state[root] = 1
        while stack:
            frame = stack[-1]
            u = frame[0]
            nxt = -1
            label = TIME_LABEL
            out = succ[u]
            while frame[1] < len(out):
                w = out[frame[1]]
                frame[1] += 1
                if state[w] == 2:
                    continue
                nxt = w
                label = c.edge_info[(u, w)][0]
                break
            if nxt < 0:
                while frame[2] < og:
                    w = frame[2]
                    frame[2] += 1
                    if state[w] != 2:
                        nxt = w
                        break
            if nxt < 0:
                stack.pop()
                via.pop()
                state[u] = 2
                queue.append(u)
                if hi[u] + 1 < og:
                    og = hi[u] + 1
                continue
            if state[nxt] == 1:
                pos = next(k for k, f in enumerate(stack) if f[0] == nxt)
                path = [e for e in via[pos + 1:]] + [Edge(u, nxt, label)]
                raise CycleDetected(path)
            state[nxt] = 1
            stack.append([nxt, 0, hi[nxt] + 1])
            via.append(Edge(u, nxt, label))

    # Descendants of i: every index >= down[i] plus the bitset S[i] (bit k is index lo[i] + k).
    down = [0] * n
    S = [0] * n
    R, O = c.R, c.O
    for i in queue:
        lo_i = lo[i]
        d = hi[i] + 1
        s = 1 << (i - lo_i)
        m = msucc[i]
        limit = hi[m] if m >= 0 else hi[i]
        merge = [j for j in succ[i] if j <= limit]
        merge.extend(range(hi[i] + 1, limit + 1))
        for j in merge:
            dj = down[j]
            if dj < d:
                d = dj
            shift = lo[j] - lo_i
            s |= S[j] << shift if shift >= 0 else S[j] >> -shift
        s &= (1 << (d - lo_i)) - 1
        S[i] = s
        down[i] = d
        base = O[i]
        width = hi[i] - lo_i + 1
        bits = s
        if d <= hi[i]:
            bits |= ((1 << (hi[i] - d + 1)) - 1) << (d - lo_i)
        if bits:
            row = bin(bits)[2:].zfill(width)[::-1]
            R[base:base + width] = row.encode().translate(_BITS)
    return c


_BITS = bytes.maketrans(b"01", b"\x00\x01")


def warshall_cells_agree(c: CompactClosure, full: Sequence[Sequence[bool]]) -> bool:
    n = len(c)
    return all(c.reachable(i, j) == bool(full[i][j]) for i in range(n) for j in range(n))
