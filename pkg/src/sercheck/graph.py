"""Known dependency graph derived from an observed history.

Vertices are positions in a :class:`~sercheck.closure.TxnOrder`.  Edges that
follow from timestamps alone are never stored; the closure answers them.
"""

from __future__ import annotations

from bisect import bisect_left
from collections import defaultdict
from dataclasses import dataclass, field

from .closure import TxnOrder
from .deps import INIT, RW, WR, DependencyLabel, Edge
from .history import INIT_VID, ObservedHistory, item_reads


@dataclass
class KnownGraph:
    order: TxnOrder
    edges: dict[tuple[int, int], DependencyLabel] = field(default_factory=dict)
    # key -> [(vid, vertex)] with the initial version (vertex INIT) first
    writers: dict[str, list[tuple[int, int]]] = field(default_factory=dict)
    # (key, vid) -> sorted reader vertices
    readers: dict[tuple[str, int], list[int]] = field(default_factory=dict)

    def writers_of(self, key: str) -> list[tuple[int, int]]:
        return self.writers.get(key, [])

    def readers_of(self, key: str, vid: int) -> list[int]:
        return self.readers.get((key, vid), [])

    def installed_vid(self, key: str, vertex: int) -> int | None:
        for vid, w in self.writers.get(key, ()):
            if w == vertex:
                return vid
        return None

    def add(self, u: int, v: int, label: DependencyLabel) -> None:
        if u != v and u != INIT:
            self.edges.setdefault((u, v), label)

    def labeled_edges(self) -> list[Edge]:
        return [Edge(u, v, lab) for (u, v), lab in self.edges.items()]

    def to_dot(self) -> str:
        ids = self.order.ids
        lines = ["digraph known {"]
        for i, tid in enumerate(ids):
            lines.append(f'  t{tid} [label="t{tid}\\n[{self.order.start[i]},{self.order.end[i]}]"];')
        for (u, v), lab in sorted(self.edges.items()):
            lines.append(f'  t{ids[u]} -> t{ids[v]} [label="{lab}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def build_known_graph(h: ObservedHistory, order: TxnOrder) -> KnownGraph:
    """Read, and (with timestamps) anti-dependency edges of ``h``.

    Callers screen read anomalies first, so every non-self read names an
    installed version of a committed writer or an initial version.
    """
    g = KnownGraph(order)
    index = order.index
    versions = h.versions

    writers: dict[str, list[tuple[int, int]]] = defaultdict(list)
    for key in h.initial:
        writers[key].append((INIT_VID, INIT))
    for i, t in enumerate(order.txns):
        for key, vid in h.installed[t.id].items():
            writers[key].append((vid, i))
    g.writers = dict(writers)

    readers: dict[tuple[str, int], set[int]] = defaultdict(set)
    for r, t in enumerate(order.txns):
        for _, key, vid in item_reads(t):
            v = versions[(key, vid)]
            if v.writer == t.id:
                continue
            readers[(key, vid)].add(r)
            if v.writer is not None:
                g.add(index[v.writer], r, DependencyLabel(WR, key, vid))
    g.readers = {kv: sorted(rs) for kv, rs in readers.items()}

    start, end = order.start, order.end
    for key, ws in g.writers.items():
        # non-initial installers sorted by start for window lookups
        later = sorted((start[w], w) for _, w in ws if w != INIT)
        starts = [s for s, _ in later]
        for vid, w in ws:
            rs = g.readers.get((key, vid))
            if not rs:
                continue
            label = DependencyLabel(RW, key)
            for r in rs:
                if w == INIT:
                    # the initial version precedes every installed one
                    lo_pos, hi_pos = 0, len(later)
                    if order.use_time:
                        hi_pos = bisect_left(starts, end[r])
                elif order.use_time:
                    # installers that start after w ends follow it in version order
                    lo_pos = bisect_left(starts, end[w])
                    hi_pos = bisect_left(starts, end[r])
                else:
                    continue
                for pos in range(lo_pos, hi_pos):
                    j = later[pos][1]
                    if j != w and j != r:
                        g.add(r, j, label)
    return g
