from hypothesis import given, settings, strategies as st

from conftest import hist
from sercheck.closure import build_closure, build_order
from sercheck.deps import INIT, RW, WR
from sercheck.graph import build_known_graph
from sercheck.history import detect_read_anomalies, item_reads, validate
from sercheck.workload import random_small_history

# t1 writes a:1; t2 reads a:1 well after; t3 writes a:2 between t1 and t2's end.
CHAIN = """
I t.a v=0
B 1 0 0
W 1 t.a 1 v=1
C 1 10
B 3 1 12
W 3 t.a 2 v=2
C 3 20
B 2 2 15
R 2 t.a 1
C 2 40
B 4 3 50
W 4 t.a 3 v=3
C 4 60
"""


def edges_by_id(g):
    ids = g.order.ids
    return {(ids[u], ids[v]): lab for (u, v), lab in g.edges.items()}


def test_read_edge_and_time_window_antidependency():
    h = hist(CHAIN)
    g = build_known_graph(h, build_order(h))
    e = edges_by_id(g)
    assert e[(1, 2)].kind == WR and e[(1, 2)].vid == 1
    # t3 starts after t1 commits and before t2 commits: it overwrote what t2 saw
    assert e[(2, 3)].kind == RW
    # t4 starts after t2 commits, so time alone orders them
    assert (2, 4) not in e


def test_without_time_only_initial_readers_get_antidependencies():
    h = hist(CHAIN + "B 5 4 70\nR 5 t.a 0\nC 5 80\n")
    g = build_known_graph(h, build_order(h, use_time=False))
    e = edges_by_id(g)
    assert (2, 3) not in e
    assert {v for (u, v), lab in e.items() if u == 5 and lab.kind == RW} == {1, 3, 4}


def test_initial_reader_in_time_mode_points_at_earlier_installers():
    h = hist(CHAIN + "B 5 4 5\nR 5 t.a 0\nC 5 14\n")
    g = build_known_graph(h, build_order(h))
    rw = {v for (u, v), lab in edges_by_id(g).items() if u == 5 and lab.kind == RW}
    # installers that start before t5 commits
    assert rw == {1, 3}


def test_writer_and_reader_indexes():
    h = hist(CHAIN)
    g = build_known_graph(h, build_order(h))
    ix = g.order.index
    assert g.writers_of("t.a")[0] == (0, INIT)
    assert g.readers_of("t.a", 1) == [ix[2]]
    assert g.installed_vid("t.a", ix[3]) == 2


def test_dot_dump_lists_vertices_and_labels():
    h = hist(CHAIN)
    dot = build_known_graph(h, build_order(h)).to_dot()
    assert dot.startswith("digraph known {")
    assert 't1 -> t2 [label="WR(t.a:1)"]' in dot


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.booleans())
def test_every_read_edge_comes_from_a_real_read(seed, use_time):
    h = random_small_history(seed, clean_reads=True)
    if validate(h) or detect_read_anomalies(h):
        return
    order = build_order(h, use_time)
    g = build_known_graph(h, order)
    ids = order.ids
    for (u, v), lab in g.edges.items():
        assert u != v and u != INIT
        if lab.kind == WR:
            assert h.installed[ids[u]][lab.key] == lab.vid
        if lab.kind == RW:
            assert lab.key in h.installed[ids[v]]
            if use_time:
                # the overwrite starts after the observed version was committed
                writers = [h.versions[(k, vid)].writer for _, k, vid in item_reads(h.by_id[ids[u]])
                           if k == lab.key]
                assert any(w is None or h.by_id[w].end <= order.start[v] for w in writers)
    try:
        build_closure(order, g.edges)
    except Exception as exc:  # a cycle here must be a genuine one
        assert type(exc).__name__ == "CycleDetected"
