from hypothesis import given, settings, strategies as st

from conftest import hist, pipeline
from sercheck.closure import build_closure, build_order
from sercheck.constraints import NoCompletion, gen_item_constraints, gen_predicate_constraints
from sercheck.closure import CycleDetected
from sercheck.graph import build_known_graph
from sercheck.history import detect_read_anomalies, validate
from sercheck.oracle import count_complete_histories, is_serializable_bruteforce
from sercheck.solver import (
    ALT,
    EDGE,
    ITEM,
    SAT,
    UNKNOWN,
    UNSAT,
    acyclic_with_time,
    check_model,
    clause_is_implied,
    encode,
    expected_clause_count,
    luby,
    solve,
)
from sercheck.workload import random_small_history

# two concurrent writers of a; each is read by someone who also saw the other's b write
CROSSED = """
I t.a v=0
B 1 0 0
W 1 t.a 1 v=1
W 1 t.b 1 v=1
C 1 10
B 2 1 1
W 2 t.a 2 v=2
W 2 t.c 1 v=1
C 2 11
B 5 2 2
R 5 t.a 1
R 5 t.c 1
C 5 12
B 6 3 3
R 6 t.a 2
R 6 t.b 1
C 6 13
"""


def setup(h, use_time=False):
    order = build_order(h, use_time)
    g = build_known_graph(h, order)
    items = gen_item_constraints(g, order)
    preds = gen_predicate_constraints(h, g, order)
    return order, g, items, preds, encode(items, preds)


def test_luby_prefix():
    assert [luby(i) for i in range(1, 16)] == [1, 1, 2, 1, 1, 2, 4, 1, 1, 2, 1, 1, 2, 4, 8]


def test_phantom4_encoding_shape(phantom4):
    order, g, items, preds, enc = setup(phantom4)
    assert len(enc.clauses) == expected_clause_count(preds)
    kinds = sorted(enc.kind.values())
    assert kinds.count(ITEM) == len(items)
    assert kinds.count(ALT) == sum(len(p.alternatives) for p in preds)
    assert kinds.count(EDGE) == len(enc.implications)
    # one at-least-one clause per group, plus pairwise exclusions
    for group in enc.groups:
        assert sorted(group) in [sorted(c) for c in enc.clauses]


def test_phantom4_is_unsat(phantom4):
    order, g, items, preds, enc = setup(phantom4)
    res = solve(enc, build_closure(order, g.edges))
    assert res.status == UNSAT


def test_crossed_reads_are_unsat_without_pruning():
    h = hist(CROSSED)
    order, g, items, preds, enc = setup(h)
    assert len(items) == 1
    for theory in (True, False):
        res = solve(enc, build_closure(order, g.edges), theory_propagation=theory)
        assert res.status == UNSAT
    assert not is_serializable_bruteforce(h).serializable


def test_sat_model_passes_independent_check():
    h = hist(CROSSED.replace("R 6 t.b 1\n", ""))
    order, g, items, preds, enc = setup(h)
    res = solve(enc, build_closure(order, g.edges))
    assert res.status == SAT
    assert check_model(enc, res.model, list(g.edges), order) == []
    # flipping the write order closes a cycle through t5
    bad = {v: not val for v, val in res.model.items()}
    assert check_model(enc, bad, list(g.edges), order)


def test_zero_budget_is_unknown():
    h = hist(CROSSED)
    order, g, items, preds, enc = setup(h)
    c = build_closure(order, g.edges)
    res = solve(enc, c, budget=0, theory_propagation=False)
    assert res.status in (UNKNOWN, UNSAT)
    assert solve(enc, build_closure(order, g.edges), budget=0).status != SAT


def test_acyclic_with_time_sees_timestamp_chains():
    h = hist("B 1 0 0\nC 1 5\nB 2 1 10\nC 2 15\nB 3 2 20\nC 3 25\n")
    order = build_order(h)
    assert acyclic_with_time(order, [(0, 2)])
    # t3 precedes t1 in real time only transitively through t2
    assert not acyclic_with_time(order, [(2, 0)])
    assert acyclic_with_time(build_order(h, use_time=False), [(2, 0)])


def _instance(seed, use_time):
    h = random_small_history(seed, max_keys=2, max_writers=6, clean_reads=True)
    if validate(h) or detect_read_anomalies(h) or count_complete_histories(h) > 3000:
        return None
    order = build_order(h, use_time)
    g = build_known_graph(h, order)
    try:
        build_closure(order, g.edges)
        preds = gen_predicate_constraints(h, g, order)
    except (CycleDetected, NoCompletion):
        return None
    return h, order, g, encode(gen_item_constraints(g, order), preds)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**6), st.booleans(), st.booleans())
def test_solver_agrees_with_oracle_and_replays(seed, use_time, theory):
    inst = _instance(seed, use_time)
    if inst is None:
        return
    h, order, g, enc = inst

    def make():
        return build_closure(order, g.edges)

    res = solve(enc, make(), theory_propagation=theory)
    assert res.status in (SAT, UNSAT)
    assert (res.status == SAT) == is_serializable_bruteforce(h, real_time=use_time).serializable
    if res.status == SAT:
        assert check_model(enc, res.model, list(g.edges), order) == []
    else:
        assert solve(enc, make(), extra_clauses=res.learned).status == UNSAT
    prior = []
    for clause in res.learned:
        assert clause_is_implied(enc, make, clause, prior)
        prior.append(clause)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_pruned_constraints_keep_the_answer(seed):
    h = random_small_history(seed, clean_reads=True)
    if validate(h) or detect_read_anomalies(h) or count_complete_histories(h) > 3000:
        return
    try:
        p = pipeline(h, use_time=True)
    except (CycleDetected, NoCompletion):
        return
    if p.refutation is not None:
        return
    res = solve(encode(p.items, p.preds), p.closure)
    assert (res.status == SAT) == is_serializable_bruteforce(h, real_time=True).serializable
