from __future__ import annotations

import random
from pathlib import Path
from types import SimpleNamespace

import pytest

from sercheck.closure import TxnOrder, build_closure, build_order
from sercheck.constraints import gen_item_constraints, gen_predicate_constraints, reduce
from sercheck.graph import build_known_graph
from sercheck.history import load_history, parse_history

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def phantom4():
    return load_history(FIXTURES / "phantom4.hist")


def hist(text: str):
    return parse_history(text)


def random_order(rnd: random.Random, n: int, use_time: bool = True, width: int = 30) -> TxnOrder:
    txns = []
    for i in range(n):
        s = rnd.randint(0, 4 * n + 10)
        txns.append(SimpleNamespace(id=i, start=s, end=s + rnd.randint(1, width)))
    return TxnOrder(txns, use_time)


def random_dag_edges(rnd: random.Random, order: TxnOrder, count: int) -> list[tuple[int, int]]:
    """Edges from lower to higher sorted index; together with time edges they stay acyclic."""
    n = len(order)
    out = set()
    for _ in range(count):
        if n < 2:
            break
        a, b = sorted(rnd.sample(range(n), 2))
        out.add((a, b))
    return sorted(out)


def full_closure(order: TxnOrder, edges) -> list[list[bool]]:
    """Reference reachability including time edges, by Warshall."""
    from sercheck.oracle import warshall_closure

    n = len(order)
    all_edges = list(edges) + [(i, j) for i in range(n) for j in range(n) if i != j and order.time_before(i, j)]
    return warshall_closure(all_edges, n)


def pipeline(h, use_time: bool = True, pruning: bool = True):
    """Everything up to the solver: (order, graph, closure, items, preds, forced, refutation)."""
    order = build_order(h, use_time)
    g = build_known_graph(h, order)
    c = build_closure(order, g.edges)
    items = gen_item_constraints(g, order)
    preds = gen_predicate_constraints(h, g, order)
    forced, refutation = [], None
    if pruning:
        out = reduce(c, items, preds)
        items, preds, forced, refutation = out.items, out.preds, out.forced, out.refutation
    return SimpleNamespace(order=order, graph=g, closure=c, items=items, preds=preds,
                           forced=forced, refutation=refutation)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
