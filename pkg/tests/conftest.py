import numpy as np
import pytest

from aoiprice.anneal import NeighborhoodGraph
from aoiprice.mdp import AgingMdpInstance, linear_utility
from aoiprice.mobility import build_model

ACCEPTANCE_LINES = []


def random_chain(L, rng, power=1.0):
    """Dense random stochastic matrix; every entry positive, so irreducible."""
    P = rng.random((L, L)) ** power + 1e-3
    return P / P.sum(axis=1, keepdims=True)


def ring_chain(L, stay=0.4):
    P = np.zeros((L, L))
    for i in range(L):
        P[i, i] = stay
        P[i, (i - 1) % L] += (1 - stay) / 2
        P[i, (i + 1) % L] += (1 - stay) / 2
    return P


def line_chain(L, stay=0.4):
    P = np.zeros((L, L))
    for i in range(L):
        P[i, i] = stay
        nb = [j for j in (i - 1, i + 1) if 0 <= j < L]
        for j in nb:
            P[i, j] = (1 - stay) / len(nb)
    return P


def random_mdp(rng, L, M, K, power=3.0):
    """Random instance with a K-level price ladder starting at 0; every level used."""
    K = min(K, L)
    P = random_chain(L, rng, power)
    ladder = np.concatenate([[0.0], np.sort(rng.uniform(0.5, 2 * M, K - 1))])
    level = np.concatenate([np.arange(K), rng.integers(0, K, L - K)])
    rng.shuffle(level)
    return AgingMdpInstance(build_model(P), M, linear_utility(M), ladder[level])


def graph_from_edges(n, edges):
    return NeighborhoodGraph.from_edges(n, edges)


def ring_graph(n):
    return graph_from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def complete_graph(n):
    return graph_from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def record_acceptance(number, title, ok, detail=""):
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}  {detail}".rstrip()
    print(line)
    ACCEPTANCE_LINES.append(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
