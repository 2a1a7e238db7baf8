import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qbcsma.dynamics import ChainState, apply_event, enumerate_transitions
from qbcsma.equilibrium import (
    d_N,
    d_infinity,
    independent_sets,
    manifold_gap,
    pi_infinity,
    stationary_complete,
    stationary_general,
)
from qbcsma.heavy_traffic import manifold_projection
from qbcsma.model import Graph, build_params, psi_minus, psi_plus


def raw_params(n, a, graph="complete", convention="regularized"):
    return build_params({"n": n, "a": a, "lambda_inf": [0.1] * n, "gamma": [0] * n, "N": 1,
                         "graph": graph, "mode": "raw", "convention": convention})


def balance_error(q, a, graph, convention="regularized"):
    """max |π(σ) r(σ→σ') − π(σ') r(σ'→σ)| over schedule flips at frozen q."""
    p = raw_params(len(q), a, graph, convention)
    dist = stationary_general(q, a, p.graph, convention)
    index = {s: i for i, s in enumerate(dist.support)}
    worst = 0.0
    for s, ps in zip(dist.support, dist.probs):
        state = ChainState(tuple(q), frozenset(s))
        for ev, r in enumerate_transitions(state, p):
            if ev[0] not in ("activate", "deactivate"):
                continue
            nxt = apply_event(state, ev, p)
            back = dict(enumerate_transitions(nxt, p))
            rev = ("deactivate" if ev[0] == "activate" else "activate", ev[1])
            worst = max(worst, abs(ps * r - dist.probs[index[nxt.active]] * back[rev]))
    return worst


def test_complete_examples():
    np.testing.assert_allclose(stationary_complete([0, 0], 0.7).probs, [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(stationary_complete([1, 3], 1).probs, [1 / 7, 2 / 7, 4 / 7],
                               atol=1e-15)
    d = stationary_complete([1, 3], 1)
    assert d.support[0] == frozenset() and d.support[2] == frozenset({2})


@settings(max_examples=80)
@given(st.lists(st.integers(0, 10**4), min_size=1, max_size=6), st.floats(0.01, 2))
def test_complete_normalized_and_balanced(q, a):
    d = stationary_complete(q, a)
    assert abs(d.probs.sum() - 1) <= 1e-12 and np.all(d.probs >= 0)
    for v in range(1, len(q) + 1):
        assert d.probs[0] * psi_plus(q[v - 1], a) == pytest.approx(
            d.probs[v] * psi_minus(q[v - 1], a), abs=1e-12)


@settings(max_examples=40)
@given(st.integers(1, 6), st.floats(0.05, 1.5), st.data())
def test_general_restricted_to_complete(n, a, data):
    q = data.draw(st.lists(st.integers(0, 50), min_size=n, max_size=n))
    g = stationary_general(q, a, Graph.complete_graph(n))
    c = stationary_complete(q, a)
    assert g.support == c.support
    np.testing.assert_allclose(g.probs, c.probs, atol=1e-12, rtol=0)


@settings(max_examples=30)
@given(st.integers(2, 6), st.floats(0.05, 1.5), st.data())
def test_general_detailed_balance_random_graphs(n, a, data):
    pairs = [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)]
    edges = data.draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs)))
    q = data.draw(st.lists(st.integers(0, 30), min_size=n, max_size=n))
    assert balance_error(q, a, [list(e) for e in edges]) <= 1e-12


def test_line3_large_q_display():
    d = stationary_general([2, 4, 2], 1, Graph.from_edges(3, [[1, 2], [2, 3]]), "large_q")
    assert d.prob({1, 3}) == pytest.approx(4 / 13, abs=1e-15)
    assert d.prob({2}) == pytest.approx(4 / 13, abs=1e-15)
    assert d.weights.sum() == pytest.approx(1 + 2 + 4 + 2 + 4)


def test_line3_regularized():
    d = stationary_general([2, 4, 2], 1, Graph.from_edges(3, [[1, 2], [2, 3]]))
    assert d.prob({1, 3}) == pytest.approx(9 / 21, abs=1e-15)
    assert balance_error([2, 4, 2], 1.0, [[1, 2], [2, 3]], "large_q") <= 1e-12


def test_empty_graph_product_form():
    q, a = (2, 5), 0.6
    d = stationary_general(q, a, Graph.from_edges(2, []))
    w1, w2 = 3 ** a, 6 ** a
    assert d.support == (frozenset(), frozenset({1}), frozenset({2}), frozenset({1, 2}))
    np.testing.assert_allclose(d.weights, [1, w1, w2, w1 * w2], rtol=1e-15)


def test_independent_sets_counts():
    # the number of independent sets of a path on k nodes is a Fibonacci number
    fib = [2, 3, 5, 8, 13, 21, 34]
    for k, f in enumerate(fib, start=1):
        g = Graph.line(k)
        assert len(independent_sets(g)) == f
    assert len(independent_sets(Graph.cycle(4))) == 7
    with pytest.raises(ValueError):
        independent_sets(Graph.from_edges(17, []))


def test_pi_infinity():
    np.testing.assert_allclose(pi_infinity([1, 3], 1), [0.25, 0.75])
    lam = np.array([0.2, 0.3, 0.5])
    q = manifold_projection(2.0, lam, 0.4)
    np.testing.assert_allclose(pi_infinity(q, 0.4), lam, atol=1e-14)
    np.testing.assert_allclose(pi_infinity([2.5] * 4, 0.3), [0.25] * 4)
    with pytest.raises(ValueError):
        pi_infinity([0, 1], 1)


def test_d_infinity_examples():
    lam = [0.5, 0.5]
    assert d_infinity([1, 3], lam, 1) == pytest.approx(0.5 * np.log(4 / 3), abs=1e-15)
    assert d_infinity([0.5 * np.log(4 / 3)] * 2, lam, 1) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        d_infinity([0, 1], lam, 1)


@settings(max_examples=60)
@given(st.integers(2, 5), st.floats(0.1, 0.9), st.floats(0.1, 10), st.data())
def test_d_infinity_zero_iff_on_manifold(n, a, S, data):
    w = np.array(data.draw(st.lists(st.floats(0.5, 2), min_size=n, max_size=n)))
    lam = w / w.sum()
    q = manifold_projection(S, lam, a)
    assert abs(d_infinity(q, lam, a)) < 1e-12
    assert np.all(manifold_gap(q, lam, a) < 1e-12 * S)
    bump = np.zeros(n)
    bump[data.draw(st.integers(0, n - 1))] = data.draw(st.floats(0.05, 0.5)) * S
    assert d_infinity(q + bump, lam, a) > 0


def test_manifold_gap_example():
    np.testing.assert_allclose(manifold_gap([1, 3], [0.5, 0.5], 1, mu=1), [1, 1])


def test_manifold_gap_pinsker_ratio_bounded():
    # grid sweep over a box inside U; the ratio gap/sqrt(d^∞) has a finite empirical constant
    rng = np.random.default_rng(0)
    lam = np.array([0.3, 0.7])
    a = 0.4
    ratios = []
    for _ in range(2000):
        q = rng.uniform(0.2, 3.0, size=2)
        d = d_infinity(q, lam, a)
        if d > 1e-14:
            ratios.append(np.max(manifold_gap(q, lam, a)) / np.sqrt(d))
    ratios = np.array(ratios)
    assert np.all(np.isfinite(ratios))
    assert ratios.max() < 100 * np.median(ratios)


def test_d_N_approaches_d_infinity():
    lam, a = [0.5, 0.5], 0.5
    grid = [np.array([x, y]) for x in np.linspace(0.2, 3, 8) for y in np.linspace(0.2, 3, 8)]
    sups = [max(abs(d_N(q, lam, a, N) - d_infinity(q, lam, a)) for q in grid)
            for N in (10**2, 10**3, 10**4, 10**5)]
    assert all(x > y for x, y in zip(sups, sups[1:]))
    assert d_N(np.array([1.0, 1.0]), lam, a, 100) > 0


def test_pi_N_renormalized_tends_to_pi_infinity():
    q = np.array([0.5, 1.0, 2.0])
    a = 0.6
    errs = []
    for N in (10**2, 10**3, 10**4):
        p = stationary_complete(N * q, a).probs
        errs.append(np.max(np.abs(p[1:] / (1 - p[0]) - pi_infinity(q, a))))
    assert errs[0] > errs[1] > errs[2]


def test_d_N_large_N_no_overflow():
    assert np.isfinite(d_N(np.array([1.0, 2.0]), [0.5, 0.5], 0.9, 10**12))
