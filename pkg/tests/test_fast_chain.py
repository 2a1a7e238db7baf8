import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qbcsma.equilibrium import stationary_complete
from qbcsma.fast_chain import (
    BoundInapplicable,
    fast_chain_report,
    generator_matrix,
    hitting_and_mixing,
    hitting_closed_forms,
    hitting_times,
    log_sobolev_lower_bound,
    mixing_time,
    omega_and_b,
    scaled_constants,
    scaled_poisson,
    sign_vectors,
    solve_poisson,
    spectral_gap,
    sup_phi,
    sup_phi_difference,
    tv_curve,
    u_grid,
)
from qbcsma.model import psi_minus, psi_plus

queues = st.lists(st.integers(0, 10**4), min_size=1, max_size=6)


def star_poisson_oracle(q, a, g):
    """Closed form for the star chain: φ(v) = φ(0) − b(v)/Ψ₋(q_v) with b = g − π[g]."""
    pi = stationary_complete(q, a).probs
    b = np.asarray(g, float) - pi @ g
    down = np.array([psi_minus(x, a) for x in q])
    # mean zero: φ(0) − Σ_v π(v) b(v)/Ψ₋(q_v) = 0
    phi0 = np.sum(pi[1:] * b[1:] / down)
    return np.concatenate([[phi0], phi0 - b[1:] / down])


def test_generator_star_shape():
    L = generator_matrix([1, 3], 1)
    np.testing.assert_allclose(L.sum(axis=1), 0, atol=1e-15)
    assert L[1, 2] == 0 and L[2, 1] == 0
    assert L[0, 2] == pytest.approx(0.8) and L[2, 0] == pytest.approx(0.2)


@pytest.mark.parametrize("q", [0, 1, 7, 1000])
@pytest.mark.parametrize("a", [0.2, 1.0])
def test_two_state_poisson(q, a):
    sol = solve_poisson([q], a, [0.0, 1.0])
    np.testing.assert_allclose(sol.phi, [psi_plus(q, a), -psi_minus(q, a)], atol=1e-12)
    assert sol.residual <= 1e-10 and abs(sol.mean) <= 1e-12


def test_constant_g_gives_zero():
    sol = solve_poisson([3, 0, 9], 0.4, lambda s: 2.5)
    np.testing.assert_allclose(sol.phi, 0, atol=1e-13)


@settings(max_examples=60)
@given(queues, st.floats(0.05, 1.0), st.data())
def test_poisson_residual_and_oracle(q, a, data):
    g = np.array(data.draw(st.lists(st.floats(-1, 1), min_size=len(q) + 1, max_size=len(q) + 1)))
    sol = solve_poisson(q, a, g)
    assert sol.residual <= 1e-10
    assert abs(sol.mean) <= 1e-12
    np.testing.assert_allclose(sol.phi, star_poisson_oracle(q, a, g), atol=1e-9 * max(1, np.abs(sol.phi).max()))


def test_scaled_poisson_relation():
    N, a = 50, 0.3
    g = [1.0, -1.0, 0.5]
    phi = scaled_poisson([0.4, 1.0], N, a, g)
    np.testing.assert_allclose(phi, solve_poisson([20, 50], a, g).phi / N ** 1.3, rtol=1e-14)


@pytest.mark.parametrize("q", [0, 3, 10**5])
def test_single_node_gap(q):
    assert spectral_gap([q], 0.37) == pytest.approx(1.0, abs=1e-12)


@given(queues, st.floats(0.05, 1.0))
def test_gap_positive_and_order_bound(q, a):
    gap = spectral_gap(q, a)
    assert gap > 0
    # Order statement: ℓ ≥ C/‖q+1‖^a_∞ with a fixed C; C = 1/8 covers n ≤ 6
    assert gap * (max(q) + 1) ** a > 0.125 / len(q)


def test_lsi_bound_behaviour():
    lsi = log_sobolev_lower_bound([10, 10], 1)
    assert 0 < lsi < spectral_gap([10, 10], 1)
    gap = spectral_gap([5, 5], 0.5)
    assert log_sobolev_lower_bound([5, 5], 0.5, gap=2 * gap) == pytest.approx(
        2 * log_sobolev_lower_bound([5, 5], 0.5, gap=gap))


def test_lsi_bound_limit_near_half():
    # both 1 − 2π₀ and log((1 − π₀)/π₀) vanish; their ratio tends to 1/2
    ratios = [log_sobolev_lower_bound([1], a) / spectral_gap([1], a) for a in (1e-2, 1e-3, 1e-5)]
    assert all(r < 0.5 for r in ratios)
    assert abs(ratios[-1] - 0.5) < 1e-10


def test_bound_inapplicable():
    with pytest.raises(BoundInapplicable):
        log_sobolev_lower_bound([0], 0.5)
    with pytest.raises(BoundInapplicable):
        omega_and_b([0], 0.5)


def test_omega_limit_near_half():
    # Ω·ℓ → 2·sqrt(log 2) as π₀ → 1/2⁻ (numerator and denominator vanish together)
    vals = [omega_and_b([1], a)[0] * spectral_gap([1], a) for a in (0.1, 0.01, 1e-3, 1e-5)]
    assert all(x > y for x, y in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(2 * np.sqrt(np.log(2)), rel=1e-5)


def test_bounds_at_example_point():
    q, a = np.array([50.0, 50.0]), 0.3
    omega, b = omega_and_b(q, a)
    assert sup_phi(q, a) <= omega
    for v in range(2):
        for step in (1, -1):
            y = q.copy()
            y[v] += step
            assert sup_phi_difference(q, y, a) <= b[v]


def test_sign_vector_sup_equals_row_sums():
    from qbcsma.fast_chain import poisson_operator

    K = poisson_operator([3, 8, 1], 0.4)
    assert sup_phi([3, 8, 1], 0.4) == pytest.approx(np.abs(K).sum(axis=1).max(), rel=1e-14)
    assert sign_vectors(3).shape == (8, 3)


@given(st.lists(st.integers(0, 2000), min_size=1, max_size=5), st.floats(0.05, 1.0))
def test_hitting_identities(q, a):
    H = hitting_times(q, a)
    np.testing.assert_allclose(H[1:, 0], 1 + (np.array(q) + 1.0) ** a, rtol=1e-10)
    to_zero, hold0, from_zero = hitting_closed_forms(q, a)
    np.testing.assert_allclose(H[0, 1:], from_zero, rtol=1e-10)
    assert hold0 == pytest.approx(1 / sum(psi_plus(x, a) for x in q))
    assert hold0 <= 2 / len(q)


def test_tv_curve_and_mixing():
    q, a = [20, 40], 0.5
    t = mixing_time(q, a)
    d = tv_curve(q, a, [0.999 * t, t, 1.001 * t])
    thr = 1 / (2 * np.e)
    assert d[0] >= thr - 1e-9 and d[2] < thr
    assert t >= 1 / spectral_gap(q, a) - 1


def test_report_fields():
    r = fast_chain_report([10, 12], 0.4)
    assert r.gap > 0 and r.omega > 0 and len(r.b) == 2
    H, tmix = hitting_and_mixing([10, 12], 0.4)
    assert r.t_mix == tmix and np.allclose(r.hitting, H)
    idle = fast_chain_report([0], 0.4)
    assert idle.omega is None and idle.log_sobolev_lb is None


def test_u_grid_inside_U():
    g = u_grid(0.1, 5.0, 2, 100)
    assert len(g) > 0
    s = g.sum(axis=1)
    assert np.all((s > 0.2) & (s < 5) & (g.min(axis=1) > 0.1))
    assert np.allclose(g * 100, np.rint(g * 100))
    assert u_grid(3.0, 2.0, 2, 10).shape == (0, 2)


def test_scaled_constant_orders():
    a = 0.25
    om, bn, th = [], [], []
    for N in (10**2, 10**3, 10**4):
        grid = u_grid(0.2, 4.0, 2, N, points=3)
        o, b, t = scaled_constants(N, a, grid)
        om.append(o * N / np.log(N) ** 1.5)
        bn.append(b * N**2 / np.log(N) ** 3)
        th.append(t)
    # bounded above along the sweep: no growth beyond a constant factor
    assert max(om) <= 4 * om[0]
    assert max(bn) <= 4 * bn[0]
    assert th[0] > th[1] > th[2]
    with pytest.raises(ValueError):
        scaled_constants(10, a, np.empty((0, 2)))
