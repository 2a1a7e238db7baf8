import numpy as np
import pytest

from qbcsma.equilibrium import d_infinity_path, stationary_complete
from qbcsma.experiments import (
    EstimateTable,
    ExperimentSpec,
    batch_means,
    collapse_experiment,
    convergence_experiment,
    decreasing_at_95,
    frozen_averaging_error,
    general_graph_probe,
    homogenization_experiment,
    initial_state,
    line3_product_ratio,
    loglog_slope,
    replicate,
    run_replication,
    square_stability,
    stationary_probe,
    worker_count,
)
from qbcsma.fast_chain import solve_poisson
from qbcsma.model import Graph, build_params
from qbcsma.dynamics import simulate

HALF = [0.5, 0.5]


def base(a=0.25, lam=HALF, gamma=(0, 0), N=50):
    return build_params({"n": len(lam), "a": a, "lambda_inf": list(lam), "gamma": list(gamma),
                         "N": N})


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec(base(), [50, 200], reps=1)
    with pytest.raises(ValueError):
        ExperimentSpec(base(), [200, 50], reps=2)
    with pytest.raises(ValueError):
        ExperimentSpec(base(), [10**6], reps=2, budget=1000)
    with pytest.raises(ValueError):
        ExperimentSpec(base(), [50], reps=2, localization="other")


def zero_sum(q):
    return 0.0


def test_degenerate_frozen_configuration():
    # S0 = β and frozen queues: the limit path and the process both sit still
    p = build_params({"n": 2, "a": 0.5, "lambda_inf": HALF, "gamma": [0.25, 0.25], "N": 50})
    spec = ExperimentSpec(p, [50, 100], T=1.0, reps=3, seed=1, S0=2.0, freeze_queues=True)
    table = convergence_experiment(spec, workers=1)
    np.testing.assert_allclose(table.means("sup_l1"), 0.0, atol=1e-12)
    np.testing.assert_allclose(table.means("survived"), 1.0)
    h = homogenization_experiment(spec, f=zero_sum, workers=1)
    np.testing.assert_array_equal(h.means("averaging"), 0.0)


def test_replication_independence_across_workers():
    spec = ExperimentSpec(base(), [30, 60], T=1.0, reps=4, seed=9, S0=2.0)
    serial = replicate(spec, workers=1)
    parallel = replicate(spec, workers=2)
    assert serial == parallel
    single = run_replication(spec, 60, 2)
    assert single == serial[4 + 2]


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("QBCSMA_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("QBCSMA_THREADS", "0")
    assert worker_count() >= 1


def test_budget_errors_reported_not_fatal():
    spec = ExperimentSpec(base(), [50], T=1.0, reps=3, seed=2, S0=2.0)
    spec.budget = 10
    table = convergence_experiment(spec, workers=1)
    assert len(table.metadata["errors"]) == 3
    assert table.get("sup_l1")[0]["reps"] == 0


def test_initial_rounding_perturbation():
    lam = [0.3, 0.7]
    p = base(lam=lam, a=0.5, N=100)
    for N in (100, 1000):
        init, q0 = initial_state(p.with_N(N), 2.0)
        d0 = d_infinity_path(np.array([init.q]) / N, lam, 0.5)[0]
        assert d0 < 1e-3
    spec = ExperimentSpec(p, [100, 400], T=0.2, reps=2, seed=3, S0=2.0)
    t = collapse_experiment(spec, workers=1)
    assert np.all(t.means("d_inf_0") < 1e-3)


def test_collapse_symmetric_permutation_invariance():
    p = base(N=40)
    init, _ = initial_state(p, 2.0)
    traj = simulate(p, init, p.time_scale, 4)
    qs = traj.queue_path() / 40.0
    np.testing.assert_allclose(d_infinity_path(qs, HALF, 0.25), d_infinity_path(qs[:, ::-1], HALF, 0.25),
                               rtol=1e-13, atol=1e-16)


def test_convergence_small_run_shape():
    spec = ExperimentSpec(base(), [50, 200], T=1.0, reps=6, seed=4, S0=2.0, localization="literal")
    table = convergence_experiment(spec, workers=1)
    assert [r["estimator"] for r in table.rows] == ["sup_l1", "sup_s", "survived"] * 2
    assert table.metadata["threshold"] == pytest.approx(0.5)
    assert table.metadata["M"] > 2 and table.metadata["M_literal"] == 0.5


def test_frozen_chain_clt_magnitude():
    # ∫(σ_v − π(v)) over unscaled time u has variance ≈ −2 π[φ h̄]·u; E sup|B| = sqrt(π/2)·σ·sqrt(T)
    N, a, q, T = 20, 0.5, (20, 20), 20.0
    p = base(a=a, N=N)
    reps = 120
    vals = [frozen_averaging_error(p, q, 1, T, seed=5, stream=(r,)) for r in range(reps)]
    h = np.array([0.0, 1.0, 0.0])
    pi = stationary_complete(q, a).probs
    phi = solve_poisson(q, a, h).phi
    var_rate = -2 * pi @ (phi * (h - pi @ h))
    ts = N ** (a + 1)
    oracle = np.sqrt(np.pi / 2) * np.sqrt(var_rate * ts * T) / ts
    assert np.mean(vals) == pytest.approx(oracle, rel=0.15)


def test_helpers():
    assert decreasing_at_95([3.0, 2.0, 1.0], [0.1, 0.1, 0.1])
    assert not decreasing_at_95([3.0, 2.9, 1.0], [0.1, 0.1, 0.1])
    assert loglog_slope([10, 100, 1000], [1.0, 0.1, 0.01]) == pytest.approx(-1.0)
    m, se = batch_means(np.array([1.0, 2.0]), np.array([1.0, 3.0, 5.0]), 0.0, 4.0, batches=4)
    assert m == pytest.approx((1 + 3 + 5 * 2) / 4)


def test_table_io(tmp_path):
    t = EstimateTable(metadata={"params_hash": "abc", "seed": 1, "rng": "x", "version": "0"})
    t.write_csv(tmp_path / "empty.csv")
    assert (tmp_path / "empty.csv").read_text().splitlines()[-1] == "N,estimator,mean,stderr,reps"
    t.add(10, "e", [1.0, 2.0, 3.0])
    t.write_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[:4] == ["# params_hash: abc", "# seed: 1", "# rng: x", "# version: 0"]
    assert lines[-1].startswith("10,e,2.0,")
    t.write_json(tmp_path / "t.json")
    assert "rows" in (tmp_path / "t.json").read_text()


def test_stationary_probe_reports_beta():
    p = build_params({"n": 1, "a": 1.0, "lambda_inf": [1.0], "gamma": [0.5], "N": 10})
    t = stationary_probe(p, [10, 20], T=5.0, reps=2, seed=1)
    assert t.means("beta") == pytest.approx([2.0, 2.0])
    assert np.all(np.isfinite(t.means("time_avg_s")))
    assert "exploratory" in t.metadata and t.metadata["burn_in_fraction"] == 0.25
    assert np.all(t.means("batch_means_stderr") > 0)
    with pytest.raises(ValueError):
        stationary_probe(base(), [10], T=1.0)


def test_general_graph_probe_complete_reduces():
    t = general_graph_probe(Graph.complete_graph(2), [1, 3], 1.0, events=10**5, seed=3)
    exact = stationary_complete([1, 3], 1.0).probs
    np.testing.assert_allclose(t.metadata["exact"], exact, atol=1e-15)
    occ = [r for r in t.rows if r["estimator"].startswith("occupation")]
    for r, pr in zip(occ, exact):
        assert abs(r["mean"] - pr) < 4 * r["stderr"] + 1e-3


def test_exploratory_reports_run():
    r = line3_product_ratio(t_end=2e3, seed=1)
    assert np.isfinite(r["ratio_mean"]) and r["exploratory"]
    s = square_stability(t_end=2e3, seed=1)
    assert np.isfinite(s["mean_total_queue"])
