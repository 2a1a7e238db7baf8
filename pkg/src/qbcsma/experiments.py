"""Replicated Monte Carlo estimators for the heavy-traffic scaling laws.

Every replication is a pure function of (spec, N, replication index); its
random stream is derived from the root seed with stream path (N, index), so
serial and parallel runs produce the same per-replication statistics.
"""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .dynamics import BudgetExceeded, ChainState, simulate
from .equilibrium import d_infinity, stationary_general
from .heavy_traffic import (
    localization_constants,
    manifold_projection,
    scaled_view,
    solve_limit_ode,
)
from .model import Graph, SystemParams, build_params
from .rng import RNG_ID

Z95 = 1.959963984540054
ESTIMATOR_COLUMNS = ("N", "estimator", "mean", "stderr", "reps")


def worker_count() -> int:
    raw = os.environ.get("QBCSMA_THREADS", "0")
    try:
        k = int(raw)
    except ValueError:
        k = 0
    return k if k > 0 else (os.cpu_count() or 1)


@dataclass
class ExperimentSpec:
    params: SystemParams
    N_list: Sequence[int]
    T: float = 1.0
    reps: int = 200
    seed: int = 0
    S0: float = 2.0
    node: int = 1
    f: Callable | None = None
    budget: int = 10**8
    # "corrected" uses the max-form box constant M, "literal" the printed min-form
    localization: str = "corrected"
    # degenerate control: schedule moves, queues stay at their initial values
    freeze_queues: bool = False

    def __post_init__(self):
        if self.reps < 2:
            raise ValueError("need at least 2 replications")
        if any(b <= a for a, b in zip(self.N_list, self.N_list[1:])):
            raise ValueError("N list must be strictly increasing")
        if self.localization not in ("corrected", "literal"):
            raise ValueError("localization must be 'corrected' or 'literal'")
        for N in self.N_list:
            cost = float(N) ** (self.params.a + 1) * self.T * (self.params.n + 2)
            if cost > self.budget:
                raise ValueError(f"horizon at N={N} needs ~{cost:.3g} events > budget")

    def to_config(self):
        return {
            "params": self.params.to_config(), "N_list": list(self.N_list), "T": self.T,
            "reps": self.reps, "seed": self.seed, "S0": self.S0, "node": self.node,
            "localization": self.localization, "budget": self.budget,
            "freeze_queues": self.freeze_queues,
        }


@dataclass
class EstimateTable:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, N, estimator, values):
        values = np.asarray(values, dtype=float)
        values = values[np.isfinite(values)]
        r = len(values)
        mean = float(values.mean()) if r else float("nan")
        se = float(values.std(ddof=1) / np.sqrt(r)) if r > 1 else float("nan")
        self.rows.append({"N": N, "estimator": estimator, "mean": mean, "stderr": se, "reps": r})

    def get(self, estimator):
        return [r for r in self.rows if r["estimator"] == estimator]

    def means(self, estimator):
        return np.array([r["mean"] for r in self.get(estimator)])

    def stderrs(self, estimator):
        return np.array([r["stderr"] for r in self.get(estimator)])

    def header_lines(self):
        keys = ("params_hash", "seed", "rng", "version", "exploratory")
        return [f"{k}: {self.metadata[k]}" for k in keys if k in self.metadata]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            for line in self.header_lines():
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ESTIMATOR_COLUMNS)
            for r in self.rows:
                w.writerow([r["N"], r["estimator"], repr(r["mean"]), repr(r["stderr"]), r["reps"]])

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump({"rows": self.rows, "metadata": self.metadata}, fh, indent=2, sort_keys=True,
                      default=_json_default)
            fh.write("\n")


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


def decreasing_at_95(means, stderrs) -> bool:
    """Each consecutive drop exceeds 1.96 combined standard errors."""
    means = np.asarray(means)
    se = np.asarray(stderrs)
    drops = means[:-1] - means[1:]
    return bool(np.all(drops > Z95 * np.sqrt(se[:-1] ** 2 + se[1:] ** 2)))


def loglog_slope(N_list, means) -> float:
    x = np.log(np.asarray(N_list, dtype=float))
    y = np.log(np.asarray(means, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def initial_state(params: SystemParams, S0: float):
    """Round N·q⁰ to integers for q⁰ the point of I with total S0; empty schedule."""
    q0 = manifold_projection(S0, params.lambda_inf, params.a)
    x = np.rint(params.N * q0).astype(int)
    return ChainState(tuple(int(v) for v in x), 0), q0


def _limit(spec: ExperimentSpec):
    p = spec.params
    sol = solve_limit_ode(p.lambda_inf, p.gamma, p.a, spec.S0, spec.T)
    loc = localization_constants(sol, p.lambda_inf, p.a, spec.T)
    thr = (loc.m if spec.localization == "corrected" else loc.m_literal) / 2.0
    return sol, loc, thr


_LIMITS: dict = {}


def _one(q):
    return 1.0


def _cached_limit(spec: ExperimentSpec):
    key = json.dumps(spec.to_config(), sort_keys=True)
    if key not in _LIMITS:
        _LIMITS[key] = _limit(spec)
    return _LIMITS[key]


def run_replication(spec: ExperimentSpec, N: int, rep: int) -> dict:
    """All per-path statistics of one replication at scale N."""
    params = spec.params.with_N(N)
    sol, loc, thr = _cached_limit(spec)
    init, _ = initial_state(params, spec.S0)
    try:
        traj = simulate(params, init, params.time_scale * spec.T, spec.seed,
                        stream=(N, rep), budget=spec.budget, freeze_queues=spec.freeze_queues)
    except BudgetExceeded as exc:
        return {"N": N, "rep": rep, "error": str(exc)}
    view = scaled_view(traj, N, params.a, spec.T)
    st = view.stats(sol, params.lambda_inf, loc, spec.T, threshold=thr)
    out = {"N": N, "rep": rep, "events": len(traj), **asdict(st)}
    f = spec.f if spec.f is not None else _one
    out["averaging"] = view.averaging_error(spec.node, f, st.t_stop, params.convention)
    out["T_N_le_tau_N"] = bool(st.T_N <= st.tau_N)
    return out


def _task(args):
    return run_replication(*args)


def replicate(spec: ExperimentSpec, workers: int | None = None) -> list[dict]:
    """Per-replication records for every N, ordered by (N, replication)."""
    tasks = [(spec, N, r) for N in spec.N_list for r in range(spec.reps)]
    workers = worker_count() if workers is None else workers
    if workers <= 1:
        return [_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (8 * workers))))


ESTIMATORS = {
    "converge": ("sup_l1", "sup_s", "survived"),
    "collapse": ("sup_d_inf", "d_inf_0"),
    "homogenize": ("averaging",),
}


def tabulate(spec: ExperimentSpec, records: list[dict], estimators: Sequence[str]) -> EstimateTable:
    table = EstimateTable(metadata=_metadata(spec))
    sol, loc, thr = _cached_limit(spec)
    table.metadata.update({"M": loc.M, "m": loc.m, "M_literal": loc.M_literal,
                           "m_literal": loc.m_literal, "threshold": thr})
    errors = [r for r in records if "error" in r]
    table.metadata["errors"] = [f"N={r['N']} rep={r['rep']}: {r['error']}" for r in errors]
    for N in spec.N_list:
        recs = [r for r in records if r["N"] == N and "error" not in r]
        for name in estimators:
            table.add(N, name, [float(r[name]) for r in recs])
    return table


def _metadata(spec: ExperimentSpec):
    return {
        "params_hash": spec.params.digest(), "seed": spec.seed, "rng": RNG_ID,
        "version": __version__, "config": spec.to_config(),
    }


def _run(spec, estimators, workers=None):
    return tabulate(spec, replicate(spec, workers), estimators)


def convergence_experiment(spec: ExperimentSpec, workers=None) -> EstimateTable:
    """sup_{t ≤ T∧T^N} ‖Q^N − q‖₁, the s-only variant, and the frequency of T^N ≥ T."""
    return _run(spec, ESTIMATORS["converge"], workers)


def collapse_experiment(spec: ExperimentSpec, workers=None) -> EstimateTable:
    """sup_{t ≤ T∧T^N} d^∞(Q^N(t)) and the initial rounding perturbation d^∞(Q^N(0))."""
    return _run(spec, ESTIMATORS["collapse"], workers)


def homogenization_experiment(spec: ExperimentSpec, v: int | None = None, f=None,
                              workers=None) -> EstimateTable:
    """sup_{t ≤ T∧T^N} |∫₀ᵗ (σ^N_v − π^{NQ^N}(v)) f(Q^N) ds| per N."""
    if v is not None or f is not None:
        spec = ExperimentSpec(**{**spec.__dict__, "node": v or spec.node, "f": f or spec.f})
    return _run(spec, ESTIMATORS["homogenize"], workers)


# ---------------------------------------------------------- exploratory probes

def batch_means(times, values, t0, t1, batches=20):
    """Time average of a piecewise-constant path on [t0, t1] and its batch-means stderr."""
    edges = np.linspace(t0, t1, batches + 1)
    grid = np.concatenate([[0.0], times])
    cum = np.concatenate([[0.0], np.cumsum(values[:-1] * np.diff(grid))])

    def integral(t):
        i = np.searchsorted(grid, t, side="right") - 1
        return cum[i] + values[i] * (t - grid[i])

    ints = np.array([integral(t) for t in edges])
    bm = np.diff(ints) / np.diff(edges)
    return float((ints[-1] - ints[0]) / (t1 - t0)), float(bm.std(ddof=1) / np.sqrt(batches))


def stationary_probe(params: SystemParams, N_list, T: float = 20.0, reps: int = 4, seed: int = 0,
                     burn_in: float = 0.25, batches: int = 20) -> EstimateTable:
    """Long-run time average of s(Q)/N next to β = (μ/s(γ))^{1/a}; report only."""
    if not params.s_gamma > 0:
        raise ValueError("stationary probe needs s(gamma) > 0")
    beta = (params.mu / params.s_gamma) ** (1.0 / params.a)
    table = EstimateTable(metadata={
        "params_hash": params.digest(), "seed": seed, "rng": RNG_ID, "version": __version__,
        "exploratory": "interchange of limits is an open question; no pass/fail",
        "beta": beta, "burn_in_fraction": burn_in, "T_scaled": T, "batches": batches,
    })
    for N in N_list:
        p = params.with_N(N)
        init, _ = initial_state(p, beta)
        avgs, within = [], []
        for r in range(reps):
            traj = simulate(p, init, p.time_scale * T, seed, stream=(N, r))
            s = traj.queue_path().sum(axis=1) / N
            t = traj.times / p.time_scale
            m, se = batch_means(t, s, burn_in * T, T, batches)
            avgs.append(m)
            within.append(se)
        table.add(N, "time_avg_s", avgs)
        table.rows.append({"N": N, "estimator": "batch_means_stderr", "mean": float(np.mean(within)),
                           "stderr": float("nan"), "reps": reps})
        table.rows.append({"N": N, "estimator": "beta", "mean": beta, "stderr": 0.0, "reps": reps})
    return table


def occupation_frequencies(params: SystemParams, q, events: int, seed: int, stream=(),
                           batches: int = 50):
    """Frozen-q schedule occupation vs the enumerated product-form law.

    Returns (support, empirical, stderr, exact); stderr from time batch means.
    """
    graph = params.graph
    exact = stationary_general(q, params.a, graph, params.convention)
    traj = simulate(params, ChainState(tuple(q), 0 if graph.complete else frozenset()), np.inf,
                    seed, stream=stream, freeze_queues=True, max_events=events)
    times = traj.times
    masks = traj.sigma_mask_path()
    t1 = float(times[-1])
    emp, err = [], []
    for s in exact.support:
        bit = sum(1 << (v - 1) for v in s)
        m, se = batch_means(times, (masks == bit).astype(float), 0.0, t1, batches)
        emp.append(m)
        err.append(se)
    return exact.support, np.array(emp), np.array(err), exact.probs


def general_graph_probe(graph: Graph, q, a: float, events: int = 10**6, seed: int = 0,
                        convention: str = "regularized", batches: int = 50) -> EstimateTable:
    """Occupation frequencies at frozen q against π^q; one row per schedule."""
    params = build_params({"n": graph.n, "a": a, "lambda_inf": [0.0] * graph.n,
                           "gamma": [0.0] * graph.n, "N": 1, "graph": graph,
                           "mode": "raw", "convention": convention})
    support, emp, err, exact = occupation_frequencies(params, q, events, seed, batches=batches)
    table = EstimateTable(metadata={"params_hash": params.digest(), "seed": seed, "rng": RNG_ID,
                                    "version": __version__, "q": list(map(int, q)),
                                    "exact": exact.tolist(),
                                    "support": [sorted(s) for s in support]})
    for s, m, se, p in zip(support, emp, err, exact):
        label = "{" + ",".join(map(str, sorted(s))) + "}"
        table.rows.append({"N": 1, "estimator": f"occupation{label}", "mean": float(m),
                           "stderr": float(se), "reps": 1})
        table.rows.append({"N": 1, "estimator": f"exact{label}", "mean": float(p),
                           "stderr": 0.0, "reps": 1})
    return table


def line3_product_ratio(lam: float = 0.5, a: float = 1.0, t_end: float = 2e5, seed: int = 0,
                        q0=(10, 10, 10), convention: str = "regularized", burn_in: float = 0.25):
    """Time-averaged q₁q₃/q₂ on the symmetric line of three nodes; report only."""
    params = build_params({"n": 3, "a": a, "lambda_inf": [lam] * 3, "gamma": [0, 0, 0], "N": 1,
                           "graph": [[1, 2], [2, 3]], "mode": "raw", "convention": convention})
    traj = simulate(params, ChainState(tuple(q0), frozenset()), t_end, seed)
    qp = traj.queue_path().astype(float)
    ratio = qp[:, 0] * qp[:, 2] / np.maximum(qp[:, 1], 1.0)
    mean, se = batch_means(traj.times, ratio, burn_in * t_end, t_end)
    return {"ratio_mean": mean, "ratio_stderr": se, "final_q": qp[-1].tolist(),
            "events": len(traj), "exploratory": True}


def square_stability(lam: float = 0.25, a: float = 0.5, t_end: float = 2e5, seed: int = 0,
                     q0=(0, 0, 0, 0)):
    """Mean total queue on the 4-cycle with equal rates; report only."""
    params = build_params({"n": 4, "a": a, "lambda_inf": [lam] * 4, "gamma": [0] * 4, "N": 1,
                           "graph": [[1, 2], [2, 3], [3, 4], [1, 4]], "mode": "raw"})
    traj = simulate(params, ChainState(tuple(q0), frozenset()), t_end, seed)
    s = traj.queue_path().sum(axis=1).astype(float)
    mean, se = batch_means(traj.times, s, 0.25 * t_end, t_end)
    return {"mean_total_queue": mean, "stderr": se, "max_total_queue": float(s.max()),
            "events": len(traj), "exploratory": True}


def frozen_averaging_error(params: SystemParams, q, v: int, T_scaled: float, seed: int,
                           stream=()):
    """Averaging estimator on a frozen-queue path (schedule moves, queues do not)."""
    N = params.N
    traj = simulate(params, ChainState(tuple(q), 0), params.time_scale * T_scaled, seed,
                    stream=stream, freeze_queues=True)
    view = scaled_view(traj, N, params.a, T_scaled)
    return view.averaging_error(v, lambda x: 1.0, T_scaled, params.convention)
