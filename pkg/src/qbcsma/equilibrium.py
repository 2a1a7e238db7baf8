"""Stationary laws of the frozen schedule chain and distances to the manifold I."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Graph, activation_weight

MAX_NODES = 16


@dataclass(frozen=True)
class ScheduleDistribution:
    """Law over schedules; ``support[i]`` is a frozenset of active nodes.

    For complete graphs the support is ordered as V₀ = (∅, {1}, ..., {n}),
    so ``probs[v]`` is the probability that node v is active.
    """

    support: tuple
    weights: np.ndarray
    probs: np.ndarray

    def prob(self, schedule) -> float:
        key = frozenset(schedule)
        for s, p in zip(self.support, self.probs):
            if s == key:
                return float(p)
        raise KeyError(sorted(key))

    def node_marginals(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        for s, p in zip(self.support, self.probs):
            for v in s:
                out[v - 1] += p
        return out


def _normalize(support, weights):
    weights = np.asarray(weights, dtype=float)
    return ScheduleDistribution(tuple(support), weights, weights / weights.sum())


def stationary_complete(q, a: float, convention: str = "regularized") -> ScheduleDistribution:
    """π^q(σ) ∝ (1+q_σ)^a on V₀ with q₀ = 0 (weight 1 for the empty schedule)."""
    q = np.asarray(q, dtype=float)
    n = q.size
    weights = np.empty(n + 1)
    weights[0] = 1.0
    weights[1:] = activation_weight(q, a, convention)
    support = [frozenset()] + [frozenset({v}) for v in range(1, n + 1)]
    return _normalize(support, weights)


def independent_sets(graph: Graph) -> list[frozenset]:
    """All independent sets, by backtracking over nodes in increasing order."""
    if graph.n > MAX_NODES:
        raise ValueError(f"graph too large: n={graph.n} > {MAX_NODES}")
    nbrs = graph.neighbor_masks()
    out = []

    def extend(v, chosen, blocked):
        if v == graph.n:
            out.append(frozenset(i + 1 for i in range(graph.n) if chosen >> i & 1))
            return
        extend(v + 1, chosen, blocked)
        if not blocked >> v & 1:
            extend(v + 1, chosen | 1 << v, blocked | nbrs[v])

    extend(0, 0, 0)
    out.sort(key=lambda s: (len(s), sorted(s)))
    return out


def stationary_general(q, a: float, graph: Graph, convention: str = "regularized"):
    """Product-form law ∏_{v∈σ} w(q_v) over the independent sets of ``graph``."""
    q = np.asarray(q, dtype=float)
    if q.size != graph.n:
        raise ValueError("q and graph sizes differ")
    w = activation_weight(q, a, convention)
    support = independent_sets(graph)
    weights = [float(np.prod([w[v - 1] for v in s])) if s else 1.0 for s in support]
    return _normalize(support, weights)


def pi_infinity(q, a: float) -> np.ndarray:
    """Limiting service shares q_v^a / ‖q‖_a^a over V."""
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0):
        raise ValueError("pi_infinity needs all q_v > 0")
    w = q ** a
    return w / w.sum()


def _kl_terms(lam, log_pi):
    lam = np.asarray(lam, dtype=float)
    return float(np.sum(lam * (np.log(lam) - log_pi)))


def d_N(q, lambda_inf, a: float, N: float, convention: str = "regularized") -> float:
    """Σ_v λ_v log(λ_v / π^{Nq}(v)) for a scaled queue vector q."""
    q = np.asarray(q, dtype=float)
    if np.any(q < 0):
        raise ValueError("q must be non-negative")
    x = N * q
    logw = a * np.log(x + 1.0) if convention == "regularized" else a * np.log(x)
    # log Z with the empty-schedule weight 1 = exp(0)
    log_z = np.logaddexp.reduce(np.concatenate([[0.0], logw]))
    return _kl_terms(lambda_inf, logw - log_z)


def d_infinity(q, lambda_inf, a: float) -> float:
    """Σ_v λ_v log(λ_v / π^q_∞(v)); zero exactly on I."""
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0):
        raise ValueError("d_infinity needs all q_v > 0 (boundary excluded)")
    logw = a * np.log(q)
    log_z = np.logaddexp.reduce(logw)
    return _kl_terms(lambda_inf, logw - log_z)


def d_infinity_path(qs: np.ndarray, lambda_inf, a: float) -> np.ndarray:
    """Row-wise d^∞ for an array of scaled queue vectors; +inf where some q_v = 0."""
    qs = np.asarray(qs, dtype=float)
    lam = np.asarray(lambda_inf, dtype=float)
    with np.errstate(divide="ignore"):
        logw = a * np.log(qs)
    log_z = np.logaddexp.reduce(logw, axis=1)
    out = np.sum(lam * (np.log(lam) - (logw - log_z[:, None])), axis=1)
    out[np.any(qs <= 0, axis=1)] = np.inf
    return out


def manifold_gap(q, lambda_inf, a: float, mu: float | None = None) -> np.ndarray:
    """|q_v − (λ_v/μ)^{1/a} s(q)| per node."""
    q = np.asarray(q, dtype=float)
    lam = np.asarray(lambda_inf, dtype=float)
    if mu is None:
        mu = float(np.sum(lam ** (1.0 / a)) ** a)
    return np.abs(q - (lam / mu) ** (1.0 / a) * q.sum())
