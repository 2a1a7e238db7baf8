"""Static parameters, activation functions and near-critical arrival rates."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

CRITICALITY_TOL = 1e-12
MODES = ("heavy_traffic", "raw")
# "regularized" uses (x+1)^a, the finite-queue form of the activation law;
# "large_q" uses x^a, the asymptotic form used for product-form displays.
CONVENTIONS = ("regularized", "large_q")


class ConfigError(ValueError):
    """Raised for any invalid configuration; ``key`` names the offending entry."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


def activation_weight(x, a: float, convention: str = "regularized"):
    """Ratio Ψ₊(x)/Ψ₋(x): (x+1)^a, or x^a under the large-q convention."""
    x = np.asarray(x, dtype=float)
    if convention == "regularized":
        return (x + 1.0) ** a
    return x ** a


def psi_plus(x, a: float, convention: str = "regularized"):
    """Activation probability w/(1+w) with w the activation weight of ``x``."""
    w = activation_weight(x, a, convention)
    out = w / (1.0 + w)
    return float(out) if np.ndim(out) == 0 else out


def psi_minus(x, a: float, convention: str = "regularized"):
    """Deactivation probability, 1 - Ψ₊(x) evaluated as 1/(1+w)."""
    w = activation_weight(x, a, convention)
    out = 1.0 / (1.0 + w)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class RateFunctions:
    a: float
    convention: str = "regularized"

    def psi_plus(self, x):
        return psi_plus(x, self.a, self.convention)

    def psi_minus(self, x):
        return psi_minus(x, self.a, self.convention)

    def weight(self, x):
        return activation_weight(x, self.a, self.convention)


@dataclass(frozen=True)
class Graph:
    """Simple undirected interference graph on nodes 1..n."""

    n: int
    edges: tuple[tuple[int, int], ...] = ()
    complete: bool = False

    @classmethod
    def complete_graph(cls, n: int) -> "Graph":
        edges = tuple((i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1))
        return cls(n=n, edges=edges, complete=True)

    @classmethod
    def from_edges(cls, n: int, edges: Sequence[Sequence[int]]) -> "Graph":
        seen = set()
        for e in edges:
            if len(e) != 2:
                raise ConfigError(f"edge {list(e)} must have two endpoints", "graph")
            u, v = int(e[0]), int(e[1])
            if u == v:
                raise ConfigError(f"self-loop at node {u}", "graph")
            if not (1 <= u <= n and 1 <= v <= n):
                raise ConfigError(f"edge ({u},{v}) outside nodes 1..{n}", "graph")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise ConfigError(f"duplicate edge {key}", "graph")
            seen.add(key)
        edges_t = tuple(sorted(seen))
        return cls(n=n, edges=edges_t, complete=len(edges_t) == n * (n - 1) // 2)

    @classmethod
    def line(cls, n: int) -> "Graph":
        return cls.from_edges(n, [(i, i + 1) for i in range(1, n)])

    @classmethod
    def cycle(cls, n: int) -> "Graph":
        return cls.from_edges(n, [(i, i % n + 1) for i in range(1, n + 1)])

    def neighbor_masks(self) -> list[int]:
        """Bitmask of neighbours of each node, indexed by node-1."""
        masks = [0] * self.n
        for u, v in self.edges:
            masks[u - 1] |= 1 << (v - 1)
            masks[v - 1] |= 1 << (u - 1)
        return masks

    def to_config(self):
        return "complete" if self.complete else [list(e) for e in self.edges]


@dataclass(frozen=True)
class SystemParams:
    n: int
    a: float
    lambda_inf: np.ndarray
    gamma: np.ndarray
    N: int
    graph: Graph
    mode: str = "heavy_traffic"
    convention: str = "regularized"
    lambda_N: np.ndarray = field(init=False, repr=False)
    eps: float = field(init=False)

    def __post_init__(self):
        eps = float(self.N) ** (-self.a)
        lam = np.asarray(self.lambda_inf, dtype=float)
        gam = np.asarray(self.gamma, dtype=float)
        lam_N = lam - eps * gam
        for arr in (lam, gam, lam_N):
            arr.setflags(write=False)
        object.__setattr__(self, "lambda_inf", lam)
        object.__setattr__(self, "gamma", gam)
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "lambda_N", lam_N)

    @property
    def rates(self) -> RateFunctions:
        return RateFunctions(self.a, self.convention)

    @property
    def s_gamma(self) -> float:
        return float(self.gamma.sum())

    @property
    def mu(self) -> float:
        """‖λ^∞‖ in the 1/a quasi-norm: (Σ λ_v^{1/a})^a."""
        return float(np.sum(self.lambda_inf ** (1.0 / self.a)) ** self.a)

    @property
    def time_scale(self) -> float:
        return float(self.N) ** (self.a + 1.0)

    def with_N(self, N: int) -> "SystemParams":
        return build_params({**self.to_config(), "N": N})

    def to_config(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "a": self.a,
            "lambda_inf": [float(x) for x in self.lambda_inf],
            "gamma": [float(x) for x in self.gamma],
            "N": self.N,
            "graph": self.graph.to_config(),
            "mode": self.mode,
            "convention": self.convention,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_config(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_REQUIRED = ("n", "a", "lambda_inf", "gamma", "N")


def _vector(raw, key, n):
    try:
        vec = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be a numeric array", key) from None
    if vec.ndim != 1 or vec.size != n:
        raise ConfigError(f"{key} must have length n={n}", key)
    if not np.all(np.isfinite(vec)):
        raise ConfigError(f"{key} must be finite", key)
    return vec


def build_params(raw_config: Mapping[str, Any]) -> SystemParams:
    """Validate a raw key-value configuration and derive λ^N and ε."""
    for key in _REQUIRED:
        if key not in raw_config:
            raise ConfigError(f"missing required key '{key}'", key)

    n = raw_config["n"]
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
        raise ConfigError("n must be a positive integer", "n")
    n = int(n)
    try:
        a = float(raw_config["a"])
    except (TypeError, ValueError):
        raise ConfigError("a must be a real number", "a") from None
    if not np.isfinite(a) or a <= 0:
        raise ConfigError("a must be > 0", "a")
    N = raw_config["N"]
    if isinstance(N, bool) or not isinstance(N, (int, np.integer)) or N < 1:
        raise ConfigError("N must be a positive integer", "N")

    mode = raw_config.get("mode", "heavy_traffic")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}", "mode")
    convention = raw_config.get("convention", "regularized")
    if convention not in CONVENTIONS:
        raise ConfigError(f"convention must be one of {CONVENTIONS}", "convention")

    lam = _vector(raw_config["lambda_inf"], "lambda_inf", n)
    gam = _vector(raw_config["gamma"], "gamma", n)

    graph_raw = raw_config.get("graph", "complete")
    if isinstance(graph_raw, Graph):
        graph = graph_raw
        if graph.n != n:
            raise ConfigError("graph size does not match n", "graph")
    elif graph_raw == "complete":
        graph = Graph.complete_graph(n)
    elif isinstance(graph_raw, (list, tuple)):
        graph = Graph.from_edges(n, graph_raw)
    else:
        raise ConfigError("graph must be 'complete' or an edge array", "graph")

    if mode == "heavy_traffic":
        if np.any(lam <= 0):
            raise ConfigError("lambda_inf entries must be > 0", "lambda_inf")
        if abs(lam.sum() - 1.0) > CRITICALITY_TOL:
            raise ConfigError(
                f"heavy-traffic mode needs sum(lambda_inf) = 1, got {lam.sum():.15g}",
                "lambda_inf",
            )
    elif np.any(lam < 0):
        raise ConfigError("lambda_inf entries must be >= 0", "lambda_inf")

    params = SystemParams(
        n=n, a=a, lambda_inf=lam, gamma=gam, N=int(N), graph=graph, mode=mode,
        convention=convention,
    )
    # raw mode tolerates silent nodes (rate 0), heavy-traffic mode does not
    bad = params.lambda_N <= 0 if mode == "heavy_traffic" else params.lambda_N < 0
    if np.any(bad):
        v = int(np.argmax(bad)) + 1
        raise ConfigError(
            f"derived rate lambda_N[{v}] = {params.lambda_N[v - 1]:.6g} is not positive",
            "gamma",
        )
    return params
