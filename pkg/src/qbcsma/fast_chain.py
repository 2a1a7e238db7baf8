"""Linear-algebraic analysis of the frozen schedule chain on a complete graph.

States are ordered as V₀ = (0, 1, ..., n). The chain is a star centred at
the empty schedule 0: 0 → v at rate Ψ₊(q_v), v → 0 at rate Ψ₋(q_v).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .equilibrium import stationary_complete
from .model import psi_minus, psi_plus

MAX_DIM = 64
MAX_SIGN_NODES = 10
TMIX_THRESHOLD = 1.0 / (2.0 * np.e)


class BoundInapplicable(ValueError):
    """The log-Sobolev route needs π^q(0) < 1/2."""


@dataclass(frozen=True)
class PoissonSolution:
    phi: np.ndarray
    g: np.ndarray
    residual: float
    mean: float


@dataclass
class FastChainReport:
    q: list
    a: float
    gap: float
    log_sobolev_lb: float | None
    omega: float | None
    b: list | None
    t_mix: float
    hitting: list
    pi0: float
    omega_N: float | None = None
    b_N: float | None = None
    theta_N: float | None = None
    extra: dict = field(default_factory=dict)


def _check_dim(q):
    q = np.asarray(q, dtype=float)
    if q.ndim != 1 or q.size + 1 > MAX_DIM:
        raise ValueError(f"fast chain needs 1 <= n <= {MAX_DIM - 1}")
    return q


def generator_matrix(q, a: float, convention: str = "regularized") -> np.ndarray:
    """Rate matrix of L^q_f on V₀; rows sum to zero."""
    q = _check_dim(q)
    n = q.size
    L = np.zeros((n + 1, n + 1))
    L[0, 1:] = psi_plus(q, a, convention)
    L[1:, 0] = psi_minus(q, a, convention)
    L[np.diag_indices(n + 1)] = -L.sum(axis=1)
    return L


def _pi(q, a, convention="regularized"):
    return stationary_complete(q, a, convention).probs


def poisson_operator(q, a: float, convention: str = "regularized") -> np.ndarray:
    """Matrix K with φ_g = K g the mean-zero solution of L φ = g − π[g].

    Uses the rank-one deflation A = L − 1 πᵀ, which is invertible for an
    irreducible chain and maps mean-zero φ to L φ.
    """
    L = generator_matrix(q, a, convention)
    pi = _pi(q, a, convention)
    n1 = L.shape[0]
    ones = np.ones(n1)
    A = L - np.outer(ones, pi)
    centering = np.eye(n1) - np.outer(ones, pi)
    try:
        return np.linalg.solve(A, centering)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"singular Poisson system at q={list(q)}") from exc


def solve_poisson(q, a: float, g, convention: str = "regularized") -> PoissonSolution:
    """Mean-zero solution of L^q_f φ = g − π^q[g]; ``g`` is an array or callable on V₀."""
    q = _check_dim(q)
    n1 = q.size + 1
    g = np.asarray([g(s) for s in range(n1)] if callable(g) else g, dtype=float)
    if g.shape != (n1,):
        raise ValueError(f"g must have {n1} entries")
    phi = poisson_operator(q, a, convention) @ g
    L = generator_matrix(q, a, convention)
    pi = _pi(q, a, convention)
    residual = float(np.max(np.abs(L @ phi - (g - pi @ g))))
    return PoissonSolution(phi=phi, g=g, residual=residual, mean=float(pi @ phi))


def scaled_poisson(q_scaled, N: float, a: float, g, convention="regularized") -> np.ndarray:
    """φ^N_g(q, ·) = N^{−(a+1)} φ_g(Nq, ·) for q on the grid E^N."""
    x = np.rint(np.asarray(q_scaled, dtype=float) * N)
    return solve_poisson(x, a, g, convention).phi / float(N) ** (a + 1)


def spectral_gap(q, a: float, convention: str = "regularized") -> float:
    """Smallest non-zero eigenvalue of −L^q_f via the π-symmetrized generator."""
    L = generator_matrix(q, a, convention)
    d = np.sqrt(_pi(q, a, convention))
    S = (d[:, None] * L) / d[None, :]
    S = 0.5 * (S + S.T)
    try:
        ev = np.sort(-np.linalg.eigvalsh(S))
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("eigen-solver failure") from exc
    return float(ev[1])


def _pi0_checked(q, a, convention):
    pi0 = float(_pi(q, a, convention)[0])
    if not pi0 < 0.5:
        raise BoundInapplicable(f"π^q(0) = {pi0:.4g} >= 1/2")
    return pi0


def log_sobolev_lower_bound(q, a: float, convention="regularized", gap=None) -> float:
    """α^q ≥ ℓ^q (1 − 2π^q(0)) / log((1 − π^q(0)) / π^q(0))."""
    pi0 = _pi0_checked(q, a, convention)
    if gap is None:
        gap = spectral_gap(q, a, convention)
    return gap * (1.0 - 2.0 * pi0) / np.log((1.0 - pi0) / pi0)


def omega_and_b(q, a: float, convention="regularized", gap=None):
    """Ω(q) and the vector (B_v(q))_v with the exact spectral gap substituted.

    B_v is +inf where q_v = 0.
    """
    q = _check_dim(q)
    pi0 = _pi0_checked(q, a, convention)
    if gap is None:
        gap = spectral_gap(q, a, convention)
    omega = np.sqrt(np.log(1.0 / pi0)) * np.log(1.0 / pi0 - 1.0) / (gap * (1.0 - 2.0 * pi0))
    with np.errstate(divide="ignore"):
        b = omega / q ** (1.0 - a) * (4.0 * omega / q ** (2.0 * a) + pi0)
    b = np.where(q > 0, b, np.inf)
    return float(omega), b


def sign_vectors(n1: int):
    if n1 - 1 > MAX_SIGN_NODES:
        raise ValueError(f"sign enumeration limited to n <= {MAX_SIGN_NODES}")
    return np.array(list(itertools.product((-1.0, 1.0), repeat=n1)))


def sup_phi(q, a: float, convention="regularized") -> float:
    """sup over ‖g‖∞ ≤ 1 of ‖φ_g‖∞, attained on the sign vectors."""
    K = poisson_operator(q, a, convention)
    return float(np.max(np.abs(sign_vectors(K.shape[0]) @ K.T)))


def sup_phi_difference(q, q_other, a: float, convention="regularized") -> float:
    """sup over ‖g‖∞ ≤ 1 of ‖φ_g(q_other, ·) − φ_g(q, ·)‖∞."""
    D = poisson_operator(q_other, a, convention) - poisson_operator(q, a, convention)
    return float(np.max(np.abs(sign_vectors(D.shape[0]) @ D.T)))


def hitting_times(q, a: float, convention="regularized") -> np.ndarray:
    """H[σ, τ] = E_σ[T_τ] by solving the hitting linear system for every target."""
    L = generator_matrix(q, a, convention)
    n1 = L.shape[0]
    H = np.zeros((n1, n1))
    for tau in range(n1):
        rest = [s for s in range(n1) if s != tau]
        H[rest, tau] = np.linalg.solve(L[np.ix_(rest, rest)], -np.ones(n1 - 1))
    return H


def hitting_closed_forms(q, a: float, convention="regularized"):
    """E_v[T_0] = 1/Ψ₋(q_v), E_0[X₁] = 1/ΣΨ₊, and E_0[T_σ] from the cycle decomposition."""
    q = _check_dim(q)
    up = psi_plus(q, a, convention)
    down = psi_minus(q, a, convention)
    up = np.atleast_1d(up)
    down = np.atleast_1d(down)
    to_zero = 1.0 / down
    hold0 = 1.0 / up.sum()
    p = up / up.sum()
    # each excursion: a wait at 0, then either hit σ or spend 1/Ψ₋(w) at w ≠ σ
    from_zero = np.empty(q.size)
    for s in range(q.size):
        detour = sum(p[w] * to_zero[w] for w in range(q.size) if w != s)
        from_zero[s] = (hold0 + detour) / p[s]
    return to_zero, hold0, from_zero


def tv_curve(q, a: float, times, convention="regularized") -> np.ndarray:
    """max_σ ‖m_{σ,t} − π‖_TV at each t, with transition matrices from expm."""
    L = generator_matrix(q, a, convention)
    pi = _pi(q, a, convention)
    return np.array([0.5 * np.max(np.abs(scipy.linalg.expm(L * t) - pi).sum(axis=1)) for t in times])


def mixing_time(q, a: float, convention="regularized", threshold=TMIX_THRESHOLD, rtol=1e-10) -> float:
    """inf{t : max_σ ‖m_{σ,t} − π‖_TV < threshold}, log-grid bracket then bisection."""
    L = generator_matrix(q, a, convention)
    pi = _pi(q, a, convention)

    def dist(t):
        return 0.5 * np.max(np.abs(scipy.linalg.expm(L * t) - pi).sum(axis=1))

    if dist(0.0) < threshold:
        return 0.0
    lo, hi = 0.0, 1.0 / np.max(-np.diag(L))
    while dist(hi) >= threshold:
        lo, hi = hi, 2.0 * hi
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if dist(mid) < threshold:
            hi = mid
        else:
            lo = mid
    return float(hi)


def hitting_and_mixing(q, a: float, convention="regularized"):
    """Expected hitting-time matrix (checked against closed forms) and t_mix."""
    H = hitting_times(q, a, convention)
    to_zero, _, from_zero = hitting_closed_forms(q, a, convention)
    if not (np.allclose(H[1:, 0], to_zero, rtol=1e-10, atol=0)
            and np.allclose(H[0, 1:], from_zero, rtol=1e-10, atol=0)):
        raise RuntimeError("hitting-time linear solve disagrees with closed form")
    return H, mixing_time(q, a, convention)


def fast_chain_report(q, a: float, convention="regularized") -> FastChainReport:
    q = _check_dim(q)
    gap = spectral_gap(q, a, convention)
    pi0 = float(_pi(q, a, convention)[0])
    H, tmix = hitting_and_mixing(q, a, convention)
    lsi = omega = b = None
    if pi0 < 0.5:
        lsi = float(log_sobolev_lower_bound(q, a, convention, gap=gap))
        omega, bv = omega_and_b(q, a, convention, gap=gap)
        b = [float(x) for x in bv]
    return FastChainReport(
        q=[float(x) for x in q], a=a, gap=gap, log_sobolev_lb=lsi, omega=omega, b=b,
        t_mix=tmix, hitting=H.tolist(), pi0=pi0,
        extra={"sup_phi": sup_phi(q, a, convention) if q.size <= MAX_SIGN_NODES else None},
    )


# ------------------------------------------------------------ scaled constants

def u_grid(m: float, M: float, n: int, N: int, points: int = 5) -> np.ndarray:
    """Tensor grid (``points`` per coordinate) of scaled vectors in U^N = U ∩ N⁻¹ℕⁿ.

    U = {1/M < s(q) < M, min_v q_v > m}. An under-sample of U^N, so grid
    suprema under-estimate the true suprema.
    """
    lo = np.ceil(m * N + 1e-9) / N
    hi = np.floor(min(M, M - (n - 1) * m) * N - 1e-9) / N
    if hi < lo:
        return np.empty((0, n))
    axis = np.unique(np.rint(np.linspace(lo, hi, points) * N) / N)
    pts = np.array(list(itertools.product(axis, repeat=n)))
    s = pts.sum(axis=1)
    keep = (s > 1.0 / M) & (s < M) & (pts.min(axis=1) > m)
    return pts[keep]


def theta(N: float, a: float, omega_N: float, b_N: float) -> float:
    return (N ** (a + 1) * b_N + N ** 0.5 * omega_N + N ** ((a + 1) / 2) * omega_N ** 1.5
            + N ** (a + 1) * omega_N * b_N ** 0.5)


def scaled_constants(N: int, a: float, grid, convention="regularized"):
    """Grid-sup estimates of (Ω_N, B_N, Θ_N) for scaled points ``grid``."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty grid")
    scale = float(N) ** (-(a + 1))
    omega_N = 0.0
    b_N = 0.0
    for qs in grid:
        x = np.rint(qs * N)
        K = poisson_operator(x, a, convention)
        omega_N = max(omega_N, scale * float(np.max(np.abs(K).sum(axis=1))))
        for v in range(x.size):
            for step in (1.0, -1.0):
                y = x.copy()
                y[v] += step
                if y[v] < 0:
                    continue
                D = poisson_operator(y, a, convention) - K
                b_N = max(b_N, scale * float(np.max(np.abs(D).sum(axis=1))))
    return omega_N, b_N, theta(N, a, omega_N, b_N)
