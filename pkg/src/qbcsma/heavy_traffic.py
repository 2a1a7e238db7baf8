"""Deterministic heavy-traffic limit and scaled views of simulated paths.

The limit total queue S solves dS/dt = μ S^{−a} − s(γ); the limit queue
vector is its projection onto the invariant manifold I.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, minimize_scalar

from .dynamics import Trajectory
from .equilibrium import d_infinity_path, stationary_complete

RTOL = 1e-10
ATOL = 1e-12


def mu_of(lambda_inf, a: float) -> float:
    lam = np.asarray(lambda_inf, dtype=float)
    return float(np.sum(lam ** (1.0 / a)) ** a)


def manifold_direction(lambda_inf, a: float) -> np.ndarray:
    """(λ_v/μ)^{1/a}; sums to one, so S times it is the point of I with total S."""
    lam = np.asarray(lambda_inf, dtype=float)
    return (lam / mu_of(lam, a)) ** (1.0 / a)


def manifold_projection(S_value, lambda_inf, a: float) -> np.ndarray:
    S_value = np.asarray(S_value, dtype=float)
    if np.any(S_value <= 0):
        raise ValueError("S must be positive")
    k = manifold_direction(lambda_inf, a)
    return S_value[..., None] * k if S_value.ndim else float(S_value) * k


@dataclass
class OdeSolution:
    a: float
    mu: float
    s_gamma: float
    S0: float
    t: np.ndarray
    S: np.ndarray
    t_end: float
    beta: float | None
    hit_zero: float | None = None
    _fn: Callable | None = field(default=None, repr=False)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12) or np.any(t > self.t_end * (1 + 1e-12) + 1e-12):
            raise ValueError(f"t outside [0, {self.t_end}]")
        out = np.asarray(self._fn(np.clip(t, 0.0, self.t_end)), dtype=float)
        return float(out) if out.ndim == 0 else out.reshape(t.shape)

    def rhs(self, S):
        return self.mu * np.asarray(S, dtype=float) ** (-self.a) - self.s_gamma

    def q(self, t, lambda_inf) -> np.ndarray:
        return manifold_projection(self(t), lambda_inf, self.a)


def closed_form_S(t, S0: float, a: float, mu: float):
    """Solution of dS/dt = μ S^{−a} (s(γ) = 0)."""
    t = np.asarray(t, dtype=float)
    return (S0 ** (a + 1) + (a + 1) * mu * t) ** (1.0 / (a + 1))


def equilibrium_level(mu: float, s_gamma: float, a: float) -> float | None:
    """β = (μ/s(γ))^{1/a} for s(γ) > 0."""
    return (mu / s_gamma) ** (1.0 / a) if s_gamma > 0 else None


def _integrate(mu, sg, a, S0, T, rtol, atol, events=()):
    def rhs(t, y):
        return [mu * max(y[0], 1e-300) ** (-a) - sg]

    def zero(t, y):
        return y[0]

    zero.terminal = True
    zero.direction = -1
    return solve_ivp(rhs, (0.0, T), [S0], method="RK45", rtol=rtol, atol=atol,
                     dense_output=True, events=[zero, *events])


def _wrap(sol_ivp, mu, sg, a, S0, T):
    hit = sol_ivp.t_events[0]
    t_end = float(sol_ivp.t[-1])
    dense = sol_ivp.sol

    def fn(t):
        return dense(t)[0]

    return OdeSolution(a=a, mu=mu, s_gamma=sg, S0=S0, t=sol_ivp.t.copy(),
                       S=sol_ivp.y[0].copy(), t_end=t_end,
                       beta=equilibrium_level(mu, sg, a),
                       hit_zero=float(hit[0]) if len(hit) else None, _fn=fn)


def solve_limit_ode(lambda_inf, gamma, a: float, S0: float, T: float,
                    rtol: float = RTOL, atol: float = ATOL) -> OdeSolution:
    """Integrate dS/dt = μ S^{−a} − s(γ) on [0, T] with an embedded RK4(5) pair."""
    if not S0 > 0:
        raise ValueError("S0 must be positive")
    if not a > 0:
        raise ValueError("a must be positive")
    mu = mu_of(lambda_inf, a)
    sg = float(np.sum(gamma))
    res = _integrate(mu, sg, a, float(S0), float(T), rtol, atol)
    if res.status == -1:
        raise RuntimeError(f"integration failed: {res.message}")
    return _wrap(res, mu, sg, a, float(S0), float(T))


def solve_to_equilibrium(lambda_inf, gamma, a: float, S0: float, tol: float = 1e-9,
                         rtol: float = RTOL, atol: float = ATOL, max_T: float = 1e9):
    """Integrate until the Newton estimate |F(S)/F'(S)| of the distance to β drops below ``tol``.

    Requires s(γ) > 0. The stopping time is the solution's ``t_end``.
    """
    mu = mu_of(lambda_inf, a)
    sg = float(np.sum(gamma))
    if not sg > 0:
        raise ValueError("equilibrium needs s(gamma) > 0")

    def settled(t, y):
        S = y[0]
        return abs((mu * S ** (-a) - sg) / (a * mu * S ** (-a - 1))) - tol

    settled.terminal = True
    settled.direction = -1
    if settled(0.0, [S0]) <= 0:
        return solve_limit_ode(lambda_inf, gamma, a, S0, 0.0 + 1e-12, rtol, atol)
    T = 1.0
    while T <= max_T:
        res = _integrate(mu, sg, a, float(S0), T, rtol, atol, events=[settled])
        if len(res.t_events[1]):
            return _wrap(res, mu, sg, a, float(S0), T)
        T *= 4.0
    raise RuntimeError("no convergence to equilibrium within max_T")


def alternate_scaling_limit(a: float, a_prime: float, lambda_inf, gamma, S0: float, T: float):
    """Limit on the space scale ε^{−1/a'}; returns (OdeSolution, time exponent b)."""
    if not (a > 0 and a_prime > 0):
        raise ValueError("a and a' must be positive")
    if a_prime > a:
        return solve_limit_ode(lambda_inf, np.zeros_like(np.asarray(gamma, float)), a, S0, T), 1.0 + a
    if a_prime == a:
        return solve_limit_ode(lambda_inf, gamma, a, S0, T), 1.0 + a
    sg = float(np.sum(gamma))
    mu = mu_of(lambda_inf, a)

    def fn(t):
        return np.maximum(S0 - sg * np.asarray(t, dtype=float), 0.0)

    hit = S0 / sg if sg > 0 and S0 / sg <= T else None
    ts = np.linspace(0.0, T, 101)
    sol = OdeSolution(a=a_prime, mu=mu, s_gamma=sg, S0=S0, t=ts, S=fn(ts), t_end=T,
                      beta=None, hit_zero=hit, _fn=fn)
    return sol, 1.0 + a_prime


# ----------------------------------------------------------- localization

@dataclass(frozen=True)
class LocalizationConstants:
    M: float
    m: float
    M_literal: float
    m_literal: float
    literal_U_empty: bool
    T: float
    sup_S: float
    inf_S: float

    def in_U(self, q) -> np.ndarray:
        """Membership of scaled vectors (rows) in U = {1/M < s < M, min q > m}."""
        q = np.atleast_2d(np.asarray(q, dtype=float))
        s = q.sum(axis=1)
        return (s > 1.0 / self.M) & (s < self.M) & (q.min(axis=1) > self.m)


def _extremum(sol: OdeSolution, T: float, sign: float) -> float:
    ts = np.linspace(0.0, T, 513)
    vals = sign * sol(ts)
    i = int(np.argmax(vals))
    best = vals[i]
    if 0 < i < len(ts) - 1:
        res = minimize_scalar(lambda t: -sign * sol(t), bounds=(ts[i - 1], ts[i + 1]),
                              method="bounded", options={"xatol": 1e-12})
        best = max(best, -res.fun)
    return float(sign * best)


def localization_constants(sol: OdeSolution, lambda_inf, a: float, T: float | None = None):
    """Box constants (M, m); both the max-convention M and the printed min-convention."""
    T = sol.t_end if T is None else T
    sup_S = _extremum(sol, T, 1.0)
    inf_S = _extremum(sol, T, -1.0)
    lam = np.asarray(lambda_inf, dtype=float)
    mu = mu_of(lam, a)
    base = np.min(lam ** (1.0 / a)) / mu ** (1.0 / a)
    M_lit = min(2 * sup_S, 2 / inf_S, 0.5)
    M = max(2 * sup_S, 2 / inf_S, 2.0)
    return LocalizationConstants(
        M=M, m=base / M, M_literal=M_lit, m_literal=base / M_lit,
        literal_U_empty=not (1.0 / M_lit < M_lit), T=T, sup_S=sup_S, inf_S=inf_S,
    )


# ---------------------------------------------------------------- scaled view

class HorizonTooShort(ValueError):
    pass


@dataclass
class PathStats:
    T_N: float
    tau_N: float
    t_stop: float
    sup_l1: float
    sup_s: float
    sup_d_inf: float
    d_inf_0: float
    survived: bool


class ScaledPath:
    """Q^N(t) = Q(N^{a+1} t)/N and σ^N(t) = σ(N^{a+1} t) as a read-only view."""

    def __init__(self, trajectory: Trajectory, N: float, a: float, t_view: float | None = None):
        speed = float(N) ** (a + 1)
        horizon = trajectory.t_end / speed
        if t_view is None:
            t_view = horizon
        if trajectory.t_end < speed * t_view * (1 - 1e-12):
            raise HorizonTooShort(
                f"trajectory covers scaled time {horizon:.6g} < requested {t_view:.6g}")
        self.traj = trajectory
        self.N = float(N)
        self.a = a
        self.t_view = float(t_view)
        times = trajectory.times / speed
        keep = times <= self.t_view
        self.times = times[keep]
        k = int(keep.sum())
        self.q = trajectory.queue_path()[: k + 1] / self.N
        self.sigma = trajectory.sigma_path()[: k + 1]

    def index(self, t):
        return np.searchsorted(self.times, t, side="right")

    def Q(self, t):
        return self.q[self.index(t)]

    def sigma_at(self, t):
        return self.sigma[self.index(t)]

    def breakpoints(self):
        """Interval endpoints: [0, t_1, ..., t_k, t_view] with the state on each interval."""
        return np.concatenate([[0.0], self.times, [self.t_view]])

    def l1_deviation(self, reference: Callable):
        """‖Q^N − q‖₁ at every interval endpoint (left and right values).

        Between events Q^N is constant; for references moving monotonically
        along I the deviation is convex in S, so endpoint values give the sup.
        Returns (start-of-interval values, end-of-interval values).
        """
        bp = self.breakpoints()
        ref = np.asarray(reference(bp))
        start = np.abs(self.q - ref[:-1]).sum(axis=1)
        end = np.abs(self.q - ref[1:]).sum(axis=1)
        return start, end

    def first_exceedance(self, reference: Callable, threshold: float) -> float:
        """T^N = inf{t > 0 : ‖Q^N(t) − q(t)‖₁ > threshold}; inf if never within the view."""
        start, end = self.l1_deviation(reference)
        bp = self.breakpoints()
        bad_start = start > threshold
        bad_end = end > threshold
        hits = np.flatnonzero(bad_start | bad_end)
        if not len(hits):
            return np.inf
        i = int(hits[0])
        if bad_start[i]:
            return float(bp[i])
        qi = self.q[i]

        def excess(t):
            return float(np.abs(qi - np.asarray(reference(t))).sum()) - threshold

        return float(brentq(excess, bp[i], bp[i + 1], xtol=1e-14, rtol=1e-12))

    def exit_time(self, loc: LocalizationConstants) -> float:
        """τ^N: first time Q^N leaves U."""
        out = ~loc.in_U(self.q)
        if not out.any():
            return np.inf
        i = int(np.argmax(out))
        return 0.0 if i == 0 else float(self.times[i - 1])

    def _upto(self, t):
        """Number of intervals intersecting [0, t] (index of the state at t, plus one)."""
        return int(self.index(t)) + 1

    def sup_l1(self, reference: Callable, t: float) -> float:
        k = self._upto(t)
        bp = np.concatenate([[0.0], self.times[: k - 1], [t]])
        ref = np.asarray(reference(bp))
        q = self.q[:k]
        vals = np.maximum(np.abs(q - ref[:-1]).sum(axis=1), np.abs(q - ref[1:]).sum(axis=1))
        return float(vals.max())

    def sup_sum(self, S: Callable, t: float) -> float:
        k = self._upto(t)
        bp = np.concatenate([[0.0], self.times[: k - 1], [t]])
        ref = np.asarray(S(bp))
        s = self.q[:k].sum(axis=1)
        return float(np.maximum(np.abs(s - ref[:-1]), np.abs(s - ref[1:])).max())

    def sup_d_inf(self, lambda_inf, t: float) -> float:
        k = self._upto(t)
        return float(np.max(d_infinity_path(self.q[:k], lambda_inf, self.a)))

    def averaging_error(self, v: int, f: Callable, t: float, convention="regularized") -> float:
        """sup_{s ≤ t} |∫₀^s (σ^N_v − π^{NQ^N}(v)) f(Q^N) du|, exact on the event grid."""
        k = self._upto(t)
        bp = np.concatenate([[0.0], self.times[: k - 1], [t]])
        dt = np.diff(bp)
        q = self.q[:k]
        x = q * self.N
        w = (x + 1.0) ** self.a if convention == "regularized" else x ** self.a
        pi_v = w[:, v - 1] / (1.0 + w.sum(axis=1))
        active = (self.sigma[:k] == v).astype(float) if self.traj.params.graph.complete \
            else ((self.sigma[:k] >> (v - 1)) & 1).astype(float)
        fv = np.asarray(f(q), dtype=float)
        fv = np.broadcast_to(fv, (k,))
        integral = np.concatenate([[0.0], np.cumsum((active - pi_v) * fv * dt)])
        return float(np.max(np.abs(integral)))

    def stats(self, sol: OdeSolution, lambda_inf, loc: LocalizationConstants, T: float,
              threshold: float | None = None) -> PathStats:
        """Localized sup-metrics over [0, T ∧ T^N] against the limit path."""
        thr = loc.m / 2.0 if threshold is None else threshold

        def ref(t):
            return sol.q(t, lambda_inf)

        T_N = self.first_exceedance(ref, thr)
        t_stop = min(T, T_N)
        return PathStats(
            T_N=T_N,
            tau_N=self.exit_time(loc),
            t_stop=t_stop,
            sup_l1=self.sup_l1(ref, t_stop),
            sup_s=self.sup_sum(sol, t_stop),
            sup_d_inf=self.sup_d_inf(lambda_inf, t_stop),
            d_inf_0=float(d_infinity_path(self.q[:1], lambda_inf, self.a)[0]),
            survived=bool(T_N >= T),
        )


def scaled_view(trajectory: Trajectory, N: float, a: float, t_view: float | None = None) -> ScaledPath:
    return ScaledPath(trajectory, N, a, t_view)
