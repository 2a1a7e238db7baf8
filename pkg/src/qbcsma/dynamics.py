"""Exact event-driven simulation of the queue/schedule chain.

States are unscaled: ``q`` counts packets, time runs in unscaled units.
For complete interference graphs the schedule is an element of V₀ = {0, 1..n}
(0 is the empty schedule); for general graphs it is a frozenset of active
nodes. Internally general schedules are bitmasks with bit v-1 for node v.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .model import SystemParams
from .rng import RNG_ID, UniformFeed, make_rng

ARRIVAL, DEPARTURE, ACTIVATE, DEACTIVATE = 0, 1, 2, 3
EVENT_NAMES = ("arrival", "departure", "activate", "deactivate")
_KIND = {name: k for k, name in enumerate(EVENT_NAMES)}

DEFAULT_BUDGET = 10**8


class BudgetExceeded(RuntimeError):
    def __init__(self, budget: int, t: float):
        super().__init__(f"event budget {budget} exhausted at unscaled time {t:.6g}")
        self.budget = budget
        self.t = t


class InvalidTrajectory(ValueError):
    pass


@dataclass(frozen=True)
class ChainState:
    q: tuple[int, ...]
    sigma: int | frozenset = 0

    def __post_init__(self):
        object.__setattr__(self, "q", tuple(int(x) for x in self.q))
        if isinstance(self.sigma, (set, frozenset, list, tuple)):
            object.__setattr__(self, "sigma", frozenset(int(v) for v in self.sigma))
        else:
            object.__setattr__(self, "sigma", int(self.sigma))
        if any(x < 0 for x in self.q):
            raise ValueError("queue lengths must be non-negative")

    @property
    def active(self) -> frozenset:
        if isinstance(self.sigma, frozenset):
            return self.sigma
        return frozenset() if self.sigma == 0 else frozenset({self.sigma})

    def sigma_vector(self) -> np.ndarray:
        """Service-rate vector (σ_v)_v, 0/1 per node."""
        out = np.zeros(len(self.q))
        for v in self.active:
            out[v - 1] = 1.0
        return out


def _mask(active: Iterable[int]) -> int:
    m = 0
    for v in active:
        m |= 1 << (v - 1)
    return m


def _check_state(state: ChainState, params: SystemParams):
    if len(state.q) != params.n:
        raise ValueError(f"state has {len(state.q)} queues, params have n={params.n}")
    active = state.active
    if any(not 1 <= v <= params.n for v in active):
        raise ValueError(f"schedule {sorted(active)} has nodes outside 1..{params.n}")
    nbrs = params.graph.neighbor_masks()
    m = _mask(active)
    for v in active:
        if nbrs[v - 1] & m:
            raise ValueError(f"schedule {sorted(active)} is not an independent set")


def enumerate_transitions(state: ChainState, params: SystemParams):
    """All positive-rate transitions out of ``state`` as ((kind, node), rate)."""
    _check_state(state, params)
    rates = params.rates
    active = state.active
    nbrs = params.graph.neighbor_masks()
    m = _mask(active)
    out = []
    for v in range(1, params.n + 1):
        lam = float(params.lambda_N[v - 1])
        if lam > 0:
            out.append((("arrival", v), lam))
    for v in sorted(active):
        if state.q[v - 1] > 0:
            out.append((("departure", v), 1.0))
        out.append((("deactivate", v), rates.psi_minus(state.q[v - 1])))
    for v in range(1, params.n + 1):
        if v in active or nbrs[v - 1] & m:
            continue
        r = rates.psi_plus(state.q[v - 1])
        if r > 0:
            out.append((("activate", v), r))
    return out


def apply_event(state: ChainState, event, params: SystemParams) -> ChainState:
    kind, v = event
    q = list(state.q)
    complete = params.graph.complete and not isinstance(state.sigma, frozenset)
    active = set(state.active)
    if kind == "arrival":
        q[v - 1] += 1
    elif kind == "departure":
        if v not in active or q[v - 1] == 0:
            raise InvalidTrajectory(f"departure at node {v} not allowed")
        q[v - 1] -= 1
    elif kind == "activate":
        active.add(v)
    elif kind == "deactivate":
        active.discard(v)
    else:
        raise ValueError(f"unknown event kind {kind!r}")
    if complete:
        sigma = next(iter(active)) if active else 0
    else:
        sigma = frozenset(active)
    return ChainState(tuple(q), sigma)


@dataclass
class Trajectory:
    params: SystemParams
    initial: ChainState
    times: np.ndarray
    kinds: np.ndarray
    nodes: np.ndarray
    seed: int
    stream: tuple
    t_end: float
    process: str = "full"
    rng_id: str = RNG_ID
    _q_path: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.times)

    def queue_path(self) -> np.ndarray:
        """Queue vector after each event; row 0 is the initial state."""
        if self._q_path is None:
            n = self.params.n
            delta = np.zeros((len(self.times) + 1, n), dtype=np.int64)
            rows = np.arange(1, len(self.times) + 1)
            arr = self.kinds == ARRIVAL
            dep = self.kinds == DEPARTURE
            delta[rows[arr], self.nodes[arr] - 1] = 1
            delta[rows[dep], self.nodes[dep] - 1] = -1
            delta[0] = self.initial.q
            self._q_path = np.cumsum(delta, axis=0)
        return self._q_path

    def sigma_mask_path(self) -> np.ndarray:
        """Active-set bitmask after each event; row 0 is the initial schedule."""
        bits = np.zeros(len(self.times) + 1, dtype=np.int64)
        bits[0] = _mask(self.initial.active)
        toggle = np.zeros(len(self.times), dtype=np.int64)
        flip = (self.kinds == ACTIVATE) | (self.kinds == DEACTIVATE)
        toggle[flip] = np.left_shift(1, self.nodes[flip].astype(np.int64) - 1)
        # each flip toggles exactly one bit, so a running xor reconstructs the set
        bits[1:] = np.bitwise_xor.accumulate(np.concatenate([[bits[0]], toggle]))[1:]
        return bits

    def sigma_path(self) -> np.ndarray:
        """Schedule after each event: node id (0 = empty) for complete graphs."""
        bits = self.sigma_mask_path()
        if not self.params.graph.complete:
            return bits
        out = np.zeros_like(bits)
        nz = bits > 0
        out[nz] = np.log2(bits[nz]).astype(np.int64) + 1
        return out

    def state_at(self, t: float) -> ChainState:
        """Right-continuous state at unscaled time t."""
        i = int(np.searchsorted(self.times, t, side="right"))
        q = tuple(int(x) for x in self.queue_path()[i])
        bits = int(self.sigma_mask_path()[i])
        active = frozenset(v for v in range(1, self.params.n + 1) if bits >> (v - 1) & 1)
        if self.params.graph.complete:
            return ChainState(q, next(iter(active)) if active else 0)
        return ChainState(q, active)

    def validate(self):
        """Replay every event from the initial state; raise on any violation."""
        if np.any(np.diff(self.times) <= 0) or (len(self.times) and self.times[0] <= 0):
            raise InvalidTrajectory("event times are not strictly increasing")
        state = self.initial
        _check_state(state, self.params)
        for k, v in zip(self.kinds.tolist(), self.nodes.tolist()):
            if EVENT_NAMES[k] == "activate":
                nbrs = self.params.graph.neighbor_masks()[v - 1]
                if nbrs & _mask(state.active) or v in state.active:
                    raise InvalidTrajectory(f"activation of node {v} conflicts with schedule")
            if EVENT_NAMES[k] == "deactivate" and v not in state.active:
                raise InvalidTrajectory(f"deactivation of inactive node {v}")
            state = apply_event(state, (EVENT_NAMES[k], v), self.params)
        return state

    def write_csv(self, path, header_lines: Iterable[str] = ()):
        """Dump as ``t,event,node,q_1..q_n,sigma`` (state after each event)."""
        qp = self.queue_path()
        sp = self.sigma_mask_path()
        complete = self.params.graph.complete
        n = self.params.n

        def fmt_sigma(bits):
            nodes = [v for v in range(1, n + 1) if bits >> (v - 1) & 1]
            if complete:
                return str(nodes[0]) if nodes else "0"
            return " ".join(map(str, nodes))

        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "event", "node"] + [f"q_{v}" for v in range(1, n + 1)] + ["sigma"])
            w.writerow([repr(0.0), "init", ""] + qp[0].tolist() + [fmt_sigma(int(sp[0]))])
            for i in range(len(self.times)):
                w.writerow(
                    [repr(float(self.times[i])), EVENT_NAMES[self.kinds[i]], int(self.nodes[i])]
                    + qp[i + 1].tolist()
                    + [fmt_sigma(int(sp[i + 1]))]
                )


def _finish(params, initial, times, kinds, nodes, seed, stream, t_end, process):
    return Trajectory(
        params=params,
        initial=initial,
        times=np.asarray(times, dtype=float),
        kinds=np.asarray(kinds, dtype=np.int8),
        nodes=np.asarray(nodes, dtype=np.int16),
        seed=seed,
        stream=tuple(stream),
        t_end=float(t_end),
        process=process,
    )


def _simulate_complete(params, initial, t_end, feed, budget, freeze_queues, max_events):
    n = params.n
    a = params.a
    large_q = params.convention == "large_q"
    lam = [0.0] * n if freeze_queues else [float(x) for x in params.lambda_N]
    cum_lam = list(np.cumsum(lam)) if n else []
    s_lam = cum_lam[-1] if n else 0.0
    q = list(initial.q)
    sig = initial.sigma
    times, kinds, nodes = [], [], []
    t = 0.0
    count = 0
    while True:
        if sig == 0:
            acts = []
            tot_act = 0.0
            for x in q:
                w = x ** a if large_q else (x + 1.0) ** a
                tot_act += w / (1.0 + w)
                acts.append(tot_act)
            total = s_lam + tot_act
        else:
            x = q[sig - 1]
            w = x ** a if large_q else (x + 1.0) ** a
            dep = 0.0 if (freeze_queues or x == 0) else 1.0
            total = s_lam + dep + 1.0 / (1.0 + w)
        if total <= 0.0:
            break
        e, u = feed.pair()
        t += e / total
        if t > t_end:
            break
        count += 1
        if count > budget:
            raise BudgetExceeded(budget, t)
        u *= total
        if u < s_lam:
            v = 0
            while v < n - 1 and u >= cum_lam[v]:
                v += 1
            q[v] += 1
            kinds.append(ARRIVAL)
            nodes.append(v + 1)
        elif sig == 0:
            u -= s_lam
            v = 0
            while v < n - 1 and u >= acts[v]:
                v += 1
            sig = v + 1
            kinds.append(ACTIVATE)
            nodes.append(sig)
        else:
            if u - s_lam < dep:
                q[sig - 1] -= 1
                kinds.append(DEPARTURE)
            else:
                kinds.append(DEACTIVATE)
            nodes.append(sig)
            if kinds[-1] == DEACTIVATE:
                sig = 0
        times.append(t)
        if count == max_events:
            break
    return times, kinds, nodes


def _simulate_general(params, initial, t_end, feed, budget, freeze_queues, max_events):
    n = params.n
    a = params.a
    large_q = params.convention == "large_q"
    nbrs = params.graph.neighbor_masks()
    lam = [0.0] * n if freeze_queues else [float(x) for x in params.lambda_N]
    q = list(initial.q)
    mask = _mask(initial.active)
    times, kinds, nodes = [], [], []
    t = 0.0
    count = 0
    while True:
        # (kind, node, rate) candidates, rebuilt each step; n <= 16
        cand = []
        total = 0.0
        for v in range(n):
            if lam[v] > 0:
                cand.append((ARRIVAL, v, lam[v]))
                total += lam[v]
        for v in range(n):
            bit = 1 << v
            x = q[v]
            w = x ** a if large_q else (x + 1.0) ** a
            if mask & bit:
                if x > 0 and not freeze_queues:
                    cand.append((DEPARTURE, v, 1.0))
                    total += 1.0
                r = 1.0 / (1.0 + w)
                cand.append((DEACTIVATE, v, r))
                total += r
            elif not nbrs[v] & mask:
                r = w / (1.0 + w)
                if r > 0:
                    cand.append((ACTIVATE, v, r))
                    total += r
        if total <= 0.0:
            break
        e, u = feed.pair()
        t += e / total
        if t > t_end:
            break
        count += 1
        if count > budget:
            raise BudgetExceeded(budget, t)
        u *= total
        acc = 0.0
        for kind, v, r in cand:
            acc += r
            if u < acc:
                break
        if kind == ARRIVAL:
            q[v] += 1
        elif kind == DEPARTURE:
            q[v] -= 1
        else:
            mask ^= 1 << v
        times.append(t)
        kinds.append(kind)
        nodes.append(v + 1)
        if count == max_events:
            break
    return times, kinds, nodes


def simulate(
    params: SystemParams,
    initial: ChainState,
    t_end_unscaled: float,
    seed: int,
    stream: tuple = (),
    budget: int = DEFAULT_BUDGET,
    freeze_queues: bool = False,
    max_events: int | None = None,
) -> Trajectory:
    """Exact simulation of (Q, σ) on [0, t_end] in unscaled time.

    Total exit rate gives the holding time, a categorical draw picks the event.
    With ``freeze_queues`` only schedule flips happen, at the rates of the
    frozen queue vector. ``max_events`` ends the run (without error) at the
    time of that event, which becomes the trajectory's final time.
    Identical inputs give a bit-identical trajectory.
    """
    if not t_end_unscaled > 0:
        raise ValueError("t_end must be positive")
    _check_state(initial, params)
    if params.graph.complete and isinstance(initial.sigma, frozenset):
        active = initial.active
        initial = ChainState(initial.q, next(iter(active)) if active else 0)
    feed = UniformFeed(make_rng(seed, *stream))
    stop = -1 if max_events is None else int(max_events)
    if params.graph.complete:
        ev = _simulate_complete(params, initial, t_end_unscaled, feed, budget, freeze_queues, stop)
    else:
        ev = _simulate_general(params, initial, t_end_unscaled, feed, budget, freeze_queues, stop)
    process = "frozen" if freeze_queues else "full"
    if max_events is not None and len(ev[0]) == max_events:
        t_end_unscaled = ev[0][-1]
    return _finish(params, initial, *ev, seed, stream, t_end_unscaled, process)


def simulate_homogenized(
    params: SystemParams,
    initial_q,
    t_end_unscaled: float,
    seed: int,
    stream: tuple = (),
    budget: int = DEFAULT_BUDGET,
) -> Trajectory:
    """Queue-only chain where node v is served at rate π^q(v)·1{q_v>0}."""
    if not t_end_unscaled > 0:
        raise ValueError("t_end must be positive")
    if not params.graph.complete:
        raise ValueError("homogenized dynamics are defined for complete graphs")
    n = params.n
    a = params.a
    large_q = params.convention == "large_q"
    lam = [float(x) for x in params.lambda_N]
    s_lam = sum(lam)
    q = [int(x) for x in initial_q]
    if len(q) != n or min(q) < 0:
        raise ValueError("initial queue vector invalid")
    feed = UniformFeed(make_rng(seed, *stream))
    w = [x ** a if large_q else (x + 1.0) ** a for x in q]
    times, kinds, nodes = [], [], []
    t = 0.0
    count = 0
    while True:
        z = 1.0 + sum(w)
        serv = [w[v] / z if q[v] > 0 else 0.0 for v in range(n)]
        total = s_lam + sum(serv)
        if total <= 0.0:
            break
        e, u = feed.pair()
        t += e / total
        if t > t_end_unscaled:
            break
        count += 1
        if count > budget:
            raise BudgetExceeded(budget, t)
        u *= total
        if u < s_lam:
            acc, kind, pool = 0.0, ARRIVAL, lam
        else:
            acc, kind, pool = s_lam, DEPARTURE, serv
        v = 0
        for v in range(n):
            acc += pool[v]
            if u < acc:
                break
        # guard against round-off landing on a zero-rate tail entry
        while pool[v] == 0.0:
            v -= 1
        q[v] += 1 if kind == ARRIVAL else -1
        x = q[v]
        w[v] = x ** a if large_q else (x + 1.0) ** a
        times.append(t)
        kinds.append(kind)
        nodes.append(v + 1)
    start = ChainState(tuple(int(x) for x in initial_q), 0)
    return _finish(params, start, times, kinds, nodes, seed, stream, t_end_unscaled, "homogenized")


def homogenized_transitions(q, params: SystemParams):
    """Rows of the homogenized queue generator (unscaled) at queue vector q."""
    from .equilibrium import stationary_complete

    pi = stationary_complete(q, params.a, params.convention).probs
    out = [(("arrival", v), float(params.lambda_N[v - 1])) for v in range(1, params.n + 1)]
    for v in range(1, params.n + 1):
        if q[v - 1] > 0:
            out.append((("departure", v), float(pi[v])))
    return out


# ---------------------------------------------------------------- generators

StateFn = Callable[[np.ndarray, object], float]


def _scaled_q(state: ChainState, N: float):
    return np.asarray(state.q, dtype=float) / N


def _apply(f: StateFn, state: ChainState, params: SystemParams, kinds, scaled, power):
    N = float(params.N) if scaled else 1.0
    speed = params.time_scale if scaled else 1.0
    f0 = f(_scaled_q(state, N), state.sigma)
    acc = 0.0
    for event, rate in enumerate_transitions(state, params):
        if event[0] not in kinds:
            continue
        nxt = apply_event(state, event, params)
        acc += rate * (f(_scaled_q(nxt, N), nxt.sigma) - f0) ** power
    return speed * acc


_SLOW = ("arrival", "departure")
_FAST = ("activate", "deactivate")


def apply_generator(f: StateFn, state: ChainState, params: SystemParams, scaled=True) -> float:
    """L f at ``state``; scaled=True uses the (N, a) generator on E^N × V₀."""
    return _apply(f, state, params, _SLOW + _FAST, scaled, 1)


def slow_generator(f: StateFn, state: ChainState, params: SystemParams, scaled=True) -> float:
    return _apply(f, state, params, _SLOW, scaled, 1)


def fast_generator(f: StateFn, state: ChainState, params: SystemParams, scaled=True) -> float:
    return _apply(f, state, params, _FAST, scaled, 1)


def carre_du_champ(f: StateFn, state: ChainState, params: SystemParams, scaled=True) -> float:
    """Γ f = Σ rate·(Δf)² over all transitions (equivalently L(f²) - 2 f L f)."""
    return _apply(f, state, params, _SLOW + _FAST, scaled, 2)


def apply_slow_generator_to_sum(state: ChainState, params: SystemParams) -> float:
    """Scaled slow generator applied to s(q) = Σ q_v, by exact enumeration."""
    if not params.graph.complete:
        raise ValueError("defined for complete graphs")
    return slow_generator(lambda q, s: float(np.sum(q)), state, params, scaled=True)
