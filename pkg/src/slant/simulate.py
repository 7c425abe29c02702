"""Exact sampling of the coupled opinion / message process.

Each user keeps one pending candidate time in a binary heap.  When a user
posts, only the poster and its followers change state, so only their
candidates are redrawn; stale heap entries are skipped on pop (lazy
invalidation) and purged when they pile up.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .core import EventLog, MarkovState, ModelError, ModelParams, Network, RandomStream


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    rng_seed: int = 0
    sentiment: str = "gaussian"
    max_events: int | None = None

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.max_events is not None and self.max_events <= 0:
            raise ValueError("max_events must be positive when set")
        if self.sentiment not in ("gaussian", "logistic"):
            raise ValueError(f"unknown sentiment model {self.sentiment!r}")


class SimulationTruncated(RuntimeError):
    """The event cap was hit; ``partial`` holds the log generated so far."""

    def __init__(self, message: str, partial: EventLog):
        super().__init__(message)
        self.partial = partial


def sample_next_event_time(lambda_now: float, mu_u: float, nu: float, t: float, T: float,
                           rng) -> float | None:
    """Next event time after ``t`` of an exponentially relaxing intensity, by thinning.

    The intensity is ``mu + (lambda_now - mu) exp(-nu (s - t))``.  Returns
    ``None`` when no event occurs before ``T``.
    """
    if not isinstance(rng, RandomStream):
        rng = RandomStream(rng)
    return _thin(lambda_now, mu_u, nu, t, T, rng.uniform)


def _thin(lambda_now, mu_u, nu, t, T, uniform):
    excess = lambda_now - mu_u
    lam_bar = lambda_now if excess > 0 else mu_u
    if lam_bar <= 0:
        return None
    s = t
    while True:
        s -= math.log(uniform()) / lam_bar
        if s >= T:
            return None
        if excess == 0.0:
            return s
        lam_s = mu_u + excess * math.exp(-nu * (s - t))
        if uniform() * lam_bar <= lam_s:
            return s
        if excess > 0:
            lam_bar = lam_s
        if lam_bar <= 0:
            return None


class Propagation:
    """Follower lists of every poster with the matching ``A``/``B`` entries.

    Precomputed once per (network, params) pair and reused across runs.
    """

    def __init__(self, network: Network, params: ModelParams):
        if network.n_users != params.n_users:
            raise ModelError("network and params disagree on n_users")
        ptr, idx = network.follower_csr()
        posters = np.repeat(np.arange(network.n_users), np.diff(ptr))
        if len(idx):
            a = np.asarray(params.A[idx, posters]).ravel()
            b = np.asarray(params.B[idx, posters]).ravel()
        else:
            a = b = np.zeros(0)
        self.n = network.n_users
        self.ptr = ptr.tolist()
        self.followers = idx.tolist()
        self.a = a.tolist()
        self.b = b.tolist()
        self.b_self = params.b_self.tolist()
        self.alpha = params.alpha.tolist()
        self.mu = params.mu.tolist()
        self.sigma = params.sigma.tolist()
        self.omega = params.omega
        self.nu = params.nu


@dataclass
class SimRun:
    log: EventLog
    state: MarkovState
    key_updates: list[int] | None = None


def run_from_state(network: Network, params: ModelParams, state: MarkovState,
                   t_end: float, stream: RandomStream, sentiment: str = "gaussian",
                   max_events: int | None = None, record: bool = True,
                   track_updates: bool = False, prop: Propagation | None = None) -> SimRun:
    """Continue the process from ``state`` (at ``state.t_now``) up to ``t_end``.

    ``state`` is not modified; the returned run carries a new state whose
    stored values are lazily decayed (read with ``state.opinions(t_end, ...)``).
    """
    prop = prop or Propagation(network, params)
    t0 = state.t_now
    if not t_end > t0:
        raise ValueError("t_end must be after the state time")
    n = prop.n
    x = state.opinions(t0, params).tolist()
    lam = state.intensities(t0, params).tolist()
    tl = [t0] * n
    alpha, mu, sigma, b_self = prop.alpha, prop.mu, prop.sigma, prop.b_self
    ptr, fol, av, bv = prop.ptr, prop.followers, prop.a, prop.b
    omega, nu = prop.omega, prop.nu
    gaussian = sentiment == "gaussian"
    exp, log = math.exp, math.log
    uniform, normal = stream.uniform, stream.normal
    sample = _thin

    heap: list[tuple[float, int, int]] = []
    version = [0] * n
    for u in range(n):
        s = sample(lam[u], mu[u], nu, t0, t_end, uniform)
        if s is not None:
            heap.append((s, u, 0))
    heapq.heapify(heap)
    compact_at = 4 * n + 1024

    ts: list[float] = []
    us: list[int] = []
    ms: list[float] = []
    updates: list[int] | None = [] if track_updates else None
    n_ev = 0
    pop, push = heapq.heappop, heapq.heappush

    while heap:
        s, u, ver = pop(heap)
        if ver != version[u]:
            continue
        if max_events is not None and n_ev >= max_events:
            partial = EventLog(ts, us, ms, t_end) if record else EventLog.empty(t_end)
            raise SimulationTruncated(f"max_events={max_events} exceeded at t={s:.6g}", partial)
        dt = s - tl[u]
        xu = alpha[u] + (x[u] - alpha[u]) * exp(-omega * dt)
        lu = mu[u] + (lam[u] - mu[u]) * exp(-nu * dt) + b_self[u]
        if gaussian:
            m = xu + sigma[u] * normal()
        else:
            m = 1.0 if xu > -700 and uniform() * (1.0 + exp(-xu)) < 1.0 else -1.0
        n_ev += 1
        if record:
            ts.append(s)
            us.append(u)
            ms.append(m)
        x[u], lam[u], tl[u] = xu, lu, s
        version[u] += 1
        nt = sample(lu, mu[u], nu, s, t_end, uniform)
        if nt is not None:
            push(heap, (nt, u, version[u]))
        k0, k1 = ptr[u], ptr[u + 1]
        for k in range(k0, k1):
            w = fol[k]
            dt = s - tl[w]
            e_o = exp(-omega * dt)
            e_i = exp(-nu * dt)
            aw, mw = alpha[w], mu[w]
            x[w] = aw + (x[w] - aw) * e_o + av[k] * m
            lw = mw + (lam[w] - mw) * e_i + bv[k]
            lam[w] = lw
            tl[w] = s
            version[w] += 1
            if lw == mw:
                # constant intensity: thinning reduces to one exponential gap
                if mw > 0:
                    nt = s - log(uniform()) / mw
                    if nt < t_end:
                        push(heap, (nt, w, version[w]))
                continue
            nt = sample(lw, mw, nu, s, t_end, uniform)
            if nt is not None:
                push(heap, (nt, w, version[w]))
        if updates is not None:
            updates.append(1 + k1 - k0)
        if len(heap) > compact_at:
            heap = [e for e in heap if e[2] == version[e[1]]]
            heapq.heapify(heap)

    out_state = MarkovState(np.array(x), np.array(lam), np.array(tl), float(t_end),
                            state.n_events + n_ev)
    log = EventLog(ts, us, ms, t_end) if record else EventLog.empty(t_end)
    return SimRun(log, out_state, updates)


def simulate(network: Network, params: ModelParams, config: SimConfig) -> EventLog:
    """Sample an event log on ``[0, config.horizon)`` starting from ``x = alpha``, ``lambda = mu``."""
    params.check_support(network)
    stream = RandomStream.split(config.rng_seed)
    run = run_from_state(network, params, MarkovState.initial(params), config.horizon,
                         stream, config.sentiment, config.max_events)
    return run.log


def stationary_rates(params: ModelParams) -> np.ndarray:
    """Long-run mean intensities ``(I - B/nu)^{-1} mu`` (requires a subcritical ``B``)."""
    n = params.n_users
    M = np.eye(n) - params.B.toarray() / params.nu
    return np.linalg.solve(M, params.mu)
