"""Domain types and the O(1) Markov update primitives.

Orientation convention used everywhere in the package: coupling matrices are
row-indexed by the *receiver*.  ``A[u, v]`` holds the influence of user ``v``'s
messages on the opinion of user ``u`` (``v`` is followed by ``u``), and
``B[u, v]`` holds the excitation of ``u``'s posting rate by ``v``'s messages.
The diagonal of ``B`` carries self-excitation; the diagonal of ``A`` is always
empty.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple

import numpy as np
import scipy.sparse as sp

TIE_EPS = 1e-9


class ModelError(ValueError):
    """Raised when a network, parameter set or event log violates its invariants."""


# --------------------------------------------------------------------------
# Network
# --------------------------------------------------------------------------


def _csr_lists(n: int, rows: np.ndarray, cols: np.ndarray):
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(ptr, rows + 1, 1)
    return np.cumsum(ptr), cols


class Network:
    """Directed follow graph.

    An edge ``(u, v)`` means *u follows v*, i.e. ``v`` is in ``N(u)`` and
    messages posted by ``v`` reach ``u``.
    """

    def __init__(self, n_users: int, edges: Iterable[tuple[int, int]] | np.ndarray = ()):
        n_users = int(n_users)
        if n_users <= 0:
            raise ModelError("n_users must be positive")
        e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        e = e.reshape(-1, 2)
        if e.size:
            if e.min() < 0 or e.max() >= n_users:
                raise ModelError(f"edge endpoint outside [0, {n_users})")
            if np.any(e[:, 0] == e[:, 1]):
                raise ModelError("self-edges are not allowed in the follow graph")
            e = np.unique(e, axis=0)
        self.n_users = n_users
        self.edges = e
        self.edges.setflags(write=False)
        # out-followees: N(u)
        self._fe_ptr, self._fe_idx = _csr_lists(n_users, e[:, 0], e[:, 1])
        # in-followers: users w with u in N(w)
        self._fr_ptr, self._fr_idx = _csr_lists(n_users, e[:, 1], e[:, 0])
        for a in (self._fe_ptr, self._fe_idx, self._fr_ptr, self._fr_idx):
            a.setflags(write=False)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def followees(self, u: int) -> np.ndarray:
        """``N(u)``: the users that ``u`` follows."""
        return self._fe_idx[self._fe_ptr[u]:self._fe_ptr[u + 1]]

    def followers(self, v: int) -> np.ndarray:
        """Users whose opinion and intensity react to messages of ``v``."""
        return self._fr_idx[self._fr_ptr[v]:self._fr_ptr[v + 1]]

    def out_degree(self, v: int) -> int:
        return int(self._fr_ptr[v + 1] - self._fr_ptr[v])

    def follower_csr(self):
        return self._fr_ptr, self._fr_idx

    def mask(self, diagonal: bool = False) -> sp.csr_matrix:
        """Boolean support matrix, row = receiver, column = followee."""
        rows, cols = self.edges[:, 0], self.edges[:, 1]
        if diagonal:
            d = np.arange(self.n_users)
            rows, cols = np.concatenate([rows, d]), np.concatenate([cols, d])
        data = np.ones(len(rows), dtype=bool)
        return sp.csr_matrix((data, (rows, cols)), shape=(self.n_users, self.n_users))

    def __eq__(self, other):
        return (isinstance(other, Network) and self.n_users == other.n_users
                and np.array_equal(self.edges, other.edges))

    def __repr__(self):
        return f"Network(n_users={self.n_users}, n_edges={self.n_edges})"


# --------------------------------------------------------------------------
# Events
# --------------------------------------------------------------------------


class Event(NamedTuple):
    t: float
    u: int
    m: float


class EventLog:
    """Time-ordered message history on ``[0, horizon)``.

    Stored column-wise (``t``, ``u``, ``m`` arrays).  Times are strictly
    increasing; use :meth:`ingest` for raw data that may contain ties.
    """

    def __init__(self, t, u, m, horizon: float, n_users: int | None = None):
        t = np.ascontiguousarray(t, dtype=np.float64).ravel()
        u = np.ascontiguousarray(u, dtype=np.int64).ravel()
        m = np.ascontiguousarray(m, dtype=np.float64).ravel()
        horizon = float(horizon)
        if not (len(t) == len(u) == len(m)):
            raise ModelError("t, u, m must have equal length")
        if not math.isfinite(horizon) or horizon <= 0:
            raise ModelError("horizon must be positive and finite")
        if len(t):
            if not np.all(np.isfinite(t)) or t[0] < 0:
                raise ModelError("event times must be finite and non-negative")
            if not np.all(np.isfinite(m)):
                raise ModelError("sentiments must be finite")
            if np.any(np.diff(t) <= 0):
                raise ModelError("event times must be strictly increasing (ties forbidden)")
            if t[-1] >= horizon:
                raise ModelError("all event times must be < horizon")
            if u.min() < 0 or (n_users is not None and u.max() >= n_users):
                raise ModelError("event user id out of range")
        for a in (t, u, m):
            a.setflags(write=False)
        self.t, self.u, self.m = t, u, m
        self.horizon = horizon

    @classmethod
    def empty(cls, horizon: float) -> "EventLog":
        return cls([], [], [], horizon)

    @classmethod
    def from_events(cls, events: Iterable[Event | tuple], horizon: float) -> "EventLog":
        ev = list(events)
        if not ev:
            return cls.empty(horizon)
        t, u, m = zip(*ev)
        return cls(t, u, m, horizon)

    @classmethod
    def ingest(cls, t, u, m, horizon: float | None = None) -> "EventLog":
        """Sort raw events and break exact ties by shifting later copies forward."""
        t = np.asarray(t, dtype=np.float64).ravel()
        u = np.asarray(u, dtype=np.int64).ravel()
        m = np.asarray(m, dtype=np.float64).ravel()
        order = np.argsort(t, kind="stable")
        t, u, m = t[order].copy(), u[order], m[order]
        n_ties = 0
        for i in range(1, len(t)):
            if t[i] <= t[i - 1]:
                t[i] = max(t[i - 1] + TIE_EPS, np.nextafter(t[i - 1], np.inf))
                n_ties += 1
        if n_ties:
            warnings.warn(f"{n_ties} tied event time(s) perturbed by +{TIE_EPS:g} s",
                          stacklevel=2)
        if horizon is None:
            horizon = float(np.nextafter(t[-1], np.inf)) if len(t) else 1.0
        return cls(t, u, m, horizon)

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for t, u, m in zip(self.t.tolist(), self.u.tolist(), self.m.tolist()):
            yield Event(t, u, m)

    @property
    def events(self) -> list[Event]:
        return list(self)

    def __eq__(self, other):
        return (isinstance(other, EventLog) and self.horizon == other.horizon
                and np.array_equal(self.t, other.t) and np.array_equal(self.u, other.u)
                and np.array_equal(self.m, other.m))

    def before(self, t: float) -> "EventLog":
        """Prefix ``H(t)`` (events strictly before ``t``) keeping horizon ``t``."""
        k = int(np.searchsorted(self.t, t, side="left"))
        return EventLog(self.t[:k], self.u[:k], self.m[:k], max(t, np.nextafter(0.0, 1.0)))

    def slice(self, start: int, stop: int, horizon: float | None = None) -> "EventLog":
        return EventLog(self.t[start:stop], self.u[start:stop], self.m[start:stop],
                        self.horizon if horizon is None else horizon)

    def user_times(self, n_users: int) -> list[np.ndarray]:
        """Per-user sorted event times."""
        return [self.t[idx] for idx in self.user_index(n_users)]

    def user_index(self, n_users: int) -> list[np.ndarray]:
        order = np.argsort(self.u, kind="stable")
        bounds = np.searchsorted(self.u[order], np.arange(n_users + 1))
        return [order[bounds[i]:bounds[i + 1]] for i in range(n_users)]

    def counts(self, n_users: int) -> np.ndarray:
        return np.bincount(self.u, minlength=n_users)

    def __repr__(self):
        return f"EventLog(n_events={len(self)}, horizon={self.horizon:g})"


# --------------------------------------------------------------------------
# Parameters
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Full model parameterization.

    ``A`` and ``B`` are CSR matrices row-indexed by receiver (see module doc).
    """

    alpha: np.ndarray
    A: sp.csr_matrix
    mu: np.ndarray
    B: sp.csr_matrix
    omega: float
    nu: float
    sigma: np.ndarray

    def __post_init__(self):
        n = len(self.alpha)
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=np.float64))
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=np.float64))
        object.__setattr__(self, "sigma", np.broadcast_to(
            np.asarray(self.sigma, dtype=np.float64), (n,)).copy())
        A, B = sp.csr_matrix(self.A, dtype=np.float64), sp.csr_matrix(self.B, dtype=np.float64)
        A.eliminate_zeros()
        B.eliminate_zeros()
        A.sort_indices()
        B.sort_indices()
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "omega", float(self.omega))
        object.__setattr__(self, "nu", float(self.nu))
        if self.mu.shape != (n,) or A.shape != (n, n) or B.shape != (n, n):
            raise ModelError("inconsistent parameter shapes")
        if np.any(self.mu < 0) or (B.nnz and B.data.min() < 0):
            raise ModelError("mu and B must be non-negative")
        if not (self.omega > 0 and self.nu > 0):
            raise ModelError("omega and nu must be positive")
        if np.any(self.sigma <= 0):
            raise ModelError("sigma must be positive")
        if A.diagonal().any():
            raise ModelError("A must have an empty diagonal (no self opinion influence)")

    @property
    def n_users(self) -> int:
        return len(self.alpha)

    @property
    def b_self(self) -> np.ndarray:
        return self.B.diagonal()

    @property
    def is_poisson(self) -> bool:
        return self.B.nnz == 0

    @property
    def is_diagonal_hawkes(self) -> bool:
        off = self.B - sp.diags(self.B.diagonal())
        return sp.csr_matrix(off).count_nonzero() == 0

    def check_support(self, network: Network) -> None:
        """Raise unless the sparsity of ``A`` and ``B`` respects ``network``."""
        if network.n_users != self.n_users:
            raise ModelError("network and params disagree on n_users")
        for name, mat, diag in (("A", self.A, False), ("B", self.B, True)):
            outside = (mat != 0).astype(np.int8) - (mat != 0).multiply(network.mask(diag)).astype(np.int8)
            if sp.csr_matrix(outside).count_nonzero():
                raise ModelError(f"{name} has entries outside the network support")

    def replace(self, **kw) -> "ModelParams":
        d = dict(alpha=self.alpha, A=self.A, mu=self.mu, B=self.B, omega=self.omega,
                 nu=self.nu, sigma=self.sigma)
        d.update(kw)
        return ModelParams(**d)


# --------------------------------------------------------------------------
# Sentiment distributions
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SentimentModel:
    kind: str = "gaussian"
    sigma: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "logistic"):
            raise ModelError(f"unknown sentiment model {self.kind!r}")
        if self.kind == "gaussian":
            if self.sigma is None:
                raise ModelError("gaussian sentiment needs per-user sigma")
            s = np.atleast_1d(np.asarray(self.sigma, dtype=np.float64))
            if np.any(s <= 0):
                raise ModelError("sigma must be positive")
            object.__setattr__(self, "sigma", s)

    @classmethod
    def for_params(cls, params: ModelParams, kind: str = "gaussian") -> "SentimentModel":
        return cls(kind, params.sigma if kind == "gaussian" else None)

    def pdf(self, m, x: float, u: int = 0):
        m = np.asarray(m, dtype=np.float64)
        if self.kind == "gaussian":
            s = self.sigma[u] if len(self.sigma) > 1 else self.sigma[0]
            return np.exp(-0.5 * ((m - x) / s) ** 2) / (s * math.sqrt(2 * math.pi))
        return np.where(np.abs(m) == 1, 1.0 / (1.0 + np.exp(-m * x)), 0.0)


def sample_sentiment(model: SentimentModel, x: float, rng, u: int = 0) -> float:
    """Draw one sentiment mark for a user currently holding opinion ``x``."""
    if model.kind == "gaussian":
        s = model.sigma[u] if len(model.sigma) > 1 else model.sigma[0]
        return x + s * _normal(rng)
    p = 1.0 / (1.0 + math.exp(-x)) if x > -700 else 0.0
    return 1.0 if _uniform(rng) < p else -1.0


def _uniform(rng) -> float:
    return rng.uniform() if isinstance(rng, RandomStream) else float(rng.random())


def _normal(rng) -> float:
    return rng.normal() if isinstance(rng, RandomStream) else float(rng.standard_normal())


class RandomStream:
    """Buffered scalar draws from a numpy ``Generator``.

    Scalar calls into numpy cost far more than the arithmetic in the event
    loop, so uniforms and normals are pulled in blocks.
    """

    def __init__(self, generator: np.random.Generator | int | None = None, block: int = 4096):
        if not isinstance(generator, np.random.Generator):
            generator = np.random.default_rng(generator)
        self.generator = generator
        self._block = block
        self._u: list[float] = []
        self._n: list[float] = []

    @classmethod
    def split(cls, seed: int, *key: int) -> "RandomStream":
        """Independent stream for ``(seed, *key)``, e.g. one per Monte-Carlo replica."""
        ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
        return cls(np.random.Generator(np.random.Philox(ss)))

    def uniform(self) -> float:
        """Uniform draw on ``(0, 1]`` (never exactly zero, safe for ``log``)."""
        if not self._u:
            self._u = (1.0 - self.generator.random(self._block)).tolist()
            self._u.reverse()
        return self._u.pop()

    def normal(self) -> float:
        if not self._n:
            self._n = self.generator.standard_normal(self._block // 4).tolist()
            self._n.reverse()
        return self._n.pop()


# --------------------------------------------------------------------------
# Markov state and O(1) updates
# --------------------------------------------------------------------------


def decay_opinion(x_last: float, alpha_u: float, omega: float, dt: float) -> float:
    if dt < 0:
        raise ValueError("dt must be non-negative")
    return alpha_u + (x_last - alpha_u) * math.exp(-omega * dt)


def decay_intensity(lambda_last: float, mu_u: float, nu: float, dt: float) -> float:
    if dt < 0:
        raise ValueError("dt must be non-negative")
    return mu_u + (lambda_last - mu_u) * math.exp(-nu * dt)


@dataclass
class MarkovState:
    """Per-user (opinion, intensity, last-update time) with lazy decay.

    Values stored for user ``u`` are exact at ``t_last[u]``; reads at a later
    time apply the closed-form relaxation toward ``alpha_u`` / ``mu_u``.
    """

    x_last: np.ndarray
    lambda_last: np.ndarray
    t_last: np.ndarray
    t_now: float = 0.0
    n_events: int = 0
    touched: list = field(default_factory=list)

    @classmethod
    def initial(cls, params: ModelParams, t0: float = 0.0) -> "MarkovState":
        n = params.n_users
        return cls(params.alpha.copy(), params.mu.copy(), np.full(n, float(t0)), float(t0))

    def opinion(self, u: int, t: float, params: ModelParams) -> float:
        return decay_opinion(self.x_last[u], params.alpha[u], params.omega, t - self.t_last[u])

    def intensity(self, u: int, t: float, params: ModelParams) -> float:
        return decay_intensity(self.lambda_last[u], params.mu[u], params.nu, t - self.t_last[u])

    def opinions(self, t: float, params: ModelParams) -> np.ndarray:
        dt = t - self.t_last
        if np.any(dt < 0):
            raise ValueError("cannot read state before its last update")
        return params.alpha + (self.x_last - params.alpha) * np.exp(-params.omega * dt)

    def intensities(self, t: float, params: ModelParams) -> np.ndarray:
        dt = t - self.t_last
        if np.any(dt < 0):
            raise ValueError("cannot read state before its last update")
        return params.mu + (self.lambda_last - params.mu) * np.exp(-params.nu * dt)

    def advance(self, u: int, t: float, params: ModelParams) -> None:
        """Materialize user ``u``'s decayed values at time ``t``."""
        self.x_last[u] = self.opinion(u, t, params)
        self.lambda_last[u] = self.intensity(u, t, params)
        self.t_last[u] = t


def apply_jump(state: MarkovState, event: Event, params: ModelParams,
               network: Network) -> MarkovState:
    """Apply the jump caused by ``event`` in place; touches only the poster and its followers.

    ``state.touched`` is set to the users whose stored values changed.
    """
    t, u, m = float(event.t), int(event.u), float(event.m)
    if not 0 <= u < params.n_users:
        raise ModelError(f"unknown user id {u}")
    if t < state.t_now:
        raise ValueError("events must be applied in time order")
    state.t_now = t
    touched = []
    b_uu = params.B[u, u]
    if b_uu:
        state.advance(u, t, params)
        state.lambda_last[u] += b_uu
        touched.append(u)
    followers = network.followers(u)
    if len(followers):
        a_col = np.asarray(params.A[followers, u].todense()).ravel()
        b_col = np.asarray(params.B[followers, u].todense()).ravel()
        for w, a, b in zip(followers.tolist(), a_col.tolist(), b_col.tolist()):
            state.advance(w, t, params)
            state.x_last[w] += a * m
            state.lambda_last[w] += b
            touched.append(w)
    state.n_events += 1
    state.touched = touched
    return state


# --------------------------------------------------------------------------
# Batch (from-scratch) evaluators
# --------------------------------------------------------------------------


def opinion_from_history(history: EventLog, params: ModelParams, network: Network,
                         u: int, t: float) -> float:
    """Latent opinion of ``u`` at ``t`` summed directly over the history."""
    if t < 0:
        raise ValueError("t must be non-negative")
    x = params.alpha[u]
    for v in network.followees(u).tolist():
        a = params.A[u, v]
        if a == 0:
            continue
        sel = (history.u == v) & (history.t < t)
        x += a * float(np.sum(history.m[sel] * np.exp(-params.omega * (t - history.t[sel]))))
    return float(x)


def intensity_from_history(history: EventLog, params: ModelParams, network: Network,
                           u: int, t: float) -> float:
    if t < 0:
        raise ValueError("t must be non-negative")
    lam = params.mu[u]
    for v in [u] + network.followees(u).tolist():
        b = params.B[u, v]
        if b == 0:
            continue
        sel = (history.u == v) & (history.t < t)
        lam += b * float(np.sum(np.exp(-params.nu * (t - history.t[sel]))))
    return float(lam)


def kernel_sums(history: EventLog, n_users: int, decay: float, query_times,
                weighted: bool = True) -> np.ndarray:
    """``S[v, k] = sum_{t_i in H_v(q_k)} w_i exp(-decay (q_k - t_i))``.

    ``w_i`` is the sentiment when ``weighted`` else 1.  Uses one recursive pass
    per user plus a sorted lookup, so cost is linear in the history and the
    number of queries (up to the binary search).
    """
    q = np.atleast_1d(np.asarray(query_times, dtype=np.float64))
    out = np.zeros((n_users, len(q)))
    for v, idx in enumerate(history.user_index(n_users)):
        if not len(idx):
            continue
        tv = history.t[idx]
        w = history.m[idx] if weighted else np.ones(len(idx))
        c = _post_jump_sums(tv, w, decay)
        k = np.searchsorted(tv, q, side="left") - 1
        ok = k >= 0
        kk = k[ok]
        out[v, ok] = c[kk] * np.exp(-decay * (q[ok] - tv[kk]))
    return out


def _post_jump_sums(times: np.ndarray, weights: np.ndarray, decay: float) -> np.ndarray:
    """Running value of the exponentially decayed sum right after each event."""
    c = np.empty(len(times))
    acc, t_prev = 0.0, 0.0
    tl, wl = times.tolist(), weights.tolist()
    for i in range(len(tl)):
        acc = acc * math.exp(-decay * (tl[i] - t_prev)) + wl[i]
        t_prev = tl[i]
        c[i] = acc
    return c


def opinions_from_history(history: EventLog, params: ModelParams, t) -> np.ndarray:
    """All users' latent opinions at time(s) ``t``; shape ``(n,)`` or ``(n, len(t))``."""
    S = kernel_sums(history, params.n_users, params.omega, t, weighted=True)
    X = params.alpha[:, None] + params.A @ S
    return X[:, 0] if np.ndim(t) == 0 else X


def intensities_from_history(history: EventLog, params: ModelParams, t) -> np.ndarray:
    S = kernel_sums(history, params.n_users, params.nu, t, weighted=False)
    L = params.mu[:, None] + params.B @ S
    return L[:, 0] if np.ndim(t) == 0 else L
