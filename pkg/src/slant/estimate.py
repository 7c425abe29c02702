"""Maximum-likelihood fitting from an event log.

The log-likelihood splits into two independent problems per user: a ridge
least-squares fit of ``(alpha_u, A[u, :])`` on the sentiments the user posted,
and a convex point-process likelihood in ``(mu_u, B[u, :])`` solved by
spectral projected gradient (SPG) on the non-negative orthant.
"""

from __future__ import annotations

import math
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import (EventLog, ModelParams, Network, _post_jump_sums, intensities_from_history,
                   opinions_from_history)

MU_FLOOR = 1e-9


class EstimationError(RuntimeError):
    def __init__(self, message: str, user: int | None = None, partial=None):
        super().__init__(message if user is None else f"user {user}: {message}")
        self.user = user
        self.partial = partial


@dataclass(frozen=True)
class SPGConfig:
    alpha_max: float = 1e4
    alpha_min: float = 1e-10
    alpha_bb: float = 1.0
    memory: int = 10
    tol: float = 1e-6
    sufficient_decrease: float = 1e-4
    max_iters: int = 500

    def __post_init__(self):
        if not (self.alpha_max > 0 and 0 < self.alpha_bb <= self.alpha_max):
            raise ValueError("need 0 < alpha_bb <= alpha_max")
        if self.memory < 1 or self.tol <= 0 or self.max_iters < 1:
            raise ValueError("invalid SPG memory / tolerance / iteration cap")
        if not 0 < self.sufficient_decrease < 1:
            raise ValueError("sufficient_decrease must lie in (0, 1)")


@dataclass(frozen=True)
class EstimateConfig:
    omega: float
    nu: float
    ridge: float = 1e-3
    hawkes: bool = True          # False fits Poisson intensities (B fixed at 0)
    spg: SPGConfig = field(default_factory=SPGConfig)
    threads: int | None = None
    self_only: bool = False      # restrict B to self-excitation (diagonal)

    def __post_init__(self):
        if self.omega <= 0 or self.nu <= 0:
            raise ValueError("omega and nu must be positive")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")


# --------------------------------------------------------------------------
# Features
# --------------------------------------------------------------------------


@dataclass
class FeatureTable:
    """Per-user design data for both subproblems.

    ``g[u]`` has one column per followee of ``u`` (``opinion_cols[u]``);
    ``h[u]`` has one column per entry of ``intensity_cols[u]`` = ``[u] + N(u)``.
    ``integrals[v]`` is the compensator mass of one unit of ``B`` on ``v``.
    """

    n_users: int
    horizon: float
    omega: float
    nu: float
    targets: list[np.ndarray]
    times: list[np.ndarray]
    opinion_cols: list[np.ndarray]
    intensity_cols: list[np.ndarray]
    g: list[np.ndarray]
    h: list[np.ndarray]
    integrals: np.ndarray

    def n_events(self, u: int) -> int:
        return len(self.targets[u])


def _lookup(tv: np.ndarray, c: np.ndarray, q: np.ndarray, decay: float) -> np.ndarray:
    k = np.searchsorted(tv, q, side="left") - 1
    out = np.zeros(len(q))
    ok = k >= 0
    kk = k[ok]
    out[ok] = c[kk] * np.exp(-decay * (q[ok] - tv[kk]))
    return out


def build_features(log: EventLog, network: Network, omega: float, nu: float) -> FeatureTable:
    """Kernel features at each user's own event times.

    Every user's history is folded once into its post-jump running sums; a
    user's features are then read off by merging its event times against each
    followee's (sorted lookup), never by re-summing the history.
    """
    n = network.n_users
    idx = log.user_index(n)
    times = [log.t[i] for i in idx]
    marks = [log.m[i] for i in idx]
    cg = [_post_jump_sums(times[v], marks[v], omega) for v in range(n)]
    ch = [_post_jump_sums(times[v], np.ones(len(times[v])), nu) for v in range(n)]
    T = log.horizon
    integrals = np.array([float(np.sum(1.0 - np.exp(-nu * (T - times[v])))) / nu
                          for v in range(n)])
    g, h, ocols, icols = [], [], [], []
    for u in range(n):
        nbrs = network.followees(u)
        tu = times[u]
        G = np.empty((len(tu), len(nbrs)))
        for j, v in enumerate(nbrs):
            G[:, j] = _lookup(times[v], cg[v], tu, omega)
        cols = np.concatenate([[u], nbrs]).astype(np.int64)
        H = np.empty((len(tu), len(cols)))
        for j, v in enumerate(cols):
            H[:, j] = _lookup(times[v], ch[v], tu, nu)
        g.append(G)
        h.append(H)
        ocols.append(nbrs)
        icols.append(cols)
    return FeatureTable(n, T, omega, nu, marks, times, ocols, icols, g, h, integrals)


# --------------------------------------------------------------------------
# Opinion parameters: ridge least squares
# --------------------------------------------------------------------------


def estimate_opinion_params(features: FeatureTable, u: int, lam: float = 1e-3):
    """Ridge solution ``(lam I + X'X)^{-1} X'y`` with ``X = [1, g_u]``.

    Returns ``(alpha_u, a_row)`` with ``a_row`` aligned to ``features.opinion_cols[u]``.
    """
    y = features.targets[u]
    if len(y) == 0:
        raise EstimationError("no events to fit opinion parameters", u)
    X = np.column_stack([np.ones(len(y)), features.g[u]])
    L = X.T @ X + lam * np.eye(X.shape[1])
    if lam == 0 and np.linalg.matrix_rank(L) < L.shape[0]:
        raise EstimationError("singular normal matrix; use a ridge lambda > 0", u)
    rhs = X.T @ y
    try:
        coef = np.linalg.solve(L, rhs)
    except np.linalg.LinAlgError:
        # numerically singular despite the ridge (badly scaled features)
        coef = np.linalg.lstsq(L, rhs, rcond=None)[0]
    return float(coef[0]), coef[1:]


# --------------------------------------------------------------------------
# Intensity parameters: convex negative log-likelihood + SPG
# --------------------------------------------------------------------------


def hawkes_negloglik_and_grad(mu_u: float, b_row, features: FeatureTable, u: int,
                              T: float | None = None):
    """Negative temporal log-likelihood of user ``u`` and its gradient.

    The gradient is ordered ``[d/dmu, d/db_row...]``; returns ``(inf, nan...)``
    when some event of ``u`` would have a non-positive intensity.
    """
    T = features.horizon if T is None else T
    b = np.asarray(b_row, dtype=float)
    H = features.h[u]
    I = features.integrals[features.intensity_cols[u]]
    lam = mu_u + H @ b
    if len(lam) and lam.min() <= 0:
        return math.inf, np.full(1 + len(b), np.nan)
    value = -float(np.sum(np.log(lam))) + mu_u * T + float(b @ I)
    inv = 1.0 / lam
    grad = np.empty(1 + len(b))
    grad[0] = T - inv.sum()
    grad[1:] = I - H.T @ inv
    return value, grad


@dataclass
class IntensityFit:
    mu: float
    b: np.ndarray
    converged: bool
    iterations: int
    objective: float
    initial_objective: float
    trace: list = field(default_factory=list, repr=False)


def spg_minimize(fun, x0: np.ndarray, config: SPGConfig, free: np.ndarray | None = None,
                 keep_trace: bool = False):
    """Nonmonotone spectral projected gradient on ``{x >= 0}``.

    ``fun(x) -> (f, grad)``.  Coordinates with ``free == False`` stay at zero.
    Returns ``(x, f, converged, iterations, f0, trace)``.
    """
    mask = np.ones(len(x0), dtype=bool) if free is None else np.asarray(free, dtype=bool)

    def proj(z):
        return np.where(mask, np.maximum(z, 0.0), 0.0)

    x = proj(np.asarray(x0, dtype=float))
    f, g = fun(x)
    if not math.isfinite(f):
        raise EstimationError("objective is not finite at the starting point")
    f0 = f
    hist = deque([f], maxlen=config.memory)
    step = min(config.alpha_max, max(config.alpha_min, config.alpha_bb))
    trace = [x.copy()] if keep_trace else []
    gamma = config.sufficient_decrease
    for k in range(config.max_iters):
        pg = proj(x - g) - x
        if np.max(np.abs(pg), initial=0.0) <= config.tol:
            return x, f, True, k, f0, trace
        d = proj(x - step * g) - x
        gtd = float(g @ d)
        f_ref = max(hist)
        t = 1.0
        while True:
            x_new = x + t * d
            f_new, g_new = fun(x_new)
            if f_new <= f_ref + gamma * t * gtd:
                break
            # safeguarded quadratic backtracking
            denom = f_new - f - t * gtd
            t_q = -0.5 * t * t * gtd / denom if math.isfinite(f_new) and denom > 0 else 0.0
            t = t_q if 0.1 * t <= t_q <= 0.5 * t else 0.5 * t
            if t < 1e-16:
                return x, f, False, k, f0, trace
        s = x_new - x
        y = g_new - g
        sty = float(s @ y)
        step = config.alpha_max if sty <= 0 else min(config.alpha_max,
                                                     max(config.alpha_min, float(s @ s) / sty))
        x, f, g = x_new, f_new, g_new
        hist.append(f)
        if keep_trace:
            trace.append(x.copy())
    pg = proj(x - g) - x
    return x, f, bool(np.max(np.abs(pg), initial=0.0) <= config.tol), config.max_iters, f0, trace


def spg_estimate_intensity(features: FeatureTable, u: int, T: float | None = None,
                           config: SPGConfig | None = None, hawkes: bool = True,
                           keep_trace: bool = False, self_only: bool = False) -> IntensityFit:
    """Fit ``(mu_u, B[u, intensity_cols[u]])`` by SPG.

    ``hawkes=False`` pins ``B`` to 0; ``self_only`` frees only ``b_uu``.
    """
    config = config or SPGConfig()
    T = features.horizon if T is None else T
    n_u = features.n_events(u)
    k = len(features.intensity_cols[u])

    def fun(z):
        return hawkes_negloglik_and_grad(z[0], z[1:], features, u, T)

    x0 = np.zeros(1 + k)
    x0[0] = max(0.5 * n_u / T, MU_FLOOR)
    free = np.ones(1 + k, dtype=bool)
    if not hawkes:
        free[1:] = False
    elif self_only:
        free[2:] = False
    x, f, ok, it, f0, trace = spg_minimize(fun, x0, config, free, keep_trace)
    return IntensityFit(float(x[0]), x[1:].copy(), ok, it, f, f0, trace)


# --------------------------------------------------------------------------
# Whole-network fit
# --------------------------------------------------------------------------


@dataclass
class UserFit:
    alpha: float
    a: np.ndarray
    resid_ss: float
    n: int
    intensity: IntensityFit | None


def _fit_user(features: FeatureTable, u: int, config: EstimateConfig) -> UserFit:
    n_u = features.n_events(u)
    if n_u == 0:
        k = len(features.intensity_cols[u])
        return UserFit(0.0, np.zeros(len(features.opinion_cols[u])), 0.0, 0,
                       IntensityFit(MU_FLOOR, np.zeros(k), True, 0, 0.0, 0.0))
    alpha_u, a = estimate_opinion_params(features, u, config.ridge)
    resid = features.targets[u] - alpha_u - features.g[u] @ a
    fit = spg_estimate_intensity(features, u, features.horizon, config.spg, config.hawkes,
                                 self_only=config.self_only)
    return UserFit(alpha_u, a, float(resid @ resid), n_u, fit)


def _threads(config: EstimateConfig) -> int:
    if config.threads:
        return config.threads
    return max(1, int(os.environ.get("SLANT_THREADS", "1")))


def estimate_all(log: EventLog, network: Network, config: EstimateConfig) -> ModelParams:
    """Fit every user's two subproblems and assemble a :class:`ModelParams`.

    Users without events get ``alpha = 0`` and ``mu = MU_FLOOR``.  ``sigma_u``
    is the residual standard deviation of the user's least-squares fit, with
    the pooled residual deviation standing in for users with < 2 events.
    """
    features = build_features(log, network, config.omega, config.nu)
    n = network.n_users
    fits: list[UserFit | None] = [None] * n
    errors = []

    def work(u):
        try:
            fits[u] = _fit_user(features, u, config)
        except Exception as exc:  # noqa: BLE001 - re-raised below with the user id
            errors.append((u, exc))

    n_threads = _threads(config)
    if n_threads > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            list(pool.map(work, range(n)))
    else:
        for u in range(n):
            work(u)

    alpha = np.zeros(n)
    mu = np.full(n, MU_FLOOR)
    a_rows, a_cols, a_vals = [], [], []
    b_rows, b_cols, b_vals = [], [], []
    ss, dof = 0.0, 0
    sigma = np.full(n, np.nan)
    for u in range(n):
        fu = fits[u]
        if fu is None:
            continue
        alpha[u] = fu.alpha
        a_rows.append(np.full(len(fu.a), u))
        a_cols.append(features.opinion_cols[u])
        a_vals.append(fu.a)
        mu[u] = max(fu.intensity.mu, MU_FLOOR)
        b_rows.append(np.full(len(fu.intensity.b), u))
        b_cols.append(features.intensity_cols[u])
        b_vals.append(fu.intensity.b)
        if fu.n >= 2:
            sigma[u] = math.sqrt(fu.resid_ss / fu.n)
        ss += fu.resid_ss
        dof += fu.n
    pooled = math.sqrt(ss / dof) if dof and ss > 0 else 1.0
    sigma = np.where(np.isfinite(sigma) & (sigma > 0), sigma, pooled)

    def assemble(rows, cols, vals):
        if not rows:
            return sp.csr_matrix((n, n))
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n, n))

    params = ModelParams(alpha, assemble(a_rows, a_cols, a_vals), mu,
                         assemble(b_rows, b_cols, b_vals), config.omega, config.nu, sigma)
    if errors:
        u, exc = min(errors, key=lambda e: e[0])
        raise EstimationError(str(exc), u, partial=params) from exc
    return params


# --------------------------------------------------------------------------
# Decay-rate selection
# --------------------------------------------------------------------------


def chronological_split(log: EventLog, train_fraction: float = 0.9):
    """First ``train_fraction`` of the messages for training, the rest held out."""
    k = int(math.floor(train_fraction * len(log)))
    if k == 0 or k == len(log):
        raise EstimationError("split leaves an empty train or test set")
    cut = float(log.t[k])
    return log.slice(0, k, horizon=cut), k, cut


def select_decays(log: EventLog, network: Network, omegas, nus,
                  base: EstimateConfig | None = None) -> tuple[float, float, dict]:
    """Grid search over kernel decays on a chronological 90/10 split.

    ``omega`` is scored by held-out sentiment MSE of the nowcast opinion and
    ``nu`` by held-out temporal log-likelihood; the two are independent
    because each decay enters only one half of the likelihood.
    """
    base = base or EstimateConfig(omega=1.0, nu=1.0)
    train, k, cut = chronological_split(log)
    test_t, test_u, test_m = log.t[k:], log.u[k:], log.m[k:]
    scores: dict = {"omega": {}, "nu": {}}
    for om in omegas:
        cfg = EstimateConfig(om, base.nu, base.ridge, False, base.spg, base.threads)
        p = estimate_all(train, network, cfg)
        X = opinions_from_history(log, p, test_t)
        pred = X[test_u, np.arange(len(test_u))]
        scores["omega"][om] = float(np.mean((test_m - pred) ** 2))
    for nu in nus:
        cfg = EstimateConfig(base.omega, nu, base.ridge, base.hawkes, base.spg, base.threads)
        p = estimate_all(train, network, cfg)
        scores["nu"][nu] = -heldout_loglik(log, p, cut)
    best_om = min(scores["omega"], key=scores["omega"].get)
    best_nu = min(scores["nu"], key=scores["nu"].get)
    return best_om, best_nu, scores


def heldout_loglik(log: EventLog, params: ModelParams, start: float) -> float:
    """Temporal log-likelihood of the events in ``[start, horizon)`` given everything before."""
    sel = log.t >= start
    tq = log.t[sel]
    lam = intensities_from_history(log, params, tq)[log.u[sel], np.arange(len(tq))]
    # compensator over [start, T): mu part plus decayed kernel mass of all events
    T = log.horizon
    ti = log.t
    nu = params.nu
    lo = np.maximum(start, ti)
    mass = (np.exp(-nu * (lo - ti)) - np.exp(-nu * (T - ti))) / nu
    per_source = np.bincount(log.u, weights=mass, minlength=params.n_users)
    col_mass = np.asarray(params.B.sum(axis=0)).ravel()
    comp = params.mu.sum() * (T - start) + float(col_mass @ per_source)
    return float(np.sum(np.log(lam))) - comp
