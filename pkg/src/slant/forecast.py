"""Conditional-expectation opinion forecasts, steady states and variance.

Analytic paths:

* Poisson intensities: closed form through the matrix exponential of
  ``M = A diag(mu) - omega I``.
* Self-exciting (diagonal ``B``) intensities: the mean opinion solves a
  linear ODE whose coefficient follows the expected intensity, integrated
  with RK4 under step doubling.
* Poisson covariance: the matrix ODE for ``Gamma(t0, t)`` integrated jointly
  with the mean.

Monte-Carlo forecasting continues independent simulations from the state
reconstructed at ``t0``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import (EventLog, MarkovState, ModelParams, Network, RandomStream,
                   intensities_from_history, opinions_from_history)
from .simulate import Propagation, run_from_state

DENSE_SOLVE_MAX = 500
COVARIANCE_MAX_USERS = 64
PILOT_RUNS = 50


class ForecastError(RuntimeError):
    pass


@dataclass
class ForecastState:
    x0: np.ndarray
    eta0: np.ndarray
    t0: float


@dataclass
class ForecastResult:
    mean: np.ndarray
    t: float
    method: str                      # poisson-analytic | hawkes-ode | monte-carlo
    variance: np.ndarray | None = None
    mc_runs: int | None = None

    def to_dict(self) -> dict:
        return {"t": self.t, "method": self.method, "mean": self.mean.tolist(),
                "variance": None if self.variance is None else self.variance.tolist(),
                "mc_runs": self.mc_runs}


@dataclass
class StabilityReport:
    regime: str                      # poisson | hawkes | covariance
    statistic: float
    threshold: float
    stable: bool
    steady_state: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {"regime": self.regime, "statistic": self.statistic, "threshold": self.threshold,
                "stable": self.stable,
                "steady_state": None if self.steady_state is None else self.steady_state.tolist()}


# --------------------------------------------------------------------------
# Linear-algebra building blocks
# --------------------------------------------------------------------------


def expm_action(M, v, t: float = 1.0) -> np.ndarray:
    """``exp(M t) v`` without forming ``exp(M t)`` (truncated Taylor with scaling)."""
    v = np.asarray(v, dtype=float)
    if M.shape[0] != M.shape[1] or M.shape[1] != v.shape[0]:
        raise ValueError(f"dimension mismatch: M {M.shape}, v {v.shape}")
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return v.copy()
    M = sp.csr_matrix(M, dtype=float) if not sp.issparse(M) else M.tocsr().astype(float)
    return spla.expm_multiply(M * t, v)


def solve_linear(M, b, tol: float = 1e-10, restart: int = 50, maxiter: int = 200) -> np.ndarray:
    """Solve ``M x = b``: dense LU for small systems, restarted GMRES otherwise."""
    b = np.asarray(b, dtype=float)
    n = M.shape[0]
    if M.shape != (n, n) or b.shape[0] != n:
        raise ValueError(f"dimension mismatch: M {M.shape}, b {b.shape}")
    if n <= DENSE_SOLVE_MAX:
        Md = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
        try:
            with np.errstate(divide="ignore", invalid="ignore"), warnings.catch_warnings():
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                x = sla.solve(Md, b)
        except (sla.LinAlgError, ValueError) as exc:
            raise ForecastError(f"singular system: {exc}") from exc
        res = _rel_residual(Md, x, b)
        if not res <= tol:
            raise ForecastError(f"dense solve residual {res:.3e} above {tol:g}")
        return x
    Ms = sp.csr_matrix(M, dtype=float)
    cols = b.reshape(n, -1)
    out = np.empty_like(cols)
    for j in range(cols.shape[1]):
        x, info = spla.gmres(Ms, cols[:, j], rtol=tol * 0.1, atol=0.0, restart=restart,
                             maxiter=maxiter)
        res = _rel_residual(Ms, x, cols[:, j])
        if info != 0 or not res <= tol:
            raise ForecastError(f"GMRES did not converge (info={info}, residual {res:.3e})")
        out[:, j] = x
    return out.reshape(b.shape)


def _rel_residual(M, x, b) -> float:
    nb = np.linalg.norm(b)
    r = np.linalg.norm(M @ x - b)
    return float(r / nb) if nb > 0 else float(r)


def _max_real_eig(M) -> float:
    n = M.shape[0]
    if n <= DENSE_SOLVE_MAX or not sp.issparse(M):
        Md = M.toarray() if sp.issparse(M) else np.asarray(M)
        return float(np.max(np.linalg.eigvals(Md).real))
    vals = spla.eigs(M.astype(float), k=1, which="LR", return_eigenvectors=False, tol=1e-10,
                     maxiter=20 * n)
    return float(vals.real.max())


def _poisson_generator(params: ModelParams, rates: np.ndarray | None = None) -> sp.csr_matrix:
    rates = params.mu if rates is None else rates
    n = params.n_users
    return (params.A @ sp.diags(rates) - params.omega * sp.identity(n)).tocsr()


# --------------------------------------------------------------------------
# State reconstruction
# --------------------------------------------------------------------------


def reconstruct_state(log: EventLog, params: ModelParams, network: Network,
                      t0: float) -> ForecastState:
    """Opinions ``x(t0)`` and intensities ``eta(t0)`` given all messages before ``t0``."""
    if len(log) and log.t[-1] > t0:
        raise ValueError("t0 must not precede logged events")
    return ForecastState(opinions_from_history(log, params, t0),
                         intensities_from_history(log, params, t0), float(t0))


def state_to_markov(state: ForecastState) -> MarkovState:
    n = len(state.x0)
    return MarkovState(state.x0.copy(), state.eta0.copy(), np.full(n, state.t0), state.t0)


# --------------------------------------------------------------------------
# Poisson intensities
# --------------------------------------------------------------------------


def poisson_mean(params: ModelParams, X0, delta: float, rates: np.ndarray | None = None):
    """Mean opinion ``delta`` after a state ``X0`` (vector or one column per start)."""
    X0 = np.asarray(X0, dtype=float)
    if delta == 0:
        return X0.copy()
    M = _poisson_generator(params, rates)
    try:
        eM_alpha = expm_action(M, params.alpha, delta)
        inhom = params.omega * solve_linear(M, eM_alpha - params.alpha)
    except ForecastError:
        return _augmented_mean(M, params, X0, delta)
    if X0.ndim == 1:
        return expm_action(M, X0, delta) + inhom
    return expm_action(M, X0, delta) + inhom[:, None]


def _augmented_mean(M, params: ModelParams, X0, delta: float):
    """``exp(M d) x0 + int_0^d exp(M s) ds omega alpha`` via one augmented exponential.

    Defined even when ``M`` is singular.
    """
    n = params.n_users
    aug = sp.bmat([[M, sp.csr_matrix(params.omega * params.alpha[:, None])],
                   [None, sp.csr_matrix((1, 1))]]).tocsr()
    cols = X0 if X0.ndim == 2 else X0[:, None]
    Z = np.vstack([cols, np.ones((1, cols.shape[1]))])
    out = expm_action(aug, Z, delta)[:n]
    return out if X0.ndim == 2 else out[:, 0]


def forecast_poisson(state: ForecastState, params: ModelParams, network: Network | None,
                     t: float) -> ForecastResult:
    if t < state.t0:
        raise ValueError("target time precedes t0")
    mean = poisson_mean(params, state.x0, t - state.t0)
    return ForecastResult(mean, float(t), "poisson-analytic")


# --------------------------------------------------------------------------
# Self-exciting intensities (diagonal B)
# --------------------------------------------------------------------------


def _require_diagonal(params: ModelParams) -> None:
    if not params.is_diagonal_hawkes:
        raise ForecastError("analytic forecasting requires B to be diagonal "
                            "(self-excitation only); use Monte-Carlo mode for cross-excitation")


def expected_intensity(state: ForecastState, params: ModelParams, t) -> np.ndarray:
    """``E[lambda(t) | H(t0)]`` for diagonal ``B``; ``t`` scalar or array (columns)."""
    _require_diagonal(params)
    d = np.asarray(t, dtype=float) - state.t0
    if np.any(d < 0):
        raise ValueError("target time precedes t0")
    eta0 = np.asarray(state.eta0, dtype=float)
    b, mu = params.b_self, params.mu
    if eta0.ndim == 2 or np.ndim(d) > 0:
        b, mu = b[:, None], mu[:, None]
        eta0 = eta0 if eta0.ndim == 2 else eta0[:, None]
    return _intensity_mean(b, mu, params.nu, eta0, d)


def _intensity_mean(b, mu, nu, eta0, d):
    r = b - nu
    rd = r * d
    # (e^{r d} - 1) / r, continuous through r = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.where(np.abs(rd) > 1e-8, np.expm1(rd) / np.where(r == 0, 1.0, r),
                       d * (1 + 0.5 * rd))
    return np.exp(rd) * eta0 + nu * phi * mu


def _rk4(rhs, y0, t0: float, t1: float, step: float):
    n_steps = max(1, int(math.ceil((t1 - t0) / step - 1e-12)))
    h = (t1 - t0) / n_steps
    y = np.array(y0, dtype=float)
    t = t0
    for _ in range(n_steps):
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y


def _rk4_doubling(rhs, y0, t0, t1, step, tol, max_halvings=8):
    """RK4 at ``step`` and ``step/2``; halve until the two agree within ``tol``."""
    coarse = _rk4(rhs, y0, t0, t1, step)
    for _ in range(max_halvings):
        step /= 2
        fine = _rk4(rhs, y0, t0, t1, step)
        if np.max(np.abs(fine - coarse), initial=0.0) < tol:
            return fine, step
        coarse = fine
    raise ForecastError(f"RK4 step doubling did not reach {tol:g}")


def default_step(params: ModelParams) -> float:
    return 0.01 / max(params.omega, params.nu)


def hawkes_mean(params: ModelParams, state: ForecastState, t: float, step: float | None = None,
                tol: float = 1e-6) -> np.ndarray:
    """Integrate ``dE[x]/dt = (-omega I + A diag(E[lambda](t))) E[x] + omega alpha``.

    ``state.x0``/``state.eta0`` may be matrices (one column per start state);
    all columns then share ``t0`` and ``t``.
    """
    _require_diagonal(params)
    if t < state.t0:
        raise ValueError("target time precedes t0")
    if t == state.t0:
        return state.x0.copy()
    step = step or default_step(params)
    if step <= 0:
        raise ValueError("step must be positive")
    A, om, nu = params.A, params.omega, params.nu
    column = state.x0.ndim == 2
    oa = om * (params.alpha[:, None] if column else params.alpha)
    b = params.b_self[:, None] if column else params.b_self
    mu = params.mu[:, None] if column else params.mu
    eta0 = np.asarray(state.eta0, dtype=float)
    t0 = state.t0

    def rhs(s, x):
        lam = _intensity_mean(b, mu, nu, eta0, s - t0)
        return A @ (lam * x) - om * x + oa

    y, _ = _rk4_doubling(rhs, state.x0, t0, t, step, tol)
    return y


def forecast_hawkes(state: ForecastState, params: ModelParams, network: Network | None,
                    t: float, step: float | None = None) -> ForecastResult:
    return ForecastResult(hawkes_mean(params, state, t, step), float(t), "hawkes-ode")


# --------------------------------------------------------------------------
# Steady state and stability
# --------------------------------------------------------------------------


def steady_state(params: ModelParams, network: Network | None = None,
                 regime: str = "poisson") -> StabilityReport:
    """Spectral stability test and, when stable, the limiting mean opinion."""
    if regime == "poisson":
        rates = params.mu
    elif regime == "hawkes":
        _require_diagonal(params)
        b = params.b_self
        if np.any(b >= params.nu):
            raise ForecastError("self-excitation b_uu >= nu makes the intensity nonstationary")
        rates = params.mu / (1.0 - b / params.nu)
    else:
        raise ValueError(f"unknown regime {regime!r}")
    n = params.n_users
    AL = (params.A @ sp.diags(rates)).tocsr()
    stat = _max_real_eig(AL) if AL.nnz else 0.0
    stable = stat < params.omega
    x_inf = None
    if stable:
        x_inf = solve_linear((sp.identity(n) - AL / params.omega).tocsr(), params.alpha)
    return StabilityReport(regime, stat, params.omega, bool(stable), x_inf)


def covariance_generator(params: ModelParams, rates: np.ndarray | None = None) -> np.ndarray:
    """The ``n^2 x n^2`` matrix governing ``vec(Gamma)`` (column-major vec)."""
    rates = params.mu if rates is None else rates
    n = params.n_users
    if n > COVARIANCE_MAX_USERS:
        raise ForecastError(f"covariance analysis capped at {COVARIANCE_MAX_USERS} users; "
                            "use Monte-Carlo variance")
    A = params.A.toarray()
    K = A * rates[None, :] - params.omega * np.eye(n)
    I = np.eye(n)
    V = np.kron(K, I) + np.kron(I, K)
    for i in range(n):
        Pi = np.zeros((n, n))
        Pi[i, i] = 1.0
        V += np.kron(A @ (rates[i] * Pi), A @ Pi)
    return V


def covariance_stability(params: ModelParams) -> StabilityReport:
    V = covariance_generator(params)
    stat = float(np.max(np.linalg.eigvals(V).real))
    return StabilityReport("covariance", stat, 0.0, stat < 0.0)


def covariance_dynamics(state: ForecastState, params: ModelParams, network: Network | None,
                        t: float, step: float | None = None, tol: float = 1e-8):
    """``(Gamma(t0, t), E[x](t))`` for Poisson intensities, from ``Gamma(t0, t0) = 0``.

    Integrates, jointly with the mean,
    ``dGamma/dt = K Gamma + Gamma K^T + A diag(lambda (sigma^2 + diag Gamma + E[x]^2)) A^T``
    with ``K = A diag(lambda) - omega I``.
    """
    n = params.n_users
    if n > COVARIANCE_MAX_USERS:
        raise ForecastError(f"covariance analysis capped at {COVARIANCE_MAX_USERS} users; "
                            "use Monte-Carlo variance")
    if t < state.t0:
        raise ValueError("target time precedes t0")
    A = params.A.toarray()
    lam = params.mu
    K = A * lam[None, :] - params.omega * np.eye(n)
    s2 = params.sigma ** 2
    oa = params.omega * params.alpha

    def rhs(_, y):
        m = y[:n]
        G = y[n:].reshape(n, n)
        dm = K @ m + oa
        src = (A * (lam * (s2 + np.diag(G) + m * m))[None, :]) @ A.T
        dG = K @ G + G @ K.T + src
        return np.concatenate([dm, dG.ravel()])

    y0 = np.concatenate([state.x0, np.zeros(n * n)])
    if t == state.t0:
        return np.zeros((n, n)), state.x0.copy()
    y, _ = _rk4_doubling(rhs, y0, state.t0, t, step or default_step(params), tol)
    G = y[n:].reshape(n, n)
    return 0.5 * (G + G.T), y[:n]


# --------------------------------------------------------------------------
# Monte-Carlo forecasting
# --------------------------------------------------------------------------


def mc_sample_size(eps: float, delta: float, sigma2_max: float, x_max: float) -> int:
    """Bernstein-bound number of simulations for accuracy ``eps`` with confidence ``1 - delta``."""
    if not (eps > 0 and 0 < delta < 1 and sigma2_max >= 0 and x_max > 0):
        raise ValueError("need eps > 0, 0 < delta < 1, sigma2_max >= 0, x_max > 0")
    n = (6.0 * sigma2_max + 4.0 * x_max * eps) * math.log(2.0 / delta) / (3.0 * eps * eps)
    return max(1, math.ceil(n - 1e-9))


def _mc_batch(network, params, start: MarkovState, t, seed, runs, offset, sentiment, prop):
    X = np.empty((runs, params.n_users))
    for r in range(runs):
        stream = RandomStream.split(seed, offset + r)
        run = run_from_state(network, params, start, t, stream, sentiment, record=False,
                             prop=prop)
        X[r] = run.state.opinions(t, params)
    return X


def forecast_mc(log: EventLog, params: ModelParams, network: Network, t0: float, t: float,
                runs: int | str = "auto", seed: int = 0, eps: float = 0.05, delta: float = 0.1,
                sentiment: str = "gaussian", sigma2_max: float | None = None,
                x_max: float | None = None) -> ForecastResult:
    """Average of independent continuations of the process from ``H(t0)`` to ``t``.

    ``runs="auto"`` sizes the batch from the Bernstein bound; unknown
    ``sigma2_max`` / ``x_max`` are taken from a 50-run pilot batch (which is
    then discarded).  Replica ``r`` always uses stream ``(seed, r)``, and the
    reduction runs in replica order, so results are reproducible.
    """
    if not t > t0:
        raise ValueError("t must be after t0")
    fstate = reconstruct_state(log.before(t0) if len(log) and log.t[-1] >= t0 else log,
                               params, network, t0)
    start = state_to_markov(fstate)
    prop = Propagation(network, params)
    offset = 0
    if runs == "auto":
        if sigma2_max is None or x_max is None:
            pilot = _mc_batch(network, params, start, t, seed, PILOT_RUNS, 0, sentiment, prop)
            offset = PILOT_RUNS
            if sigma2_max is None:
                sigma2_max = float(pilot.var(axis=0, ddof=1).max())
            if x_max is None:
                x_max = float(np.abs(pilot).max())
        runs = mc_sample_size(eps, delta, sigma2_max, max(x_max, 1e-12))
    runs = int(runs)
    if runs < 1:
        raise ValueError("runs must be >= 1")
    X = _mc_batch(network, params, start, t, seed, runs, offset, sentiment, prop)
    var = X.var(axis=0, ddof=1) if runs > 1 else np.zeros(params.n_users)
    return ForecastResult(X.mean(axis=0), float(t), "monte-carlo", var, runs)


def forecast(log: EventLog, params: ModelParams, network: Network, t0: float, t: float,
             mode: str = "analytic", **kw) -> ForecastResult:
    """Dispatch: analytic (Poisson closed form or diagonal-B ODE) or Monte-Carlo."""
    if mode == "mc":
        return forecast_mc(log, params, network, t0, t, **kw)
    if mode != "analytic":
        raise ValueError(f"unknown mode {mode!r}")
    state = reconstruct_state(log, params, network, t0)
    if params.is_poisson:
        return forecast_poisson(state, params, network, t)
    return forecast_hawkes(state, params, network, t, kw.get("step"))
