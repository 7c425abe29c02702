"""Chronological-split evaluation, dataset summaries and tidy plot data."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import EventLog, ModelParams, Network, intensities_from_history, opinions_from_history
from .estimate import EstimateConfig, chronological_split, estimate_all
from .forecast import ForecastState, hawkes_mean, poisson_mean

RUNNING_WINDOW = 600.0   # seconds


@dataclass
class HorizonScore:
    horizon: float
    mse: float
    failure_rate: float


@dataclass
class EvalReport:
    n_test: int
    rows: list[HorizonScore] = field(default_factory=list)

    @property
    def mse(self) -> np.ndarray:
        return np.array([r.mse for r in self.rows])

    @property
    def failure_rate(self) -> np.ndarray:
        return np.array([r.failure_rate for r in self.rows])

    @property
    def horizons(self) -> np.ndarray:
        return np.array([r.horizon for r in self.rows])

    def to_dict(self) -> dict:
        return {"n_test": self.n_test,
                "horizons": [{"T": r.horizon, "mse": r.mse, "failure_rate": r.failure_rate}
                             for r in self.rows]}


def predict_sentiments(log: EventLog, params: ModelParams, t, u, horizon: float) -> np.ndarray:
    """``E[x_u(t) | H(t - horizon)]`` for each query pair ``(t_k, u_k)``.

    ``horizon = 0`` is nowcasting from the full history before ``t``.
    Requires Poisson intensities or diagonal ``B``.
    """
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=np.int64)
    cols = np.arange(len(t))
    if horizon == 0:
        return opinions_from_history(log, params, t)[u, cols]
    pred = np.empty(len(t))
    t0 = t - horizon
    early = t0 < 0
    groups = [(~early, horizon)]
    # starts before the origin fall back to the initial state at t = 0
    groups += [(t == tk, tk) for tk in np.unique(t[early])]
    for sel, delta in groups:
        if not sel.any():
            continue
        starts = np.maximum(t0[sel], 0.0)
        X0 = opinions_from_history(log, params, starts)
        if params.is_poisson:
            X = poisson_mean(params, X0, delta)
        else:
            eta = intensities_from_history(log, params, starts)
            X = hawkes_mean(params, ForecastState(X0, eta, 0.0), delta)
        pred[sel] = X[u[sel], np.arange(sel.sum())]
    return pred


def evaluate(log: EventLog, network: Network, model: ModelParams | EstimateConfig,
             horizons, train_fraction: float = 0.9) -> EvalReport:
    """Sentiment MSE and polarity failure rate on the last ``1 - train_fraction`` of messages.

    ``model`` is either fixed parameters or an :class:`EstimateConfig` used to
    fit on the training prefix (intensities restricted to self-excitation).
    Predictions condition on the full log before ``t - T``, which for long
    horizons reaches into the training period.
    """
    if not len(log):
        raise ValueError("cannot evaluate an empty log")
    horizons = [float(h) for h in horizons]
    if any(h < 0 for h in horizons):
        raise ValueError("horizons must be non-negative")
    train, k, _ = chronological_split(log, train_fraction)
    if isinstance(model, EstimateConfig):
        # analytic forecasts need Poisson or self-exciting intensities
        model = replace(model, self_only=True) if model.hawkes else model
        params = estimate_all(train, network, model)
    else:
        params = model
    tt, tu, tm = log.t[k:], log.u[k:], log.m[k:]
    if not len(tt):
        raise ValueError("test set is empty")
    report = EvalReport(len(tt))
    for h in horizons:
        pred = predict_sentiments(log, params, tt, tu, h)
        mse = float(np.mean((tm - pred) ** 2))
        # np.sign(0) = 0 never matches a nonzero label, so ties count as failures
        fail = float(np.mean(np.sign(pred) != np.sign(tm)))
        report.rows.append(HorizonScore(h, mse, fail))
    return report


# ---------------------------------------------------------------- statistics

@dataclass
class DatasetStats:
    n_users: int
    n_edges: int
    n_events: int
    mean_sentiment: float
    std_sentiment: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def stats(log: EventLog, network: Network | None = None) -> DatasetStats:
    n_users = network.n_users if network is not None else \
        (int(log.u.max()) + 1 if len(log) else 0)
    n_edges = network.n_edges if network is not None else 0
    mean = float(log.m.mean()) if len(log) else 0.0
    std = float(log.m.std()) if len(log) else 0.0
    return DatasetStats(n_users, n_edges, len(log), mean, std)


def running_average(t, m, window: float = RUNNING_WINDOW) -> np.ndarray:
    """Mean of the sentiments in the trailing window ``(t_k - window, t_k]``."""
    t = np.asarray(t, dtype=float)
    m = np.asarray(m, dtype=float)
    if window <= 0:
        raise ValueError("window must be positive")
    c = np.concatenate([[0.0], np.cumsum(m)])
    lo = np.searchsorted(t, t - window, side="right")
    hi = np.arange(1, len(t) + 1)
    return (c[hi] - c[lo]) / (hi - lo)


def emit_plot_data(series: dict, path) -> None:
    """Write ``{series_id: (t, values)}`` as tidy CSV sorted by ``(series_id, t)``."""
    rows = []
    for sid, (t, v) in series.items():
        t = np.asarray(t, dtype=float)
        v = np.asarray(v, dtype=float)
        if t.shape != v.shape:
            raise ValueError(f"series {sid!r}: t and value lengths differ")
        rows.extend((str(sid), float(a), float(b)) for a, b in zip(t, v))
    rows.sort(key=lambda r: (r[0], r[1]))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "series_id", "value"])
        for sid, t, v in rows:
            w.writerow([format(t, ".17g"), sid, format(v, ".17g")])
