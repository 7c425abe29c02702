"""File formats: edge lists, parameter JSON, event JSON Lines, forecast JSON.

Edge list: one ``u v`` pair per line meaning *u follows v*; ``#`` starts a comment.
Params: ``{omega, nu, alpha, mu, sigma, A: [[u, v, val], ...], B: [...]}`` with
sparse triplets row-first (row = receiving user).
Events: one ``{"t", "u", "m"}`` object per line in ascending time; an optional
first line ``{"horizon": T}`` records the observation window.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .core import EventLog, ModelParams, Network


class FormatError(ValueError):
    """A file exists but does not follow the expected format."""

    def __init__(self, path, line: int | None, message: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


def _num(x: float) -> str:
    # 17 significant digits round-trip every double exactly
    return format(float(x), ".17g")


_DURATION = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*([smhd]?)\s*$")
_UNIT = {"": 1.0, "s": 1.0, "m": 60.0, "h": 3600.0, "d": 86400.0}


def parse_duration(text: str | float) -> float:
    """``"6h"`` -> 21600.0; bare numbers are seconds."""
    if isinstance(text, (int, float)):
        return float(text)
    match = _DURATION.match(text)
    if not match:
        raise ValueError(f"invalid duration {text!r} (expected e.g. 30s, 10m, 6h)")
    return float(match.group(1)) * _UNIT[match.group(2)]


# ---------------------------------------------------------------- network

def read_network(path, n_users: int | None = None) -> Network:
    path = Path(path)
    edges = []
    header_n = None
    with path.open() as fh:
        for k, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                m = re.match(r"#\s*n_users\s*[:=]\s*(\d+)", s)
                if m:
                    header_n = int(m.group(1))
                continue
            parts = s.split()
            if len(parts) != 2:
                raise FormatError(path, k, f"expected 'u v', got {s!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise FormatError(path, k, f"non-integer user id in {s!r}") from None
            if u < 0 or v < 0:
                raise FormatError(path, k, "negative user id")
            if u == v:
                raise FormatError(path, k, f"self-follow {u} {v}")
            edges.append((u, v))
    n = n_users or header_n or (max(max(e) for e in edges) + 1 if edges else 0)
    if n <= 0:
        raise FormatError(path, None, "cannot infer n_users from an empty edge list")
    try:
        return Network(n, np.array(edges, dtype=np.int64).reshape(-1, 2))
    except ValueError as exc:
        raise FormatError(path, None, str(exc)) from None


def write_network(network: Network, path) -> None:
    with Path(path).open("w") as fh:
        fh.write(f"# n_users: {network.n_users}\n# u v  (u follows v)\n")
        for u, v in network.edges:
            fh.write(f"{u} {v}\n")


# ---------------------------------------------------------------- params

def _triplets(M: sp.csr_matrix) -> list:
    C = M.tocoo()
    order = np.lexsort((C.col, C.row))
    return [[int(C.row[k]), int(C.col[k]), float(C.data[k])] for k in order]


def params_to_dict(params: ModelParams) -> dict:
    return {"omega": params.omega, "nu": params.nu,
            "alpha": params.alpha.tolist(), "mu": params.mu.tolist(),
            "sigma": params.sigma.tolist(),
            "A": _triplets(params.A), "B": _triplets(params.B)}


def params_from_dict(d: dict, source="<params>") -> ModelParams:
    missing = [k for k in ("omega", "nu", "alpha", "mu", "sigma", "A", "B") if k not in d]
    if missing:
        raise FormatError(source, None, f"missing keys {missing}")
    n = len(d["alpha"])

    def mat(key):
        trip = d[key]
        if not trip:
            return sp.csr_matrix((n, n))
        arr = np.asarray(trip, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise FormatError(source, None, f"{key} must be a list of [u, v, value] triplets")
        r, c = arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64)
        if np.any(r != arr[:, 0]) or np.any(c != arr[:, 1]) or r.min() < 0 or c.min() < 0 \
                or r.max() >= n or c.max() >= n:
            raise FormatError(source, None, f"{key} has an invalid index")
        return sp.csr_matrix((arr[:, 2], (r, c)), shape=(n, n))

    try:
        return ModelParams(np.asarray(d["alpha"], float), mat("A"), np.asarray(d["mu"], float),
                           mat("B"), float(d["omega"]), float(d["nu"]),
                           np.asarray(d["sigma"], float))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(source, None, str(exc)) from None


def read_params(path) -> ModelParams:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(path, exc.lineno, f"invalid JSON: {exc.msg}") from None
    if not isinstance(d, dict):
        raise FormatError(path, None, "params must be a JSON object")
    return params_from_dict(d, path)


def write_params(params: ModelParams, path) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params), indent=1) + "\n")


# ---------------------------------------------------------------- events

def write_events(log: EventLog, path) -> None:
    with Path(path).open("w") as fh:
        fh.write(f'{{"horizon": {_num(log.horizon)}}}\n')
        for t, u, m in zip(log.t, log.u, log.m):
            fh.write(f'{{"t": {_num(t)}, "u": {int(u)}, "m": {_num(m)}}}\n')


def read_events(path, horizon: float | None = None, ingest: bool = False) -> EventLog:
    """Read an event log.  ``ingest=True`` sorts and separates tied timestamps."""
    path = Path(path)
    ts, us, ms = [], [], []
    file_horizon = None
    with path.open() as fh:
        for k, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            try:
                obj = json.loads(s)
            except json.JSONDecodeError as exc:
                raise FormatError(path, k, f"invalid JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise FormatError(path, k, "expected a JSON object")
            if "t" not in obj and "horizon" in obj:
                file_horizon = float(obj["horizon"])
                continue
            try:
                t, u, m = float(obj["t"]), obj["u"], float(obj["m"])
            except (KeyError, TypeError, ValueError):
                raise FormatError(path, k, "event needs numeric 't', integer 'u', numeric 'm'") \
                    from None
            if not isinstance(u, int) or isinstance(u, bool) or u < 0:
                raise FormatError(path, k, f"invalid user id {u!r}")
            ts.append(t)
            us.append(u)
            ms.append(m)
    T = horizon if horizon is not None else file_horizon
    if ingest:
        return EventLog.ingest(ts, us, ms, T)
    if T is None:
        T = np.nextafter(max(ts), np.inf) if ts else 1.0
    try:
        return EventLog(ts, us, ms, T)
    except ValueError as exc:
        raise FormatError(path, None, f"{exc} (use ingestion to sort/separate ties)") from None


# ---------------------------------------------------------------- results

def write_json(obj, path) -> None:
    text = json.dumps(obj, indent=1) + "\n"
    if path in (None, "-"):
        print(text, end="")
    else:
        Path(path).write_text(text)
