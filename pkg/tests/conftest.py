import numpy as np
import pytest
import scipy.sparse as sp

from slant.core import EventLog, ModelParams, Network

_ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record the outcome of one acceptance criterion for the end-of-run summary."""

    def record(key: str, passed: bool, detail: str = "") -> bool:
        _ACCEPTANCE[key] = (bool(passed), detail)
        print(f"[acceptance] {key}: {'PASS' if passed else 'FAIL'} {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: (int(k.split(".")[0].split()[0]), k)):
        ok, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}  {detail}")


def chain_params(omega=1.0, sigma=1.0):
    """Two users, user 1 follows user 0 with weight 0.5; Poisson rates 1."""
    net = Network(2, [(1, 0)])
    A = sp.csr_matrix(np.array([[0.0, 0.0], [0.5, 0.0]]))
    p = ModelParams(np.array([0.5, 0.0]), A, np.ones(2), sp.csr_matrix((2, 2)), omega, 1.0,
                    np.full(2, sigma))
    return net, p


def random_instance(rng, n=None, hawkes=True, omega=None, nu=None, density=0.1):
    """Random network and parameters with sub-critical excitation."""
    n = n or int(rng.integers(2, 30))
    mask = rng.random((n, n)) < density
    np.fill_diagonal(mask, False)
    edges = np.argwhere(mask)
    net = Network(n, edges)
    A = sp.csr_matrix((rng.normal(0, 1, len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    omega = omega or float(rng.uniform(0.5, 3))
    nu = nu or float(rng.uniform(0.5, 3))
    if hawkes:
        rows = np.concatenate([edges[:, 0], np.arange(n)])
        cols = np.concatenate([edges[:, 1], np.arange(n)])
        B = sp.csr_matrix((rng.uniform(0, 1, len(rows)), (rows, cols)), shape=(n, n))
        rho = max(abs(np.linalg.eigvals(B.toarray()))) / nu
        if rho > 0.6:
            B = B * (0.6 / rho)
    else:
        B = sp.csr_matrix((n, n))
    p = ModelParams(rng.normal(0, 1, n), A, rng.uniform(0.1, 1, n), B, omega, nu,
                    rng.uniform(0.1, 1, n))
    return net, p


def random_log(rng, n_users, n_events, horizon=None):
    t = np.sort(rng.uniform(0, n_events / 10.0, n_events))
    t = np.unique(t)
    horizon = horizon or float(t[-1]) + 1.0
    return EventLog(t, rng.integers(0, n_users, len(t)), rng.normal(0, 1, len(t)), horizon)
