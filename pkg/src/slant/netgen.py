"""Synthetic networks (stochastic Kronecker, Erdos-Renyi) and random model parameters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import ModelParams, Network

SEED_MATRICES = {
    "assortative": ((0.96, 0.3), (0.3, 0.96)),
    "dissortative": ((0.3, 0.96), (0.96, 0.3)),
    "core-periphery": ((0.9, 0.5), (0.5, 0.3)),
}


@dataclass(frozen=True)
class KroneckerSpec:
    seed_matrix: tuple = SEED_MATRICES["assortative"]
    scale: int = 6
    rng_seed: int = 0

    def __post_init__(self):
        S = np.asarray(self.seed_matrix, dtype=float)
        if S.shape != (2, 2) or np.any(S < 0) or np.any(S > 1):
            raise ValueError("seed matrix must be 2x2 with entries in [0, 1]")
        if self.scale < 1:
            raise ValueError("scale must be >= 1")


def kronecker_probabilities(seed_matrix, scale: int, rows=None) -> np.ndarray:
    """Edge probabilities ``P[i, j] = prod_l S[bit_l(i), bit_l(j)]`` for the given rows."""
    S = np.asarray(seed_matrix, dtype=float)
    n = 2 ** scale
    rows = np.arange(n) if rows is None else np.asarray(rows)
    cols = np.arange(n)
    P = np.ones((len(rows), n))
    for level in range(scale):
        bi = (rows >> level) & 1
        bj = (cols >> level) & 1
        P *= S[bi[:, None], bj[None, :]]
    return P


def kronecker_graph(spec: KroneckerSpec) -> Network:
    """Exact per-pair Bernoulli sampling of a stochastic Kronecker graph, self-loops dropped."""
    rng = np.random.default_rng(spec.rng_seed)
    n = 2 ** spec.scale
    block = max(1, 2 ** 22 // n)
    edges = []
    for r0 in range(0, n, block):
        rows = np.arange(r0, min(n, r0 + block))
        P = kronecker_probabilities(spec.seed_matrix, spec.scale, rows)
        hit = rng.random(P.shape) < P
        i, j = np.nonzero(hit)
        edges.append(np.column_stack([rows[i], j]))
    e = np.concatenate(edges) if edges else np.zeros((0, 2), dtype=np.int64)
    e = e[e[:, 0] != e[:, 1]]
    return Network(n, e)


def expected_kronecker_edges(seed_matrix, scale: int) -> tuple[float, float]:
    """Mean and variance of the (self-loop-free) Kronecker edge count."""
    P = kronecker_probabilities(seed_matrix, scale)
    np.fill_diagonal(P, 0.0)
    return float(P.sum()), float((P * (1 - P)).sum())


def erdos_renyi(n_users: int, avg_degree: float, rng_seed: int = 0) -> Network:
    """Directed G(n, m) graph with ``m = round(n * avg_degree)`` distinct non-loop edges."""
    rng = np.random.default_rng(rng_seed)
    m = int(round(n_users * avg_degree))
    if m > n_users * (n_users - 1):
        raise ValueError("too many edges requested")
    codes = np.empty(0, dtype=np.int64)
    while len(codes) < m:
        draw = rng.integers(0, n_users * n_users, size=2 * (m - len(codes)) + 16)
        draw = draw[draw // n_users != draw % n_users]
        codes = np.unique(np.concatenate([codes, draw]))
    codes = rng.permutation(codes)[:m]
    return Network(n_users, np.column_stack([codes // n_users, codes % n_users]))


@dataclass(frozen=True)
class ParamGenSpec:
    mu_dist: tuple = (0.0, 1.0)       # uniform(lo, hi)
    b_dist: tuple = (0.0, 1.0)        # uniform(lo, hi)
    alpha_dist: tuple = (0.0, 1.0)    # normal(mean, std)
    a_dist: tuple = (0.0, 1.0)        # normal(mean, std)
    omega: float = 100.0
    nu: float = 1.0
    sigma: float = 0.1
    hawkes_fraction: float = 1.0
    # rescale B so that the spectral radius of B / nu is at most this value
    max_branching: float | None = None

    def __post_init__(self):
        for lo, hi in (self.mu_dist, self.b_dist):
            if lo > hi:
                raise ValueError("uniform range needs lo <= hi")
        if self.mu_dist[0] < 0 or self.b_dist[0] < 0:
            raise ValueError("mu and B ranges must be non-negative")
        if self.alpha_dist[1] < 0 or self.a_dist[1] < 0:
            raise ValueError("normal std must be non-negative")
        if not 0 <= self.hawkes_fraction <= 1:
            raise ValueError("hawkes_fraction must lie in [0, 1]")
        if self.omega <= 0 or self.nu <= 0 or self.sigma <= 0:
            raise ValueError("omega, nu, sigma must be positive")
        if self.max_branching is not None and not 0 < self.max_branching < 1:
            raise ValueError("max_branching must lie in (0, 1)")


def spectral_radius(M) -> float:
    n = M.shape[0]
    if n == 0:
        return 0.0
    if sp.issparse(M) and n > 500:
        if M.nnz == 0:
            return 0.0
        vals = spla.eigs(M.astype(float), k=1, which="LM", return_eigenvectors=False,
                         tol=1e-8, maxiter=10 * n)
        return float(np.abs(vals[0]))
    M = M.toarray() if sp.issparse(M) else np.asarray(M)
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def gen_params(network: Network, spec: ParamGenSpec, rng) -> ModelParams:
    """Draw ``alpha, A`` (normal, on edges) and ``mu, B`` (uniform, on edges + diagonal).

    Only a random ``hawkes_fraction`` of the users receive ``B`` entries (all
    their in-edges plus self-excitation); the rest keep Poisson intensities.
    """
    rng = np.random.default_rng(rng)
    n = network.n_users
    rows, cols = network.edges[:, 0], network.edges[:, 1]
    alpha = rng.normal(spec.alpha_dist[0], spec.alpha_dist[1], n)
    a_vals = rng.normal(spec.a_dist[0], spec.a_dist[1], len(rows))
    mu = rng.uniform(spec.mu_dist[0], spec.mu_dist[1], n)
    n_hawkes = int(round(spec.hawkes_fraction * n))
    hawkes = np.zeros(n, dtype=bool)
    hawkes[rng.choice(n, size=n_hawkes, replace=False)] = True
    b_rows = np.concatenate([rows, np.arange(n)])
    b_cols = np.concatenate([cols, np.arange(n)])
    b_vals = rng.uniform(spec.b_dist[0], spec.b_dist[1], len(b_rows))
    keep = hawkes[b_rows]
    A = sp.csr_matrix((a_vals, (rows, cols)), shape=(n, n))
    B = sp.csr_matrix((b_vals[keep], (b_rows[keep], b_cols[keep])), shape=(n, n))
    if spec.max_branching is not None and B.nnz:
        rho = spectral_radius(B) / spec.nu
        if rho > spec.max_branching:
            B = B * (spec.max_branching / rho)
    return ModelParams(alpha, A, mu, B, spec.omega, spec.nu, np.full(n, spec.sigma))
