"""Average-opinion trajectories under Poisson vs partly Hawkes intensities.

Simulates a 50-node network twice, once with constant rates mu ~ U(0, 1) and
once with self/mutual excitation b ~ U(0, 1) switched on for 5% of the users.
Writes a tidy CSV of the average opinion over time (Monte-Carlo mean plus the
analytic Poisson forecast) and prints the final spread of opinions, which
separates consensus (small spread) from polarization (opposing clusters).

    python scripts/opinion_dynamics.py --out results/opinion_dynamics.csv
"""

import argparse
import json

import numpy as np

from slant import (EventLog, ParamGenSpec, SimConfig, erdos_renyi, forecast_poisson, gen_params,
                   opinions_from_history, reconstruct_state, simulate)
from slant.evaluate import emit_plot_data


def trajectories(net, params, grid, runs, seed):
    """Opinions on ``grid`` for ``runs`` independent simulations; shape (runs, n, len(grid))."""
    cfg = lambda r: SimConfig(float(grid[-1]) + 1e-9, seed * 100_000 + r)
    return np.stack([opinions_from_history(simulate(net, params, cfg(r)), params, grid)
                     for r in range(runs)])


def summary(X):
    final = X[:, :, -1].mean(axis=0)
    return {"mean": float(final.mean()), "std": float(final.std()),
            "share_positive": float(np.mean(final > 0))}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-users", type=int, default=50)
    ap.add_argument("--degree", type=float, default=3.0)
    ap.add_argument("--horizon", type=float, default=20.0)
    ap.add_argument("--runs", type=int, default=200)
    ap.add_argument("--a-mean", type=float, default=0.0,
                    help="mean influence weight; positive values pull neighbours together")
    ap.add_argument("--a-std", type=float, default=0.3)
    ap.add_argument("--alpha-std", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out", default="opinion_dynamics.csv")
    args = ap.parse_args(argv)

    net = erdos_renyi(args.n_users, args.degree, args.seed)
    base = dict(omega=1.0, nu=1.0, sigma=0.1, alpha_dist=(0.0, args.alpha_std),
                a_dist=(args.a_mean, args.a_std), mu_dist=(0.0, 1.0))
    poisson = gen_params(net, ParamGenSpec(hawkes_fraction=0.0, **base), args.seed)
    # same alpha, A and mu; only the excitation differs
    hawkes = gen_params(net, ParamGenSpec(hawkes_fraction=0.05, b_dist=(0.0, 1.0),
                                          max_branching=0.9, **base), args.seed)
    hawkes = poisson.replace(B=hawkes.B)

    grid = np.linspace(0.0, args.horizon, 101)
    X_p = trajectories(net, poisson, grid, args.runs, args.seed)
    X_h = trajectories(net, hawkes, grid, args.runs, args.seed + 1)
    state = reconstruct_state(EventLog.empty(1.0), poisson, net, 0.0)
    analytic = np.array([poisson.alpha.mean()] +
                        [forecast_poisson(state, poisson, net, t).mean.mean() for t in grid[1:]])

    emit_plot_data({"poisson/mc": (grid, X_p.mean(axis=(0, 1))),
                    "poisson/analytic": (grid, analytic),
                    "hawkes/mc": (grid, X_h.mean(axis=(0, 1)))}, args.out)
    gap = float(np.max(np.abs(X_p.mean(axis=(0, 1)) - analytic)))
    print(json.dumps({"poisson": summary(X_p), "hawkes": summary(X_h),
                      "max_gap_poisson_mc_vs_analytic": gap, "csv": args.out}, indent=2))


if __name__ == "__main__":
    main()
