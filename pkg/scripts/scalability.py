"""Wall-clock scaling of simulation, estimation and analytic forecasting.

Sweeps the number of users at a fixed average degree and events-per-user, and
times each stage.  Results go to a CSV with one row per (stage, size).

    python scripts/scalability.py --sizes 1000 3000 10000 --out scalability.csv
"""

import argparse
import csv
import time

import numpy as np

from slant import (EstimateConfig, EventLog, ParamGenSpec, SimConfig, erdos_renyi, estimate_all,
                   forecast_poisson, gen_params, reconstruct_state, simulate, stationary_rates)


def timed(fn, *args):
    start = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - start


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1000, 3000, 10000])
    ap.add_argument("--degree", type=float, default=10.0)
    ap.add_argument("--events-per-user", type=float, default=10.0)
    ap.add_argument("--forecast-at", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="scalability.csv")
    args = ap.parse_args(argv)

    rows = []
    for n in args.sizes:
        net = erdos_renyi(n, args.degree, args.seed)
        p = gen_params(net, ParamGenSpec(omega=1.0, nu=1.0, a_dist=(0.0, 0.1),
                                         max_branching=0.5), args.seed)
        horizon = args.events_per_user * n / stationary_rates(p).sum()
        log, t_sim = timed(simulate, net, p, SimConfig(horizon, args.seed))
        _, t_est = timed(estimate_all, log, net, EstimateConfig(p.omega, p.nu))
        q = p.replace(B=p.B * 0)     # analytic forecasting in the Poisson regime
        state = reconstruct_state(EventLog.empty(1.0), q, net, 0.0)
        _, t_fc = timed(forecast_poisson, state, q, net, args.forecast_at)
        for stage, secs in (("simulate", t_sim), ("estimate", t_est), ("forecast", t_fc)):
            rows.append((stage, n, len(log), secs))
            print(f"{stage:9s} n={n:7d} events={len(log):8d} {secs:8.2f} s")

    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "n_users", "n_events", "seconds"])
        w.writerows(rows)
    per_event = np.array([r[3] / r[2] for r in rows if r[0] == "simulate"])
    print("simulation microseconds per event:", np.round(per_event * 1e6, 2))


if __name__ == "__main__":
    main()
