"""``slant`` command line.

Every failure prints a single JSON line ``{"error": <kind>, "message": ...}``
to stderr and exits nonzero; ``kind`` is one of ``usage``, ``unknown-flag``,
``missing-file``, ``format``, ``model``.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import io
from .core import ModelError
from .estimate import EstimateConfig, EstimationError, SPGConfig, estimate_all
from .evaluate import RUNNING_WINDOW, emit_plot_data, evaluate, running_average, stats
from .forecast import (ForecastError, covariance_dynamics, covariance_stability, forecast,
                       reconstruct_state, steady_state)
from .netgen import SEED_MATRICES, KroneckerSpec, ParamGenSpec, erdos_renyi, gen_params, \
    kronecker_graph
from .simulate import SimConfig, SimulationTruncated, simulate

EXIT = {"usage": 2, "unknown-flag": 2, "missing-file": 3, "format": 4, "model": 5}


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        kind = "unknown-flag" if "unrecognized arguments" in message else "usage"
        raise CliError(kind, f"{self.prog}: {message}")


def _pair(text):
    lo, hi = (float(x) for x in text.split(","))
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="slant", description="Opinion dynamics on social networks.")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("netgen", help="generate a synthetic follow graph")
    g.add_argument("--kind", choices=["kronecker", "erdos-renyi"], default="kronecker")
    g.add_argument("--seed-matrix", default="assortative",
                   help=f"one of {sorted(SEED_MATRICES)} or four comma-separated probabilities")
    g.add_argument("--scale", type=int, default=6, help="Kronecker power (n = 2^scale)")
    g.add_argument("--n-users", type=int, default=100)
    g.add_argument("--avg-degree", type=float, default=5.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    g = sub.add_parser("paramgen", help="draw random model parameters on a network")
    g.add_argument("--network", required=True)
    g.add_argument("--omega", type=float, default=100.0)
    g.add_argument("--nu", type=float, default=1.0)
    g.add_argument("--sigma", type=float, default=0.1)
    g.add_argument("--mu-range", type=_pair, default=(0.0, 1.0), metavar="LO,HI")
    g.add_argument("--b-range", type=_pair, default=(0.0, 1.0), metavar="LO,HI")
    g.add_argument("--alpha-dist", type=_pair, default=(0.0, 1.0), metavar="MEAN,STD")
    g.add_argument("--a-dist", type=_pair, default=(0.0, 1.0), metavar="MEAN,STD")
    g.add_argument("--hawkes-fraction", type=float, default=1.0)
    g.add_argument("--max-branching", type=float, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    g = sub.add_parser("simulate", help="sample an event log")
    g.add_argument("--network", required=True)
    g.add_argument("--params", required=True)
    g.add_argument("--horizon", required=True, help="e.g. 100, 30m, 6h")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--sentiment", choices=["gaussian", "logistic"], default="gaussian")
    g.add_argument("--max-events", type=int, default=None)
    g.add_argument("--out", required=True)

    g = sub.add_parser("estimate", help="fit parameters to an event log")
    g.add_argument("--network", required=True)
    g.add_argument("--events", required=True)
    g.add_argument("--omega", type=float, required=True)
    g.add_argument("--nu", type=float, required=True)
    g.add_argument("--ridge", type=float, default=1e-3)
    g.add_argument("--poisson", action="store_true", help="fit constant intensities only")
    g.add_argument("--tol", type=float, default=1e-6)
    g.add_argument("--max-iters", type=int, default=500)
    g.add_argument("--threads", type=int, default=None, help="default: $SLANT_THREADS or 1")
    g.add_argument("--out", required=True)

    g = sub.add_parser("forecast", help="forecast mean opinions")
    _model_args(g)
    g.add_argument("--t0", required=True, help="conditioning time")
    g.add_argument("--at", required=True, help="target time")
    g.add_argument("--mode", choices=["analytic", "mc"], default="analytic")
    g.add_argument("--runs", default="auto", help="Monte-Carlo runs or 'auto'")
    g.add_argument("--eps", type=float, default=0.05)
    g.add_argument("--delta", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="-")

    g = sub.add_parser("steady", help="stability test and steady-state opinion")
    g.add_argument("--params", required=True)
    g.add_argument("--regime", choices=["poisson", "hawkes"], default="poisson")
    g.add_argument("--out", default="-")

    g = sub.add_parser("variance", help="opinion covariance under Poisson intensities")
    _model_args(g)
    g.add_argument("--t0", required=True)
    g.add_argument("--at", required=True)
    g.add_argument("--out", default="-")

    g = sub.add_parser("evaluate", help="chronological 90/10 forecasting evaluation")
    g.add_argument("--network", required=True)
    g.add_argument("--events", required=True)
    g.add_argument("--params", help="fixed parameters; otherwise fit with --omega/--nu")
    g.add_argument("--omega", type=float)
    g.add_argument("--nu", type=float)
    g.add_argument("--ridge", type=float, default=1e-3)
    g.add_argument("--poisson", action="store_true", help="fit constant intensities only")
    g.add_argument("--horizons", default="0,1h,4h,8h", help="comma-separated durations")
    g.add_argument("--seed", type=int, default=0, help="accepted for interface uniformity")
    g.add_argument("--out", default="-")

    g = sub.add_parser("stats", help="dataset summary of an event log")
    g.add_argument("events")
    g.add_argument("--network")
    g.add_argument("--plot-data", help="write the running-average sentiment as tidy CSV")
    g.add_argument("--window", default=str(RUNNING_WINDOW), help="running-average window")
    g.add_argument("--out", default="-")
    return p


def _model_args(g):
    g.add_argument("--network", required=True)
    g.add_argument("--params", required=True)
    g.add_argument("--events", help="history; empty when omitted")


def _duration(text: str) -> float:
    try:
        return io.parse_duration(text)
    except ValueError as exc:
        raise CliError("usage", str(exc)) from None


def _load_model(args):
    network = io.read_network(args.network)
    params = io.read_params(args.params)
    if params.n_users != network.n_users:
        raise CliError("format", f"params have {params.n_users} users, network "
                                 f"{network.n_users}")
    params.check_support(network)
    return network, params


def _history(args, t0, n_users):
    from .core import EventLog
    if not args.events:
        return EventLog.empty(max(t0, 1.0))
    log = io.read_events(args.events)
    if len(log) and log.u.max() >= n_users:
        raise CliError("format", "event log references users outside the network")
    return log.before(t0) if t0 > 0 else EventLog.empty(1.0)


def run(args) -> None:
    cmd = args.cmd
    if cmd == "netgen":
        if args.kind == "kronecker":
            if args.seed_matrix in SEED_MATRICES:
                S = SEED_MATRICES[args.seed_matrix]
            else:
                try:
                    v = [float(x) for x in args.seed_matrix.split(",")]
                except ValueError:
                    raise CliError("usage", f"bad --seed-matrix {args.seed_matrix!r}") from None
                if len(v) != 4:
                    raise CliError("usage", "--seed-matrix needs four probabilities")
                S = ((v[0], v[1]), (v[2], v[3]))
            net = kronecker_graph(KroneckerSpec(S, args.scale, args.seed))
        else:
            net = erdos_renyi(args.n_users, args.avg_degree, args.seed)
        io.write_network(net, args.out)
        print(json.dumps({"n_users": net.n_users, "n_edges": net.n_edges}))
    elif cmd == "paramgen":
        net = io.read_network(args.network)
        spec = ParamGenSpec(args.mu_range, args.b_range, args.alpha_dist, args.a_dist,
                            args.omega, args.nu, args.sigma, args.hawkes_fraction,
                            args.max_branching)
        io.write_params(gen_params(net, spec, args.seed), args.out)
    elif cmd == "simulate":
        net, params = _load_model(args)
        cfg = SimConfig(_duration(args.horizon), args.seed, args.sentiment, args.max_events)
        try:
            log = simulate(net, params, cfg)
        except SimulationTruncated as exc:
            io.write_events(exc.partial, args.out)
            raise CliError("model", f"{exc}; partial log written to {args.out}") from None
        io.write_events(log, args.out)
        print(json.dumps({"n_events": len(log), "horizon": log.horizon}))
    elif cmd == "estimate":
        net = io.read_network(args.network)
        log = io.read_events(args.events)
        if len(log) and log.u.max() >= net.n_users:
            raise CliError("format", "event log references users outside the network")
        cfg = EstimateConfig(args.omega, args.nu, args.ridge, not args.poisson,
                             SPGConfig(tol=args.tol, max_iters=args.max_iters), args.threads)
        io.write_params(estimate_all(log, net, cfg), args.out)
    elif cmd == "forecast":
        net, params = _load_model(args)
        t0, t = _duration(args.t0), _duration(args.at)
        log = _history(args, t0, net.n_users)
        kw = {}
        if args.mode == "mc":
            runs = args.runs if args.runs == "auto" else int(args.runs)
            kw = dict(runs=runs, seed=args.seed, eps=args.eps, delta=args.delta)
        res = forecast(log, params, net, t0, t, args.mode, **kw)
        io.write_json(res.to_dict(), args.out)
    elif cmd == "steady":
        params = io.read_params(args.params)
        io.write_json(steady_state(params, None, args.regime).to_dict(), args.out)
    elif cmd == "variance":
        net, params = _load_model(args)
        if not params.is_poisson:
            raise CliError("model", "analytic variance needs Poisson intensities (B = 0); "
                                    "use forecast --mode mc for a sample variance")
        t0, t = _duration(args.t0), _duration(args.at)
        state = reconstruct_state(_history(args, t0, net.n_users), params, net, t0)
        G, mean = covariance_dynamics(state, params, net, t)
        io.write_json({"t": t, "mean": mean.tolist(), "variance": np.diag(G).tolist(),
                       "covariance": G.tolist(),
                       "stability": covariance_stability(params).to_dict()}, args.out)
    elif cmd == "evaluate":
        net = io.read_network(args.network)
        log = io.read_events(args.events)
        if args.params:
            model = io.read_params(args.params)
        elif args.omega is not None and args.nu is not None:
            model = EstimateConfig(args.omega, args.nu, args.ridge, not args.poisson)
        else:
            raise CliError("usage", "evaluate needs --params or both --omega and --nu")
        horizons = [_duration(h) for h in args.horizons.split(",") if h.strip()]
        io.write_json(evaluate(log, net, model, horizons).to_dict(), args.out)
    elif cmd == "stats":
        log = io.read_events(args.events)
        net = io.read_network(args.network) if args.network else None
        if args.plot_data:
            ra = running_average(log.t, log.m, _duration(args.window))
            emit_plot_data({"running_average": (log.t, ra)} if len(log) else {},
                           args.plot_data)
        io.write_json(stats(log, net).to_dict(), args.out)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        run(args)
        return 0
    except CliError as exc:
        kind, msg = exc.kind, str(exc)
    except FileNotFoundError as exc:
        kind, msg = "missing-file", f"no such file: {exc.filename}"
    except io.FormatError as exc:
        kind, msg = "format", str(exc)
    except (ModelError, ForecastError, EstimationError, ValueError) as exc:
        kind, msg = "model", str(exc)
    print(json.dumps({"error": kind, "message": msg}), file=sys.stderr)
    return EXIT[kind]


if __name__ == "__main__":
    sys.exit(main())
