import math

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from slant import io
from slant.core import (Event, EventLog, MarkovState, apply_jump, decay_intensity,
                        decay_opinion, intensities_from_history, opinions_from_history)
from slant.estimate import build_features, hawkes_negloglik_and_grad
from slant.forecast import (ForecastState, covariance_dynamics, expm_action, forecast_hawkes,
                            forecast_poisson, mc_sample_size)
from slant.simulate import SimConfig, simulate

from conftest import random_instance

finite = st.floats(-10, 10, allow_nan=False)
rate = st.floats(0.01, 10)
duration = st.floats(0, 5)
seeds = st.integers(0, 2**32 - 1)
settings.register_profile("suite", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("suite")


@given(finite, finite, rate, duration, duration)
def test_decay_composition(x, a, w, d1, d2):
    once = decay_opinion(x, a, w, d1 + d2)
    twice = decay_opinion(decay_opinion(x, a, w, d1), a, w, d2)
    assert abs(once - twice) <= 1e-12 * max(1.0, abs(x), abs(a))


@given(st.floats(0, 10), st.floats(0, 10), rate, duration)
def test_decayed_intensity_bounds(lam, mu, nu, dt):
    v = decay_intensity(lam, mu, nu, dt)
    assert min(lam, mu) - 1e-12 <= v <= max(lam, mu) + 1e-12


@given(seeds)
def test_batch_incremental_equivalence_and_locality(seed):
    rng = np.random.default_rng(seed)
    net, p = random_instance(rng, n=int(rng.integers(2, 10)), density=0.3)
    log = simulate(net, p, SimConfig(10.0, seed % 1000, max_events=None))
    state = MarkovState.initial(p)
    for ev in log:
        if ev.t > 0:
            X = state.opinions(ev.t, p)
            L = state.intensities(ev.t, p)
            xb = opinions_from_history(log, p, ev.t)
            lb = intensities_from_history(log, p, ev.t)
            assert np.all(np.abs(X - xb) <= 1e-9 * np.maximum(1, np.abs(xb)))
            assert np.all(np.abs(L - lb) <= 1e-9 * np.maximum(1, np.abs(lb)))
            assert np.all(L >= 0)
        before_x, before_l = state.x_last.copy(), state.lambda_last.copy()
        apply_jump(state, ev, p, net)
        changed = set(np.flatnonzero((state.x_last != before_x) |
                                     (state.lambda_last != before_l)).tolist())
        assert changed <= {ev.u} | set(net.followers(ev.u).tolist())


@given(seeds)
def test_negloglik_midpoint_convex(seed):
    rng = np.random.default_rng(seed)
    net, p = random_instance(rng, n=6, density=0.4)
    log = simulate(net, p, SimConfig(20.0, seed % 1000))
    F = build_features(log, net, p.omega, p.nu)
    for u in range(6):
        k = len(F.intensity_cols[u])
        a, b = rng.uniform(0.01, 2, 1 + k), rng.uniform(0.01, 2, 1 + k)
        f = lambda z: hawkes_negloglik_and_grad(z[0], z[1:], F, u)[0]
        assert f(0.5 * (a + b)) <= 0.5 * (f(a) + f(b)) + 1e-8


@given(seeds, st.floats(0, 2))
def test_expm_action_dense_reference(seed, t):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 30))
    M = rng.normal(size=(n, n)) * (rng.random((n, n)) < 0.3)
    v = rng.normal(size=n)
    want = sla.expm(M * t) @ v
    got = expm_action(sp.csr_matrix(M), v, t)
    assert np.linalg.norm(got - want) <= 1e-8 * max(1.0, np.linalg.norm(want))


@given(seeds, st.floats(0.05, 3))
def test_reduction_chain(seed, delta):
    rng = np.random.default_rng(seed)
    net, p = random_instance(rng, n=int(rng.integers(2, 12)), hawkes=False, density=0.2)
    p = p.replace(A=p.A * 0.3)
    state = ForecastState(rng.normal(size=p.n_users), p.mu.copy(), 0.0)
    a = forecast_poisson(state, p, net, delta).mean
    b = forecast_hawkes(state, p, net, delta).mean
    assert np.max(np.abs(a - b)) <= 1e-6


@given(seeds)
def test_covariance_psd_along_trajectory(seed):
    rng = np.random.default_rng(seed)
    net, p = random_instance(rng, n=int(rng.integers(2, 7)), hawkes=False, density=0.4)
    state = ForecastState(rng.normal(size=p.n_users), p.mu, 0.0)
    for t in (0.2, 1.0, 2.0):
        G, _ = covariance_dynamics(state, p, net, t)
        assert np.array_equal(G, G.T)
        assert np.linalg.eigvalsh(G).min() >= -1e-8


@given(st.floats(1e-3, 1), st.floats(1e-3, 0.999), st.floats(0, 10), st.floats(1e-3, 10))
def test_sample_size_monotone_in_eps(eps, delta, s2, xm):
    assert mc_sample_size(2 * eps, delta, s2, xm) <= mc_sample_size(eps, delta, s2, xm)


@given(st.lists(st.tuples(st.floats(0, 1e6, allow_subnormal=True), st.integers(0, 50),
                          st.floats(-1e300, 1e300, allow_subnormal=True)),
                max_size=30))
def test_event_file_roundtrip(tmp_path_factory, rows):
    rows = sorted({r[0]: r for r in rows}.values())
    t = [r[0] for r in rows]
    log = EventLog(t, [r[1] for r in rows], [r[2] for r in rows],
                   (max(t) + 1.0) if t else 1.0)
    path = tmp_path_factory.mktemp("ev") / "ev.jsonl"
    io.write_events(log, path)
    assert io.read_events(path) == log
