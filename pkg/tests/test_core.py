import math

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from slant.core import (Event, EventLog, MarkovState, ModelError, ModelParams, Network,
                        RandomStream, SentimentModel, apply_jump, decay_intensity,
                        decay_opinion, intensity_from_history, opinion_from_history,
                        opinions_from_history, intensities_from_history, sample_sentiment)

from conftest import chain_params, random_instance


def _ode_relax(y0, target, rate, dt):
    sol = solve_ivp(lambda t, y: -rate * (y - target), (0, dt), [y0], rtol=1e-12, atol=1e-14)
    return sol.y[0, -1]


# ---------------------------------------------------------------- types

def test_network_rejects_self_edges_and_out_of_range():
    with pytest.raises(ModelError):
        Network(3, [(1, 1)])
    with pytest.raises(ModelError):
        Network(3, [(0, 3)])


def test_network_dedupes_and_indexes_both_directions():
    net = Network(4, [(0, 1), (0, 1), (2, 1), (3, 0)])
    assert net.n_edges == 3
    assert net.followees(0).tolist() == [1]
    assert sorted(net.followers(1).tolist()) == [0, 2]
    assert net.out_degree(1) == 2
    m = net.mask()
    assert m[0, 1] and m[2, 1] and not m[1, 0]


def test_eventlog_invariants():
    with pytest.raises(ModelError):
        EventLog([1.0, 1.0], [0, 1], [0.0, 0.0], 2.0)       # tie
    with pytest.raises(ModelError):
        EventLog([2.0, 1.0], [0, 1], [0.0, 0.0], 3.0)       # unsorted
    with pytest.raises(ModelError):
        EventLog([1.0], [0], [0.0], 1.0)                    # t >= horizon
    with pytest.raises(ModelError):
        EventLog([-1.0], [0], [0.0], 1.0)
    with pytest.raises(ModelError):
        EventLog([0.5], [0], [np.inf], 1.0)


def test_ingest_separates_ties_with_warning():
    with pytest.warns(UserWarning, match="tied"):
        log = EventLog.ingest([1.0, 0.5, 1.0], [0, 1, 2], [0.1, 0.2, 0.3], 5.0)
    assert log.t.tolist() == [0.5, 1.0, 1.0 + 1e-9]
    assert log.u.tolist() == [1, 0, 2]


def test_params_validation():
    net, p = chain_params()
    with pytest.raises(ModelError):
        p.replace(mu=np.array([-1.0, 1.0]))
    with pytest.raises(ModelError):
        p.replace(A=sp.csr_matrix(np.eye(2)))
    with pytest.raises(ModelError):
        p.replace(omega=0.0)
    with pytest.raises(ModelError):
        p.replace(sigma=np.array([1.0, 0.0]))
    p.check_support(net)
    bad = p.replace(A=sp.csr_matrix(np.array([[0.0, 0.3], [0.5, 0.0]])))
    with pytest.raises(ModelError, match="outside"):
        bad.check_support(net)
    # B may use the diagonal but not non-edges
    p.replace(B=sp.csr_matrix(np.diag([0.2, 0.1]))).check_support(net)


def test_gaussian_density_integrates_to_one():
    model = SentimentModel("gaussian", np.array([0.3]))
    grid = np.linspace(-5, 5, 200001)
    assert abs(np.trapezoid(model.pdf(grid, 0.7), grid) - 1.0) < 1e-8


# ---------------------------------------------------------------- decay

@pytest.mark.parametrize("x, a, w, dt, want", [
    (1.0, 0.0, 3.0, 0.0, 1.0),
    (0.7, 0.7, 3.0, 10.0, 0.7),
    (1.0, 0.0, math.log(2), 1.0, 0.5),
])
def test_decay_opinion_examples(x, a, w, dt, want):
    assert decay_opinion(x, a, w, dt) == pytest.approx(want, abs=1e-15)
    assert decay_opinion(x, a, w, dt) == pytest.approx(_ode_relax(x, a, w, dt), abs=1e-9)


@pytest.mark.parametrize("lam, mu, nu, dt, want", [
    (2.0, 1.0, 7.0, 0.0, 2.0),
    (1.0, 1.0, 5.0, 100.0, 1.0),
    (3.0, 1.0, math.log(2), 2.0, 1.5),
])
def test_decay_intensity_examples(lam, mu, nu, dt, want):
    assert decay_intensity(lam, mu, nu, dt) == pytest.approx(want, abs=1e-15)
    assert decay_intensity(lam, mu, nu, dt) == pytest.approx(_ode_relax(lam, mu, nu, dt), abs=1e-9)


def test_decay_rejects_negative_dt():
    with pytest.raises(ValueError):
        decay_opinion(1.0, 0.0, 1.0, -1e-3)
    with pytest.raises(ValueError):
        decay_intensity(1.0, 0.0, 1.0, -1e-3)


# ---------------------------------------------------------------- jumps

def test_jump_isolated_user_changes_nothing():
    net = Network(3, [(1, 2)])
    p = ModelParams(np.zeros(3), sp.csr_matrix((3, 3)), np.ones(3), sp.csr_matrix((3, 3)),
                    1.0, 1.0, np.ones(3))
    st = MarkovState.initial(p)
    before = (st.x_last.copy(), st.lambda_last.copy(), st.t_last.copy())
    apply_jump(st, Event(0.5, 0, 1.0), p, net)
    assert st.touched == [] and st.n_events == 1
    for a, b in zip(before, (st.x_last, st.lambda_last, st.t_last)):
        np.testing.assert_array_equal(a, b)


def test_jump_single_edge_arithmetic():
    net = Network(2, [(1, 0)])   # user 1 follows user 0
    A = sp.csr_matrix(np.array([[0.0, 0.0], [0.5, 0.0]]))
    p = ModelParams(np.zeros(2), A, np.ones(2), sp.csr_matrix((2, 2)), 1.0, 1.0, np.ones(2))
    st = MarkovState.initial(p)
    apply_jump(st, Event(0.0, 0, 1.0), p, net)
    assert st.x_last[1] == 0.5 and st.x_last[0] == 0.0


def test_jump_star_touches_exactly_spokes():
    k = 7
    net = Network(k + 1, [(s, 0) for s in range(1, k + 1)])
    rng = np.random.default_rng(0)
    rows = np.arange(1, k + 1)
    A = sp.csr_matrix((rng.normal(size=k), (rows, np.zeros(k, int))), shape=(k + 1, k + 1))
    B = sp.csr_matrix((rng.uniform(size=k), (rows, np.zeros(k, int))), shape=(k + 1, k + 1))
    p = ModelParams(rng.normal(size=k + 1), A, np.ones(k + 1), B, 1.0, 1.0, np.ones(k + 1))
    st = MarkovState.initial(p)
    x0, l0 = st.opinions(0.3, p), st.intensities(0.3, p)
    apply_jump(st, Event(0.3, 0, 0.8), p, net)
    changed = np.flatnonzero((st.opinions(0.3, p) != x0) | (st.intensities(0.3, p) != l0))
    assert sorted(changed.tolist()) == list(range(1, k + 1))
    # dense recompute oracle
    log = EventLog([0.3], [0], [0.8], 1.0)
    np.testing.assert_allclose(st.opinions(0.5, p), opinions_from_history(log, p, 0.5), rtol=1e-12)


def test_jump_self_excitation_and_errors():
    net = Network(1, [])
    p = ModelParams(np.zeros(1), sp.csr_matrix((1, 1)), np.ones(1), sp.csr_matrix([[0.5]]),
                    1.0, 2.0, np.ones(1))
    st = MarkovState.initial(p)
    apply_jump(st, Event(1.0, 0, 0.0), p, net)
    assert st.lambda_last[0] == pytest.approx(1.5)
    with pytest.raises(ModelError):
        apply_jump(st, Event(2.0, 5, 0.0), p, net)
    with pytest.raises(ValueError):
        apply_jump(st, Event(0.5, 0, 0.0), p, net)


# ---------------------------------------------------------------- batch evaluators

def test_history_evaluators_examples():
    net = Network(2, [(0, 1)])    # 0 follows 1
    A = sp.csr_matrix(np.array([[0.0, 0.5], [0.0, 0.0]]))
    B = sp.csr_matrix(np.diag([1.0, 0.0]))
    p = ModelParams(np.array([0.2, 0.0]), A, np.array([0.3, 0.0]), B, math.log(2), math.log(2),
                    np.ones(2))
    empty = EventLog.empty(5.0)
    assert opinion_from_history(empty, p, net, 0, 2.0) == 0.2
    one = EventLog([1.0], [1], [1.0], 5.0)
    assert opinion_from_history(one, p, net, 0, 2.0) == pytest.approx(0.2 + 0.25, abs=1e-15)
    self_ev = EventLog([1.0], [0], [0.0], 5.0)
    assert intensity_from_history(self_ev, p, net, 0, 2.0) == pytest.approx(0.3 + 0.5, abs=1e-15)
    p0 = p.replace(B=sp.csr_matrix((2, 2)))
    for t in (0.0, 1.5, 4.0):
        assert intensity_from_history(self_ev, p0, net, 0, t) == 0.3


def _incremental_check(net, p, log):
    st = MarkovState.initial(p)
    worst = 0.0
    for ev in log:
        x_inc = st.opinions(ev.t, p)
        l_inc = st.intensities(ev.t, p)
        for u in range(p.n_users):
            xb = opinion_from_history(log, p, net, u, ev.t)
            lb = intensity_from_history(log, p, net, u, ev.t)
            worst = max(worst, abs(x_inc[u] - xb) / max(1.0, abs(xb)),
                        abs(l_inc[u] - lb) / max(1.0, abs(lb)))
        apply_jump(st, ev, p, net)
    return worst


def test_random_log_matches_incremental_evolution():
    rng = np.random.default_rng(11)
    net, p = random_instance(rng, n=6)
    t = np.sort(rng.uniform(0, 20, 100))
    log = EventLog(t, rng.integers(0, 6, 100), rng.normal(size=100), 25.0)
    assert _incremental_check(net, p, log) <= 1e-9
    # vectorized evaluators agree with the scalar reference
    for q in (0.0, 7.3, 24.9):
        xs = [opinion_from_history(log, p, net, u, q) for u in range(6)]
        np.testing.assert_allclose(opinions_from_history(log, p, q), xs, rtol=1e-10, atol=1e-12)
        ls = [intensity_from_history(log, p, net, u, q) for u in range(6)]
        np.testing.assert_allclose(intensities_from_history(log, p, q), ls, rtol=1e-10)


# ---------------------------------------------------------------- sentiments

def test_sentiment_degenerate_gaussian():
    m = sample_sentiment(SentimentModel("gaussian", np.array([1e-12])), 0.3, RandomStream(0))
    assert abs(m - 0.3) < 1e-9


def test_sentiment_logistic_symmetry():
    rs = RandomStream(1)
    model = SentimentModel("logistic")
    draws = np.array([sample_sentiment(model, 0.0, rs) for _ in range(100_000)])
    assert set(np.unique(draws)) == {-1.0, 1.0}
    assert abs((draws > 0).mean() - 0.5) < 0.01


def test_sentiment_gaussian_moments():
    rs = RandomStream(2)
    model = SentimentModel("gaussian", np.array([1.0]))
    draws = np.array([sample_sentiment(model, 0.0, rs) for _ in range(10_000)])
    assert abs(draws.mean()) < 0.02
    assert 0.95 <= draws.var() <= 1.05


def test_random_stream_split_is_reproducible_and_distinct():
    a = [RandomStream.split(5, 1).uniform() for _ in range(2)]
    assert a[0] == a[1]
    assert RandomStream.split(5, 1).uniform() != RandomStream.split(5, 2).uniform()
