import cvxpy as cp
import numpy as np
import pytest

from rsmpc.errors import SeedMismatch
from rsmpc.experiments import make_controller, run_seed, synthesize
from rsmpc.polytope import Polytope
from rsmpc.rprs import NoiseModel
from rsmpc.sim import (ClosedLoopTrace, ConstantEstimator, ProjectedRLS,
                       cost_increase_stats, empirical_satisfaction,
                       project_onto_polytope, rls_projected_update,
                       run_closed_loop, running_l2_average, sample_noise,
                       trace_to_csv)

SIGMA = np.array([[0.3, 0.5], [0.5, 1.0]])


def fake_trace(seed, flags, cost=1.0):
    """A minimal trace with the given per-step state flags."""
    flags = np.asarray(flags, bool)
    T = flags.shape[0] - 1
    return ClosedLoopTrace(
        seed=seed, theta_true=np.zeros(1), x_true=np.zeros((T + 1, 1)),
        u_true=np.zeros((T, 1)), v0=np.zeros((T, 1)), s0=np.zeros((T, 1)),
        alpha0=np.zeros(T), theta_bar=np.zeros((T, 1)), status=["optimal"] * T,
        state_flags=flags, input_flags=np.ones((T, 0), bool),
        cost=np.full(T, cost / T))


# ----------------------------------------------------------------- noise
def test_sample_noise_is_deterministic():
    nm = NoiseModel(5, 2, Sigma_w=SIGMA, family="gaussian")
    np.testing.assert_array_equal(sample_noise(nm, 3), sample_noise(nm, 3))
    assert not np.array_equal(sample_noise(nm, 3), sample_noise(nm, 4))


@pytest.mark.parametrize("family", ["gaussian", "moment"])
def test_sample_covariance(family):
    nm = NoiseModel(1, 2, Sigma_w=SIGMA, family=family)
    W = sample_noise(nm, 0, n_samples=100_000)[:, 0]
    err = np.linalg.norm(np.cov(W.T) - SIGMA) / np.linalg.norm(SIGMA)
    assert err <= 0.05
    assert np.linalg.norm(W.mean(axis=0)) < 0.02


def test_correlated_sample_covariance():
    from rsmpc.rprs import ar1_covariance

    S = ar1_covariance(SIGMA, 3, 0.6)
    nm = NoiseModel(3, 2, Sigma_W=S, family="gaussian")
    W = sample_noise(nm, 1, n_samples=100_000).reshape(100_000, 6)
    assert np.linalg.norm(np.cov(W.T) - S) / np.linalg.norm(S) <= 0.05


def test_vanishing_covariance_returns_mean():
    mean = np.arange(8.0).reshape(4, 2)
    nm = NoiseModel(4, 2, mean=mean, Sigma_w=1e-14 * np.eye(2))
    np.testing.assert_allclose(sample_noise(nm, 0), mean, atol=1e-5)


# ---------------------------------------------------------------- metrics
def test_satisfaction_all_ok():
    traces = [fake_trace(s, np.ones((4, 2))) for s in range(3)]
    res = empirical_satisfaction(traces, threshold=99.0)
    assert res.N_c == 100.0 and res.passed
    np.testing.assert_array_equal(res.per_step, 100.0)


def test_satisfaction_one_of_two_violates():
    bad = np.ones((4, 2), bool)
    bad[2, 1] = False
    res = empirical_satisfaction([fake_trace(0, np.ones((4, 2))),
                                  fake_trace(1, bad)])
    assert res.N_c == 50.0
    np.testing.assert_array_equal(res.per_step, [100, 100, 50, 100])
    # the violated row alone, and the other row alone
    assert empirical_satisfaction([fake_trace(1, bad)], rows=0).N_c == 100.0
    assert empirical_satisfaction([fake_trace(1, bad)], rows=[1]).N_c == 0.0


def test_satisfaction_excludes_halted_traces():
    t = fake_trace(1, np.zeros((4, 2)))
    t.halted_at = 2
    res = empirical_satisfaction([fake_trace(0, np.ones((4, 2))), t])
    assert res.N_c == 100.0 and res.n_halted == 1 and res.n_used == 1


def test_cost_increase():
    a = [fake_trace(s, np.ones((3, 1)), cost=100.0) for s in range(4)]
    assert cost_increase_stats(a, a)["mean"] == 0.0
    b = [fake_trace(0, np.ones((3, 1)), cost=101.0)]
    st = cost_increase_stats(b, a[:1])
    assert st["mean"] == pytest.approx(1.0)
    assert st["lower"] == st["upper"] == pytest.approx(1.0)
    with pytest.raises(SeedMismatch):
        cost_increase_stats(b, a[1:2])
    with pytest.raises(SeedMismatch):
        cost_increase_stats(a, a[:3])


def test_running_l2_average_formula():
    t = fake_trace(0, np.ones((4, 1)))
    t.x_true = np.array([[1.0], [2.0], [0.0], [5.0]])
    np.testing.assert_allclose(running_l2_average([t]), [1.0, 2.5, 5 / 3])


# ------------------------------------------------------------- estimators
def test_projection_kkt_and_against_cvxpy():
    P = Polytope([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]], [1.0, 0.0, 0.0])
    rng = np.random.default_rng(0)
    for y in rng.uniform(-2, 2, size=(20, 2)):
        x = project_onto_polytope(P, y)
        xc = cp.Variable(2)
        cp.Problem(cp.Minimize(cp.sum_squares(xc - y)),
                   [P.H @ xc <= P.h]).solve(solver=cp.CLARABEL)
        np.testing.assert_allclose(x, xc.value, atol=1e-6)
        if not P.contains(y):
            assert np.min(np.abs(P.H @ x - P.h)) < 1e-7


def test_projection_lands_on_boundary(illustrative_sys):
    s = illustrative_sys
    np.testing.assert_allclose(project_onto_polytope(s.Theta, [-0.7]), [-0.4],
                               atol=1e-8)
    np.testing.assert_allclose(project_onto_polytope(s.Theta, [0.3]), [0.0],
                               atol=1e-8)
    np.testing.assert_array_equal(project_onto_polytope(s.Theta, [-0.1]),
                                  [-0.1])


def test_rls_noiseless_recovery(illustrative_sys):
    s = illustrative_sys
    th = np.array([-0.23])
    rng = np.random.default_rng(1)
    theta, P = np.array([-0.4]), 1e9 * np.eye(1)
    # n * p = 2 informative transitions
    for _ in range(2):
        x, u = rng.normal(size=2), rng.normal(size=1)
        xn = s.A(th) @ x + s.B(th) @ u
        proj, theta, P = rls_projected_update(x, u, xn, np.zeros(2), s,
                                              theta, P)
    np.testing.assert_allclose(theta, th, atol=1e-6)
    np.testing.assert_allclose(proj, th, atol=1e-6)


def test_rls_zero_regressor_returns_prior(illustrative_sys):
    s = illustrative_sys
    prior = np.array([-0.1])
    proj, theta, P = rls_projected_update(np.zeros(2), np.zeros(1),
                                          np.array([0.3, -0.2]), np.zeros(2),
                                          s, prior, np.eye(1))
    np.testing.assert_array_equal(proj, prior)
    np.testing.assert_array_equal(theta, prior)
    np.testing.assert_array_equal(P, np.eye(1))


def test_rls_estimate_outside_is_projected(illustrative_sys):
    s = illustrative_sys
    est = ProjectedRLS(s, [-0.2], P0=1e9)
    # data generated by a parameter outside Theta
    x, u = np.array([1.0, 1.0]), np.array([1.0])
    xn = s.A(-0.9) @ x + s.B(-0.9) @ u
    out = est({"x": [x, xn], "u": [u]})
    np.testing.assert_allclose(out, [-0.4], atol=1e-8)
    assert est.theta_ls[0] < -0.8


def test_constant_estimator():
    est = ConstantEstimator([-0.7], Polytope.box([-0.4], [0.0]))
    seq = [est({"x": [], "u": []}) for _ in range(5)]
    for th in seq:
        np.testing.assert_allclose(th, [-0.4], atol=1e-8)


# ----------------------------------------------------------- closed loop
@pytest.fixture(scope="module")
def syn(illustrative_cfg):
    return synthesize(illustrative_cfg, 0.4, 0.8)


def test_origin_stays_at_origin(syn, illustrative_cfg):
    ctl = make_controller(illustrative_cfg, syn)
    tr = run_closed_loop(syn.sys, [-0.4], ctl, ConstantEstimator([-0.4]),
                         np.zeros((6, 2)), 6, np.zeros(2))
    np.testing.assert_allclose(tr.x_true, 0, atol=1e-7)
    np.testing.assert_allclose(tr.u_true, 0, atol=1e-7)
    assert tr.theta_bar.shape == (6, 1)
    np.testing.assert_array_equal(tr.theta_bar, -0.4)
    assert not tr.halted


def test_zero_noise_running_average_decays(syn, illustrative_cfg):
    ctl = make_controller(illustrative_cfg, syn)
    tr = run_closed_loop(syn.sys, [-0.4], ctl, ConstantEstimator([-0.4]),
                         np.zeros((60, 2)), 60, np.array([-5.0, 0.0]))
    avg = running_l2_average([tr])
    sq = np.sum(tr.x_true ** 2, axis=1)
    assert sq[-1] < 1e-6
    # bounded total, so the average decays like 1/T
    assert avg[-1] * 60 == pytest.approx(np.sum(sq[:-1]))
    assert avg[-1] < avg[29] < avg[0]


@pytest.mark.parametrize("theta", [0.0, -0.4, -0.15])
def test_tube_soundness_and_candidate(syn, illustrative_cfg, theta):
    cfg = illustrative_cfg.with_overrides(T=25)
    tr = run_seed(cfg, syn, 7, theta=[theta], diagnostics=True,
                  check_candidate=True)
    assert not tr.halted
    assert np.max(tr.tube_slack) <= 1e-7
    assert np.max(tr.candidate_violation) <= 1e-6
    # flags are recomputed from the measured states
    F = syn.sys.F
    np.testing.assert_array_equal(tr.state_flags, tr.x_true @ F.T <= 1.0)


def test_trace_csv_is_deterministic(syn, illustrative_cfg):
    cfg = illustrative_cfg.with_overrides(T=10)
    a = trace_to_csv(run_seed(cfg, syn, 11))
    b = trace_to_csv(run_seed(cfg, syn, 11))
    assert a == b
    lines = a.splitlines()
    assert lines[0].startswith("k,x0,x1,u0,v0,s0,s1,alpha,status")
    assert len(lines) == 12
    assert a != trace_to_csv(run_seed(cfg, syn, 12))


def test_rls_estimates_stay_in_theta(syn, illustrative_cfg):
    ctl = make_controller(illustrative_cfg, syn)
    W = sample_noise(syn.noise, 5)
    est = ProjectedRLS(syn.sys, [-0.4])
    tr = run_closed_loop(syn.sys, [0.0], ctl, est, W, 30,
                         np.array([-20.0, 0.0]))
    assert not tr.halted
    for th in tr.theta_bar:
        assert syn.sys.Theta.contains(th, 1e-9)
