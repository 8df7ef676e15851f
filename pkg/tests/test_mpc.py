import cvxpy as cp
import numpy as np
import pytest
import scipy.sparse as sp

from rsmpc.conic import OPTIMAL
from rsmpc.errors import EstimateOutsideTheta, Infeasible, MissingPrevSolution
from rsmpc.experiments import make_controller, synthesize
from rsmpc.model import UncertainLTISystem, lqr_gain, terminal_weight
from rsmpc.mpc import MPCConfig, MPCStepSolution, RobustStochasticMPC
from rsmpc.polytope import Polytope
from rsmpc.rprs import TighteningTable
from rsmpc.sim import sample_noise
from rsmpc.tube import box_base_set, terminal_set


@pytest.fixture(scope="module")
def syn(illustrative_cfg):
    return synthesize(illustrative_cfg, 0.4, 0.8)


@pytest.fixture(scope="module")
def ctl(illustrative_cfg, syn):
    return make_controller(illustrative_cfg, syn)


def reference_objective(ctl, x_true, theta_bar, s_init, a_init, k):
    """Independent cvxpy model: containment by explicit enumeration of the
    Theta and base-set vertices instead of dual multipliers."""
    sys, cfg = ctl.sys, ctl.cfg
    n, m, N, K = sys.n, sys.m, cfg.N, cfg.K
    Zv = cfg.Zbar.vertices()
    Hz = cfg.Zbar.H
    fbar = np.array([np.max(Zv @ f) for f in sys.F])
    gbar = np.array([np.max(Zv @ K.T @ g) for g in sys.G])
    v = cp.Variable((N, m))
    s = cp.Variable((N + 1, n))
    a = cp.Variable(N + 1)
    x = cp.Variable((N + 1, n))
    Acl_bar, B_bar = sys.A_cl(theta_bar, K), sys.B(theta_bar)
    cons = [x[0] == x_true, s[0] == s_init, a[0] == a_init, a >= 0]
    cost = 0
    tt = cfg.tightening
    for i in range(N):
        cons.append(x[i + 1] == Acl_bar @ x[i] + B_bar @ v[i])
        u = K @ x[i] + v[i]
        cost += cp.quad_form(x[i], cfg.Q) + cp.quad_form(u, cfg.R)
        for th in sys.theta_vertices:
            Acl, B = sys.A_cl(th, K), sys.B(th)
            for zj in Zv:
                img = Acl @ (s[i] + a[i] * zj) + B @ v[i]
                cons.append(Hz @ (img - s[i + 1]) <= a[i + 1])
        cons.append(sys.F @ s[i] + a[i] * fbar <= 1 - tt.f_at(k + i))
        cons.append(sys.G @ (K @ s[i] + v[i]) + a[i] * gbar
                    <= 1 - tt.g_at(k + i))
    HT, hT = cfg.terminal.H, cfg.terminal.h
    cons.append(HT[:, :n] @ s[N] + HT[:, n] * a[N] <= hT)
    cost += cp.quad_form(x[N], cfg.P)
    prob = cp.Problem(cp.Minimize(cost), cons)
    prob.solve(solver=cp.CLARABEL)
    assert prob.status == "optimal"
    return prob.value


def test_program_dimensions(ctl):
    """N = 30, m = 1, n = 2, a parallelotope base set (4 vertices, 4 facets)
    and an interval Theta (2 facets)."""
    lay = ctl.lay
    assert (lay.v1, lay.r, lay.q) == (4, 4, 2)
    prog = ctl.assemble(np.array([-20.0, 0.0]), [-0.4])
    expected = 30 * 1 + 31 * 2 + 31 + 30 * 4 * 4 * 2 + 31 * 2
    assert prog.n == lay.size == expected


def test_objective_matches_reference_first_step(ctl):
    x0 = np.array([-20.0, 0.0])
    sol = ctl.solve_step(x0, [-0.4])
    ref = reference_objective(ctl, x0, np.array([-0.4]), x0, 0.0, 0)
    assert sol.objective == pytest.approx(ref, rel=1e-4)
    np.testing.assert_allclose(sol.u0, ctl.cfg.K @ x0 + sol.v[0])


def test_objective_matches_reference_later_step(ctl, syn):
    """After three closed-loop steps with a fixed noise seed."""
    W = sample_noise(syn.noise, 0)
    x = np.array([-20.0, 0.0])
    prev = None
    plant = syn.sys
    for k in range(3):
        prev = ctl.solve_step(x, [-0.4], prev, k)
        x = plant.A(0.0) @ x + plant.B(0.0) @ prev.u0 + W[k]
    sol = ctl.solve_step(x, [-0.4], prev, 3)
    ref = reference_objective(ctl, x, np.array([-0.4]), prev.s[1],
                              prev.alpha[1], 3)
    assert sol.objective == pytest.approx(ref, rel=1e-4)
    # the initial tube is copied bit-exactly from the previous solution
    assert np.array_equal(sol.s[0], prev.s[1])
    assert sol.alpha[0] == prev.alpha[1]


def test_indirect_feedback_sparsity(ctl):
    """x_true only enters the right-hand side of the x_0 rows, and the
    predicted states x only appear in the prediction rows."""
    x0 = np.array([-20.0, 0.0])
    prev = ctl.solve_step(x0, [-0.4])
    p1 = ctl.assemble(np.array([-19.0, 1.0]), [-0.4], prev, 1)
    p2 = ctl.assemble(np.array([5.0, -2.0]), [-0.4], prev, 1)
    A1, b1 = p1.data()[2:4]
    A2, b2 = p2.data()[2:4]
    assert (A1 != A2).nnz == 0
    lay = ctl.lay
    A1 = sp.csr_matrix(A1)
    changed = np.flatnonzero(b1 != b2)
    assert len(changed) == lay.n
    for row in changed:
        assert set(A1[row].indices) <= set(lay.x(0))
    xcols = set(range(lay.x0, lay.x0 + (lay.N + 1) * lay.n))
    vcols = set(range(lay.v0, lay.v0 + lay.N * lay.m))
    for row in np.unique(sp.csc_matrix(A1)[:, sorted(xcols)].tocoo().row):
        assert set(A1[row].indices) <= xcols | vcols


def test_infeasible_initial_state(ctl):
    with pytest.raises(Infeasible) as exc:
        ctl.solve_step(np.array([0.0, 10.0]), [-0.4])
    stub = exc.value.info["solution"]
    assert isinstance(stub, MPCStepSolution) and not stub.ok


def test_missing_previous_solution(ctl):
    with pytest.raises(MissingPrevSolution):
        ctl.assemble(np.zeros(2), [-0.4], None, 3)


def test_estimate_projection(ctl, illustrative_cfg, syn):
    sol = ctl.solve_step(np.array([-20.0, 0.0]), [-0.9])
    np.testing.assert_allclose(sol.theta_bar, [-0.4])
    import dataclasses

    strict = RobustStochasticMPC(syn.sys, dataclasses.replace(
        ctl.cfg, project_estimate=False))
    with pytest.raises(EstimateOutsideTheta):
        strict.solve_step(np.array([-20.0, 0.0]), [0.3])


def test_shift_candidate(syn):
    cfg = MPCConfig(N=3, Q=np.eye(2), R=np.eye(1), P=syn.P, K=syn.K,
                    Zbar=syn.Zbar, tightening=syn.tightening,
                    terminal=syn.terminal)
    c = RobustStochasticMPC(syn.sys, cfg)
    prev = MPCStepSolution(OPTIMAL, 0, np.array([-0.4]),
                           v=np.array([[1.0], [2.0], [3.0]]),
                           s=np.zeros((4, 2)), alpha=np.zeros(4))
    cand = c.shift(prev)
    np.testing.assert_array_equal(cand.v.ravel(), [2.0, 3.0, 0.0])
    assert syn.terminal.contains(cand.s[-1], cand.alpha[-1], 1e-7)


def test_candidate_is_feasible(ctl):
    x0 = np.array([-20.0, 0.0])
    sol = ctl.solve_step(x0, [-0.4])
    assert ctl.candidate_violation(ctl.shift(sol), 1) <= 1e-6
    # the optimizer's own tube is contained as well
    assert ctl.containment_violation(sol.s, sol.alpha, sol.v, 0) <= 1e-6


def scalar_setup(N=1):
    box = Polytope.box([-1.0], [1.0])
    sys_ = UncertainLTISystem([[[0.5]], [[0.0]]], [[[1.0]], [[0.0]]],
                              Polytope([[1.0], [-1.0]], [0.0, 0.0],
                                       vertices=[[0.0]]), box, box)
    K = lqr_gain(sys_.A(0), sys_.B(0), np.eye(1), np.eye(1))
    Z = box_base_set([1.0])
    ts = terminal_set(sys_, K, Z, np.zeros(2), np.zeros(2))
    tab = TighteningTable(np.zeros((N + 1, 2)), np.zeros((N + 1, 2)),
                          np.zeros(N + 1, bool))
    P = terminal_weight(sys_, K, np.eye(1), np.eye(1))
    return sys_, MPCConfig(N=N, Q=np.eye(1), R=np.eye(1), P=P, K=K, Zbar=Z,
                           tightening=tab, terminal=ts)


def test_trivial_one_step_problem():
    """Without uncertainty or tightening the origin stays put. The scaling
    alpha_1 does not enter the plain cost, so the tube tie-breaker is what
    pins it to zero."""
    import dataclasses

    sys_, cfg = scalar_setup()
    plain = RobustStochasticMPC(sys_, cfg).solve_step(np.zeros(1), [0.0])
    assert plain.objective == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_allclose(plain.v, 0, atol=1e-7)
    np.testing.assert_allclose(plain.s[1], 0, atol=1e-7)
    assert plain.alpha[1] >= -1e-9
    tied = RobustStochasticMPC(sys_, dataclasses.replace(
        cfg, tube_weight=1.0)).solve_step(np.zeros(1), [0.0])
    np.testing.assert_allclose(tied.v, 0, atol=1e-7)
    np.testing.assert_allclose(tied.s[1], 0, atol=1e-7)
    assert abs(tied.alpha[1]) < 1e-7


def test_expected_cost_differs_by_constant():
    """One-step objective plus tr(P Sigma) equals the exact expectation of
    the realized cost for the optimal input."""
    sys_, cfg = scalar_setup()
    c = RobustStochasticMPC(sys_, cfg)
    sigma2 = 0.04
    rng = np.random.default_rng(0)
    w = rng.normal(scale=np.sqrt(sigma2), size=400_000)
    for x0 in (0.3, -0.6):
        sol = c.solve_step(np.array([x0]), [0.0])
        u = sol.u0[0]
        x1 = 0.5 * x0 + u + w
        mc = x0 ** 2 + u ** 2 + cfg.P[0, 0] * np.mean(x1 ** 2)
        exact = sol.objective + cfg.P[0, 0] * sigma2
        assert exact == pytest.approx(mc, rel=2e-3)
        # and the minimizer of the exact expectation is the same input
        u_star = -0.5 * x0 * cfg.P[0, 0] / (1 + cfg.P[0, 0])
        assert u == pytest.approx(u_star, abs=1e-6)


def test_tube_weight_selects_small_tubes(syn):
    x0 = np.array([-20.0, 0.0])
    base = dict(N=30, Q=np.eye(2), R=np.eye(1), P=syn.P, K=syn.K,
                Zbar=syn.Zbar, tightening=syn.tightening,
                terminal=syn.terminal)
    plain = RobustStochasticMPC(syn.sys, MPCConfig(**base)).solve_step(
        x0, [-0.4])
    weighted = RobustStochasticMPC(
        syn.sys, MPCConfig(**base, tube_weight=1e-6)).solve_step(x0, [-0.4])
    assert weighted.alpha.sum() <= plain.alpha.sum() + 1e-6
    assert weighted.objective == pytest.approx(plain.objective, rel=1e-5)
