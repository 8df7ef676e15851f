import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsmpc.conic import (INFEASIBLE, OPTIMAL, ConicProgram, MaxDetProgram,
                         bmat, smat, solve_conic, solve_maxdet, svec)
from rsmpc.errors import Infeasible


def random_spd(rng, n, scale=1.0):
    G = rng.normal(size=(n, n))
    return scale * (G @ G.T + 0.5 * np.eye(n))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_svec_smat_round_trip(n, seed):
    M = random_spd(np.random.default_rng(seed), n)
    np.testing.assert_allclose(smat(svec(M), n), M, atol=1e-12)
    # svec preserves the trace inner product
    N = random_spd(np.random.default_rng(seed + 1), n)
    assert svec(M) @ svec(N) == pytest.approx(np.trace(M @ N))


@pytest.mark.parametrize("backend", ["clarabel", "scs"])
def test_qp_matches_cvxpy(backend):
    rng = np.random.default_rng(0)
    n, r = 6, 10
    G = rng.normal(size=(n, n))
    P = G @ G.T + np.eye(n)
    q = rng.normal(size=n)
    A = rng.normal(size=(r, n))
    b = rng.uniform(0.5, 1.5, size=r)
    prog = ConicProgram()
    x = prog.var(n)
    prog.add_le(A @ x, b[:, None])
    prog.minimize(q, P=P)
    sol = solve_conic(prog, backend=backend,
                      settings={"eps": 1e-10} if backend == "scs" else None)
    assert sol.status == OPTIMAL
    xc = cp.Variable(n)
    ref = cp.Problem(cp.Minimize(0.5 * cp.quad_form(xc, P) + q @ xc),
                     [A @ xc <= b])
    ref.solve(solver=cp.CLARABEL)
    assert sol.objective == pytest.approx(ref.value, rel=1e-5, abs=1e-6)


def test_lmi_minimum_eigenvalue():
    """max t s.t. M - t I >= 0 gives the smallest eigenvalue."""
    M = random_spd(np.random.default_rng(3), 4)
    prog = ConicProgram()
    t = prog.var(1)
    prog.add_psd(M - bmat([[t, None, None, None], [None, t, None, None],
                           [None, None, t, None], [None, None, None, t]]))
    prog.maximize(t)
    sol = solve_conic(prog)
    assert sol.objective == pytest.approx(np.linalg.eigvalsh(M)[0], rel=1e-6)


def test_soc_projection():
    """min ||x - y|| over the unit ball."""
    y = np.array([3.0, 4.0])
    prog = ConicProgram()
    x = prog.var(2)
    t = prog.var(1)
    prog.add_soc(t, x - y[:, None])
    prog.add_soc(np.ones((1, 1)), x)
    prog.minimize(t)
    sol = solve_conic(prog)
    np.testing.assert_allclose(x.value(sol.x).ravel(), y / 5, atol=1e-6)
    assert sol.objective == pytest.approx(4.0, abs=1e-6)


def test_infeasible_status_and_exception():
    prog = ConicProgram()
    x = prog.var(1)
    prog.add_le(x, -1.0)
    prog.add_ge(x, 1.0)
    prog.minimize(np.zeros(1))
    sol = solve_conic(prog)
    assert sol.status == INFEASIBLE
    with pytest.raises(Infeasible):
        sol.require_optimal()


@pytest.mark.parametrize("backend", ["clarabel", "scs"])
def test_maxdet_closed_form(backend):
    """max log det S s.t. S <= M^-1 is attained at S = M^-1."""
    M = random_spd(np.random.default_rng(7), 3)
    mp = MaxDetProgram(3)
    mp.add_psd(np.linalg.inv(M) - mp.S)
    sol = solve_maxdet(mp, backend=backend)
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(-np.linalg.slogdet(M)[1], abs=1e-4)


def test_maxdet_matches_cvxpy():
    """Minimum-volume dominating matrix of three SPD matrices."""
    rng = np.random.default_rng(11)
    Ms = [random_spd(rng, 3) for _ in range(3)]
    mp = MaxDetProgram(3)
    for M in Ms:
        Mi = np.linalg.inv(M)
        mp.add_psd(0.5 * (Mi + Mi.T) - mp.S)
    sol = solve_maxdet(mp)
    S = cp.Variable((3, 3), symmetric=True)
    ref = cp.Problem(cp.Maximize(cp.log_det(S)),
                     [np.linalg.inv(M) - S >> 0 for M in Ms])
    ref.solve(solver=cp.SCS, eps=1e-9)
    assert sol.objective == pytest.approx(ref.value, abs=1e-4)
