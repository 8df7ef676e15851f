import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from rsmpc.errors import ConfigError, NotQuadraticallyStable
from rsmpc.model import (D_map, UncertainLTISystem, lqr_gain,
                         normalize_constraints, synthesize_gain,
                         terminal_weight, verify_gain)
from rsmpc.polytope import Polytope


def spectral_radius(M):
    return np.max(np.abs(np.linalg.eigvals(M)))


def test_affine_matrices(illustrative_sys):
    s = illustrative_sys
    np.testing.assert_allclose(s.B(-0.4), (1 - 0.4) * np.array([[0.5], [1.0]]))
    np.testing.assert_allclose(s.A(-0.2), [[1, 1], [0, 1]])
    assert s.theta_vertices.shape == (2, 1)
    np.testing.assert_allclose(np.sort(s.theta_vertices.ravel()), [-0.4, 0.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_D_map_identity(seed):
    """A(t) a + B(t) b = A(t') a + B(t') b + D(a, b) (t - t')."""
    rng = np.random.default_rng(seed)
    n, m, p = 3, 2, 2
    A = [rng.normal(size=(n, n)) for _ in range(p + 1)]
    B = [rng.normal(size=(n, m)) for _ in range(p + 1)]
    sys_ = UncertainLTISystem(A, B, Polytope.box(-np.ones(p), np.ones(p)),
                              Polytope.box(-np.ones(n), np.ones(n)),
                              Polytope.box(-np.ones(m), np.ones(m)))
    a, b = rng.normal(size=n), rng.normal(size=m)
    t, t2 = rng.uniform(-1, 1, size=p), rng.uniform(-1, 1, size=p)
    lhs = sys_.A(t) @ a + sys_.B(t) @ b
    rhs = sys_.A(t2) @ a + sys_.B(t2) @ b + D_map(a, b, sys_) @ (t - t2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_normalize_constraints():
    P = Polytope([[1.0, 0.0], [0.0, -2.0]], [2.0, 4.0])
    with pytest.warns(UserWarning):
        Q = normalize_constraints(P)
    np.testing.assert_allclose(Q.h, [1, 1])
    np.testing.assert_allclose(Q.H, [[0.5, 0], [0, -0.5]])
    with pytest.raises(ConfigError):
        normalize_constraints(Polytope([[1.0]], [0.0]))


def test_invalid_dimensions_rejected():
    box = Polytope.box([-1], [1])
    with pytest.raises(ConfigError):
        UncertainLTISystem([np.eye(2), np.eye(2)], [np.ones((2, 1))], box,
                           Polytope.box(-np.ones(2), np.ones(2)), box)
    with pytest.raises(ConfigError):
        UncertainLTISystem([np.eye(2), np.eye(2)],
                           [np.ones((2, 1)), np.ones((2, 1))], box,
                           Polytope.box(-np.ones(2), np.ones(2)), box,
                           p_x=1.0)


def test_lqr_gain_matches_riccati_iteration():
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    B = np.array([[0.5], [1.0]])
    Q, R = np.eye(2), np.eye(1)
    X = Q.copy()
    for _ in range(2000):
        K = -np.linalg.solve(R + B.T @ X @ B, B.T @ X @ A)
        X = Q + A.T @ X @ (A + B @ K)
    np.testing.assert_allclose(lqr_gain(A, B, Q, R), K, atol=1e-9)


def test_verify_gain_certificate(illustrative_sys):
    s = illustrative_sys
    K = lqr_gain(s.A(-0.4), s.B(-0.4), np.eye(2), np.eye(1))
    fg = verify_gain(s, K)
    for Acl in s.vertex_closed_loops(K):
        assert spectral_radius(Acl) < 1
        assert np.linalg.eigvalsh(Acl.T @ fg.P_lyap @ Acl - fg.P_lyap)[-1] < 0


def test_verify_gain_rejects_unstable(illustrative_sys):
    with pytest.raises(NotQuadraticallyStable):
        verify_gain(illustrative_sys, np.zeros((1, 2)))


def test_synthesized_gain_is_robustly_stable():
    A0 = np.array([[1.2, 0.3], [0.0, 0.9]])
    A1 = np.array([[0.1, 0.0], [0.05, 0.0]])
    B0 = np.array([[0.0], [1.0]])
    s = UncertainLTISystem([A0, A1], [B0, np.zeros((2, 1))],
                           Polytope.box([-1], [1]),
                           Polytope.box(-np.ones(2), np.ones(2)),
                           Polytope.box([-1], [1]))
    fg = synthesize_gain(s)
    for Acl in s.vertex_closed_loops(fg.K):
        assert spectral_radius(Acl) < 1
        assert np.linalg.eigvalsh(Acl.T @ fg.P_lyap @ Acl - fg.P_lyap)[-1] < 0


def test_terminal_weight_decrease(illustrative_sys):
    s = illustrative_sys
    K = lqr_gain(s.A(-0.4), s.B(-0.4), np.eye(2), np.eye(1))
    P = terminal_weight(s, K, np.eye(2), np.eye(1))
    Qbar = np.eye(2) + K.T @ K
    for Acl in s.vertex_closed_loops(K):
        assert np.linalg.eigvalsh(Acl.T @ P @ Acl - P + Qbar)[-1] <= 0
    # for a single vertex the minimum-trace P is the Lyapunov solution
    nom = s.nominal([-0.4])
    Pn = terminal_weight(nom, K, np.eye(2), np.eye(1))
    Acl = nom.vertex_closed_loops(K)[0]
    Plyap = scipy.linalg.solve_discrete_lyapunov(Acl.T, Qbar)
    np.testing.assert_allclose(Pn, Plyap, rtol=1e-5)


def test_nominal_and_serialization(illustrative_sys):
    nom = illustrative_sys.nominal([-0.1])
    np.testing.assert_allclose(nom.theta_vertices, [[-0.1]])
    back = UncertainLTISystem.from_dict(illustrative_sys.to_dict())
    np.testing.assert_allclose(back.X.H, illustrative_sys.X.H)
    np.testing.assert_allclose(back.theta_vertices, illustrative_sys.theta_vertices)
    assert back.p_x == illustrative_sys.p_x
