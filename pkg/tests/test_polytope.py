import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import HalfspaceIntersection

from rsmpc.errors import (DimensionTooLarge, EmptyPolytope,
                          UnboundedDirection)
from rsmpc.polytope import Polytope, pontryagin_diff


def random_polytope(rng, n, r):
    """Bounded polytope containing the origin: random normals plus a box."""
    H = rng.normal(size=(r, n))
    h = rng.uniform(0.5, 2.0, size=r)
    box = Polytope.box(-3 * np.ones(n), 3 * np.ones(n))
    return Polytope(np.vstack([H, box.H]), np.concatenate([h, box.h]))


def qhull_vertices(P, interior):
    hs = HalfspaceIntersection(np.hstack([P.H, -P.h[:, None]]), interior)
    V = hs.intersections
    keep = []
    for v in V:
        if not any(np.allclose(v, w, atol=1e-7) for w in keep):
            keep.append(v)
    return np.array(keep)


def same_point_sets(A, B, atol=1e-7):
    if A.shape != B.shape:
        return False
    return all(np.min(np.linalg.norm(B - a, axis=1)) < atol for a in A)


def test_box_vertices_and_support():
    P = Polytope.box([-1, -2], [3, 4])
    V = P.vertices()
    assert same_point_sets(V, np.array([[-1, -2], [-1, 4], [3, -2], [3, 4]],
                                       float))
    assert P.support([1, 1]) == pytest.approx(7.0)
    assert P.support([-1, 0]) == pytest.approx(1.0)


@pytest.mark.parametrize("n,r,seed", [(2, 6, 0), (3, 8, 1), (3, 15, 2),
                                      (4, 10, 3), (5, 12, 4)])
def test_vertices_match_qhull(n, r, seed):
    rng = np.random.default_rng(seed)
    P = random_polytope(rng, n, r)
    V = P.vertices()
    W = qhull_vertices(P, np.zeros(n))
    assert same_point_sets(V, W, atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_support_equals_vertex_maximum(seed):
    rng = np.random.default_rng(seed)
    P = random_polytope(rng, 3, 7)
    D = rng.normal(size=(20, 3))
    Q = Polytope(P.H, P.h)  # fresh copy without cached vertices
    lp = np.array([Q.support(d) for d in D])
    np.testing.assert_allclose(lp, np.max(D @ P.vertices().T, axis=1),
                               atol=1e-8)


def test_degenerate_vertex_is_reported_once():
    # square pyramid: the apex lies on four facets
    H = np.array([[1, 0, 1], [-1, 0, 1], [0, 1, 1], [0, -1, 1], [0, 0, -1]],
                 float)
    P = Polytope(H, [1, 1, 1, 1, 0])
    V = P.vertices()
    assert V.shape == (5, 3)
    assert np.sum(np.all(np.isclose(V, [0, 0, 1]), axis=1)) == 1


def test_empty_and_unbounded_errors():
    E = Polytope([[1.0], [-1.0]], [-1.0, 0.0])
    assert E.is_empty()
    with pytest.raises(EmptyPolytope):
        E.vertices()
    with pytest.raises(EmptyPolytope):
        E.support([1.0])
    U = Polytope([[1.0, 0.0]], [1.0])
    assert not U.is_bounded()
    with pytest.raises(UnboundedDirection):
        U.support([-1.0, 0.0])


def test_vertex_dimension_limit():
    P = Polytope.box(-np.ones(7), np.ones(7))
    with pytest.raises(DimensionTooLarge):
        P.vertices()
    assert P.support(np.ones(7)) == pytest.approx(7.0)


def test_minimal_removes_redundant_rows():
    P = Polytope(np.vstack([np.eye(2), -np.eye(2), [[1, 1]], [[1, 0]]]),
                 [1, 1, 1, 1, 5, 2])
    M = P.minimal()
    assert M.n_rows == 4
    assert same_point_sets(M.vertices(), P.vertices())


def test_cached_vertices_are_cross_checked():
    with pytest.raises(ValueError):
        Polytope(np.vstack([np.eye(2), -np.eye(2)]), np.ones(4),
                 vertices=[[1, 1], [2, 2]])


def test_serialization_round_trip():
    P = Polytope.box([-1, 0], [2, 3])
    Q = Polytope.from_json(P.to_json())
    np.testing.assert_array_equal(P.H, Q.H)
    np.testing.assert_array_equal(P.h, Q.h)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_pontryagin_difference_property(seed):
    """x in P - S  iff  x + s in P for every vertex s of S."""
    rng = np.random.default_rng(seed)
    P = random_polytope(rng, 2, 5)
    S = Polytope.box(-0.2 * rng.uniform(size=2), 0.2 * rng.uniform(size=2))
    D = pontryagin_diff(P, S)
    Sv = S.vertices()
    for x in rng.uniform(-3, 3, size=(50, 2)):
        inside = all(P.contains(x + s, tol=0) for s in Sv)
        margin = np.min(D.slack(x))
        if abs(margin) > 1e-9:
            assert inside == (margin > 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 5.0))
def test_scale_and_translate(seed, alpha):
    rng = np.random.default_rng(seed)
    P = random_polytope(rng, 2, 4)
    s = rng.normal(size=2)
    Q = P.scale(alpha).translate(s)
    np.testing.assert_allclose(
        np.sort(Q.vertices(), axis=0),
        np.sort(alpha * P.vertices() + s, axis=0), atol=1e-7)
