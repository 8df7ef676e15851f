"""Convex polytopes in H-representation.

A :class:`Polytope` stores ``{x | H x <= h}`` exactly as given (rows are not
rescaled, so a constraint written as ``F x <= 1`` keeps its unit offsets).
Vertices are computed on demand with a small double-description
implementation, which is adequate for the low dimensions used by the
controllers in this package (at most :data:`MAX_VERTEX_DIM`).

Linear programs (support function, emptiness, redundancy) are delegated to
:func:`scipy.optimize.linprog` with the HiGHS backend.
"""

from __future__ import annotations

import json
from functools import cached_property

import numpy as np
from scipy.optimize import linprog

from .errors import DimensionTooLarge, EmptyPolytope, UnboundedDirection

#: Tolerance for facet activity, ray signs and deduplication.
TOL = 1e-8

#: Largest ambient dimension accepted by :meth:`Polytope.vertices`.
MAX_VERTEX_DIM = 6

_LP_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


def _lp(c, A_ub, b_ub, bounds=(None, None), A_eq=None, b_eq=None):
    return linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                   bounds=bounds, method="highs", options=_LP_OPTIONS)


class Polytope:
    """Polyhedron ``{x | H x <= h}``.

    Parameters
    ----------
    H : array_like, shape (r, n)
        Facet normals, one per row. ``r`` may be zero.
    h : array_like, shape (r,)
        Facet offsets.
    vertices : array_like, optional
        Known extreme points. They are cross-checked against ``(H, h)``:
        every point must satisfy all rows and every row must be attained
        by at least one point (otherwise a :class:`ValueError` is raised).

    Notes
    -----
    Instances are immutable: ``H`` and ``h`` are read-only copies, so the
    object can be shared between threads.
    """

    def __init__(self, H, h, vertices=None):
        H = np.array(H, dtype=float, ndmin=2)
        h = np.array(h, dtype=float).reshape(-1)
        if H.shape[0] != h.shape[0]:
            if H.size == 0 and h.size == 0:
                H = H.reshape(0, max(H.shape[-1], 0))
            else:
                raise ValueError(
                    f"H has {H.shape[0]} rows but h has {h.shape[0]} entries")
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(h))):
            raise ValueError("H and h must be finite")
        H.setflags(write=False)
        h.setflags(write=False)
        self._H = H
        self._h = h
        if vertices is not None:
            V = np.array(vertices, dtype=float, ndmin=2)
            self._check_vertices(V)
            V.setflags(write=False)
            self.__dict__["_vertices"] = V

    # ------------------------------------------------------------------ basics
    @property
    def H(self) -> np.ndarray:
        return self._H

    @property
    def h(self) -> np.ndarray:
        return self._h

    @property
    def dim(self) -> int:
        return self._H.shape[1]

    @property
    def n_rows(self) -> int:
        return self._H.shape[0]

    def __repr__(self):
        return f"Polytope(dim={self.dim}, rows={self.n_rows})"

    @classmethod
    def box(cls, lb, ub):
        """Axis-aligned box ``lb <= x <= ub``."""
        lb = np.atleast_1d(np.asarray(lb, dtype=float))
        ub = np.atleast_1d(np.asarray(ub, dtype=float))
        n = lb.size
        eye = np.eye(n)
        return cls(np.vstack([eye, -eye]), np.concatenate([ub, -lb]))

    @classmethod
    def from_vertices(cls, V):
        """Convex hull of a full-dimensional point cloud (via Qhull)."""
        from scipy.spatial import ConvexHull

        V = np.asarray(V, dtype=float)
        if V.shape[1] == 1:
            return cls(np.array([[1.0], [-1.0]]), [V.max(), -V.min()])
        hull = ConvexHull(V)
        eq = hull.equations
        H, h = eq[:, :-1], -eq[:, -1]
        # Qhull may emit several coplanar facets for the same hyperplane.
        keep = []
        for i in range(H.shape[0]):
            row = np.append(H[i], h[i])
            if not any(np.allclose(row, np.append(H[j], h[j]), atol=1e-9)
                       for j in keep):
                keep.append(i)
        return cls(H[keep], h[keep])

    def contains(self, x, tol=TOL) -> bool:
        """``True`` if ``H x <= h + tol`` holds row-wise."""
        x = np.asarray(x, dtype=float)
        return bool(np.all(self._H @ x <= self._h + tol))

    def slack(self, x) -> np.ndarray:
        """Row-wise slack ``h - H x`` (negative entries are violations)."""
        return self._h - self._H @ np.asarray(x, dtype=float)

    # --------------------------------------------------------------- LP-based
    def support(self, d) -> float:
        """Support function ``max_{x in P} d^T x``.

        Raises
        ------
        EmptyPolytope
            If the polytope is empty.
        UnboundedDirection
            If the maximum is unbounded.
        """
        d = np.asarray(d, dtype=float).reshape(-1)
        if d.shape[0] != self.dim:
            raise ValueError("direction has the wrong dimension")
        if "_vertices" in self.__dict__:
            return float(np.max(self._vertices @ d))
        if not np.any(d):
            if self.is_empty():
                raise EmptyPolytope("support of an empty polytope")
            return 0.0
        res = _lp(-d, self._H, self._h)
        if res.status == 2:
            raise EmptyPolytope("support of an empty polytope")
        if res.status == 3:
            raise UnboundedDirection(f"polytope unbounded in direction {d}")
        if res.status != 0:
            raise RuntimeError(f"support LP failed: {res.message}")
        return float(-res.fun)

    def supports(self, D) -> np.ndarray:
        """Support values for each row of ``D``."""
        D = np.atleast_2d(np.asarray(D, dtype=float))
        if "_vertices" in self.__dict__ or D.shape[0] > 2 * self.dim:
            try:
                V = self.vertices()
            except (DimensionTooLarge, UnboundedDirection):
                V = None
            if V is not None:
                return np.max(D @ V.T, axis=1)
        return np.array([self.support(d) for d in D])

    @cached_property
    def _chebyshev(self):
        n = self.dim
        norms = np.linalg.norm(self._H, axis=1)
        # maximize r subject to H x + r ||H_i|| <= h, r <= cap
        c = np.zeros(n + 1)
        c[-1] = -1.0
        A = np.hstack([self._H, norms[:, None]])
        bounds = [(None, None)] * n + [(None, 1e6)]
        res = _lp(c, A, self._h, bounds=bounds)
        if res.status != 0:
            return None, -np.inf
        return res.x[:n], float(res.x[-1])

    def chebyshev_center(self):
        """Center and radius of the largest inscribed ball (radius capped at 1e6)."""
        center, radius = self._chebyshev
        if center is None or radius < -TOL:
            raise EmptyPolytope("Chebyshev center of an empty polytope")
        return center.copy(), radius

    def is_empty(self, tol=TOL) -> bool:
        """``True`` if no point satisfies ``H x <= h + tol``."""
        if self.n_rows == 0:
            return False
        return self._chebyshev[1] < -tol

    def has_interior(self, tol=TOL) -> bool:
        return self._chebyshev[1] > tol

    def is_bounded(self) -> bool:
        """Check boundedness along all positive and negative axes."""
        if self.is_empty():
            return True
        for i in range(self.dim):
            for sgn in (1.0, -1.0):
                d = np.zeros(self.dim)
                d[i] = sgn
                try:
                    self.support(d)
                except UnboundedDirection:
                    return False
        return True

    def minimal(self, tol=1e-9) -> "Polytope":
        """Equivalent polytope with redundant rows removed."""
        if self.n_rows == 0:
            return self
        H, h = self._H, self._h
        norms = np.linalg.norm(H, axis=1)
        keep = []
        # remove zero rows that are trivially satisfied, and duplicates
        for i in range(H.shape[0]):
            if norms[i] < 1e-14:
                if h[i] < -tol:
                    keep.append(i)
                continue
            row = np.append(H[i], h[i]) / norms[i]
            if any(np.allclose(row, np.append(H[j], h[j]) / norms[j],
                               atol=1e-12) for j in keep if norms[j] > 0):
                continue
            keep.append(i)
        H, h = H[keep], h[keep]
        active = np.ones(H.shape[0], dtype=bool)
        for i in range(H.shape[0]):
            others = active.copy()
            others[i] = False
            A = np.vstack([H[others], H[i]])
            b = np.concatenate([h[others], [h[i] + 1.0]])
            res = _lp(-H[i], A, b)
            if res.status == 0 and -res.fun <= h[i] + tol * max(1.0, abs(h[i])):
                active[i] = False
        return Polytope(H[active], h[active])

    # ------------------------------------------------------------- operations
    def scale(self, alpha: float) -> "Polytope":
        """``alpha * P`` for ``alpha > 0``."""
        if alpha <= 0:
            raise ValueError("scaling factor must be positive")
        V = self.__dict__.get("_vertices")
        return Polytope(self._H, alpha * self._h,
                        None if V is None else alpha * V)

    def translate(self, s) -> "Polytope":
        """``{s} + P``."""
        s = np.asarray(s, dtype=float)
        V = self.__dict__.get("_vertices")
        return Polytope(self._H, self._h + self._H @ s,
                        None if V is None else V + s)

    def intersect(self, other: "Polytope") -> "Polytope":
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        return Polytope(np.vstack([self._H, other.H]),
                        np.concatenate([self._h, other.h]))

    def linear_preimage(self, M) -> "Polytope":
        """``{y | M y in P}``."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return Polytope(self._H @ M, self._h)

    # -------------------------------------------------------------- vertices
    def vertices(self) -> np.ndarray:
        """Extreme points as rows of an array of shape ``(n_vertices, dim)``.

        Raises
        ------
        DimensionTooLarge
            If ``dim > MAX_VERTEX_DIM``.
        EmptyPolytope
            If the polytope is empty.
        UnboundedDirection
            If the polyhedron is unbounded.
        """
        V = self.__dict__.get("_vertices")
        if V is None:
            if self.dim > MAX_VERTEX_DIM:
                raise DimensionTooLarge(
                    f"vertex enumeration limited to dimension "
                    f"{MAX_VERTEX_DIM}, got {self.dim}")
            if self.is_empty():
                raise EmptyPolytope("vertices of an empty polytope")
            V = _double_description(self._H, self._h)
            V.setflags(write=False)
            self.__dict__["_vertices"] = V
        return V

    def _check_vertices(self, V):
        if V.shape[1] != self.dim:
            raise ValueError("vertex dimension mismatch")
        scale = 1.0 + np.abs(self._h)
        viol = self._H @ V.T - self._h[:, None]
        if np.any(viol > 1e-7 * scale[:, None]):
            raise ValueError("a cached vertex violates the H-representation")
        if self.n_rows and np.any(np.max(viol, axis=1) < -1e-7 * scale):
            raise ValueError("cached vertices do not attain every facet")

    # ---------------------------------------------------------- serialization
    def to_dict(self) -> dict:
        d = {"H": self._H.tolist(), "h": self._h.tolist()}
        # vertices supplied at construction are kept so that a round trip
        # reproduces every derived quantity bit for bit
        if "_vertices" in self.__dict__:
            d["vertices"] = self.__dict__["_vertices"].tolist()
        return d

    @classmethod
    def from_dict(cls, data) -> "Polytope":
        H = np.asarray(data["H"], dtype=float)
        h = np.asarray(data["h"], dtype=float)
        if H.ndim == 1:
            H = H.reshape(h.size, -1) if h.size else H.reshape(0, H.size)
        if H.size == 0 and "dim" in data:
            H = np.zeros((0, int(data["dim"])))
        return cls(H, h, vertices=data.get("vertices"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text) -> "Polytope":
        return cls.from_dict(json.loads(text))


def pontryagin_diff(P: Polytope, S: Polytope) -> Polytope:
    """Row-wise Pontryagin difference ``P - S = {x | x + s in P, all s in S}``.

    The result keeps the normals of ``P`` and lowers each offset by the
    support of ``S`` in that direction. It may be empty; check
    :meth:`Polytope.is_empty`.
    """
    if P.dim != S.dim:
        raise ValueError("dimension mismatch")
    if P.n_rows == 0:
        return P
    return Polytope(P.H, P.h - S.supports(P.H))


# ----------------------------------------------------------------------------
# double description
# ----------------------------------------------------------------------------

def _double_description(H, h, tol=TOL):
    """Vertices of a bounded nonempty ``{x | Hx <= h}``.

    Works on the homogenized cone ``{(t, x) | t h - H x >= 0, t >= 0}``,
    whose extreme rays with ``t > 0`` are the vertices. Rays are built by
    the incremental Motzkin scheme with a combinatorial adjacency test.
    """
    n = H.shape[1]
    A = np.hstack([h[:, None], -H])
    A = np.vstack([A, np.eye(1, n + 1)])      # t >= 0
    norms = np.linalg.norm(A, axis=1)
    nz = norms > 1e-14
    if np.any((~nz) & (np.append(h, 1.0) < 0)):
        raise EmptyPolytope("an all-zero row with negative offset")
    A = A[nz] / norms[nz, None]
    m = A.shape[0]
    d = n + 1

    # initial simplicial cone from d linearly independent rows
    _, _, piv = _qr_pivot(A.T)
    init = list(piv[:d])
    A0 = A[init]
    if np.linalg.matrix_rank(A0, tol=1e-10) < d:
        raise UnboundedDirection("polyhedron contains a line")
    R = np.linalg.inv(A0).T            # rays as rows: A0 @ r_j = e_j
    R /= np.linalg.norm(R, axis=1, keepdims=True)
    order = init + [i for i in range(m) if i not in init]
    Z = np.ones((d, d), dtype=bool) ^ np.eye(d, dtype=bool)  # zero sets

    for idx in order[d:]:
        a = A[idx]
        vals = R @ a
        pos = vals > tol
        neg = vals < -tol
        zer = ~(pos | neg)
        new_rays, new_Z = [], []
        P_idx = np.flatnonzero(pos)
        N_idx = np.flatnonzero(neg)
        if P_idx.size and N_idx.size:
            need = d - 2
            for p in P_idx:
                common = Z[N_idx] & Z[p]
                counts = common.sum(axis=1)
                for q, cz, cnt in zip(N_idx, common, counts):
                    if cnt < need:
                        continue
                    # adjacency: no other ray has a zero set containing cz
                    sup = np.all(Z[:, cz], axis=1)
                    sup[p] = False
                    sup[q] = False
                    if np.any(sup):
                        continue
                    r = vals[p] * R[q] - vals[q] * R[p]
                    nr = np.linalg.norm(r)
                    if nr < 1e-14:
                        continue
                    new_rays.append(r / nr)
                    new_Z.append(np.append(cz, True))
        keep = ~neg
        Zk = np.hstack([Z[keep], zer[keep, None]])
        R = R[keep]
        if new_rays:
            R = np.vstack([R, np.array(new_rays)])
            Zk = np.vstack([Zk, np.array(new_Z)])
        Z = Zk
        if R.shape[0] == 0:
            raise EmptyPolytope("empty cone")

    t = R[:, 0]
    if np.any((t <= tol) & (np.linalg.norm(R[:, 1:], axis=1) > tol)):
        raise UnboundedDirection("polyhedron is unbounded")
    V = R[t > tol, 1:] / t[t > tol, None]
    if V.shape[0] == 0:
        raise EmptyPolytope("no vertices")
    return _dedupe(V)


def _qr_pivot(M):
    from scipy.linalg import qr

    return qr(M, pivoting=True, mode="economic")


def _dedupe(V, tol=1e-7):
    out = []
    for v in V:
        if not any(np.max(np.abs(v - w)) <= tol * max(1.0, np.max(np.abs(w)))
                   for w in out):
            out.append(v)
    return np.array(out)
