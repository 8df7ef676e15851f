"""Homothetic tubes for the noise-free part of the state.

A tube is a sequence ``{s_i} + alpha_i Zbar`` of translated and scaled
copies of a base polytope ``Zbar = {z | H_z z <= 1}``. This module provides

* base sets (boxes, parallelotopes tuned for contraction),
* an explicit robust containment oracle (a linear program over ``Theta``
  for every vertex of ``Zbar``) together with its dual encoding, which is
  the form used inside the MPC problem,
* the terminal set in ``(s, alpha)`` space and its invariance check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .conic import ConicProgram, solve_conic
from .errors import EmptyPolytope, TerminalSetEmpty
from .model import D_map
from .polytope import Polytope

# ----------------------------------------------------------------------------
# base sets
# ----------------------------------------------------------------------------


def parallelotope(T) -> Polytope:
    """``{T y | ||y||_inf <= 1}`` in unit-offset H-representation."""
    T = np.atleast_2d(np.asarray(T, dtype=float))
    n = T.shape[0]
    Ti = np.linalg.inv(T)
    corners = np.array(np.meshgrid(*[[-1.0, 1.0]] * n, indexing="ij")
                       ).reshape(n, -1).T
    return Polytope(np.vstack([Ti, -Ti]), np.ones(2 * n), vertices=corners @ T.T)


def box_base_set(half_widths) -> Polytope:
    """Axis-aligned box ``|z_i| <= half_widths[i]`` with unit offsets."""
    return parallelotope(np.diag(np.asarray(half_widths, dtype=float)))


def contraction_factor(Zbar: Polytope, A_list) -> float:
    """Smallest ``lam`` with ``A_j Zbar subset lam Zbar`` for all ``j``."""
    V = Zbar.vertices()
    return float(max(np.max(Zbar.H @ A @ V.T) for A in A_list))


def optimized_parallelotope(A_list, restarts=30, seed=0) -> Polytope:
    """Parallelotope base set with a small common contraction factor.

    Minimizes ``max_j ||T^-1 A_j T||_inf`` over invertible ``T`` with
    Nelder-Mead from ``restarts`` random starting points, then scales
    ``T`` to unit determinant magnitude. The objective is nonsmooth, so
    the result is a good base set rather than a certified optimum; use
    :func:`contraction_factor` to read off the achieved value.
    """
    A_list = [np.asarray(A, dtype=float) for A in A_list]
    n = A_list[0].shape[0]
    rng = np.random.default_rng(seed)

    def cost(t):
        T = t.reshape(n, n)
        if abs(np.linalg.det(T)) < 1e-8:
            return 1e3
        Ti = np.linalg.inv(T)
        return max(np.abs(Ti @ A @ T).sum(axis=1).max() for A in A_list)

    best, best_t = np.inf, np.eye(n).reshape(-1)
    starts = [np.eye(n).reshape(-1)] + [rng.normal(size=n * n)
                                        for _ in range(restarts)]
    for t0 in starts:
        res = minimize(cost, t0, method="Nelder-Mead",
                       options={"maxiter": 4000 * n, "xatol": 1e-10,
                                "fatol": 1e-12})
        if res.fun < best:
            best, best_t = res.fun, res.x
    T = best_t.reshape(n, n)
    T = T / abs(np.linalg.det(T)) ** (1.0 / n)
    return parallelotope(T)


# ----------------------------------------------------------------------------
# tube containers
# ----------------------------------------------------------------------------

@dataclass
class HomotheticTube:
    """Sets ``{s_i} + alpha_i Zbar`` for ``i = 0..N``."""

    base: Polytope
    centers: np.ndarray
    scalings: np.ndarray

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        self.scalings = np.asarray(self.scalings, dtype=float).reshape(-1)
        if np.any(self.scalings < -1e-9):
            raise ValueError("tube scalings must be nonnegative")

    def contains(self, i, x, tol=1e-7) -> bool:
        """``H_z (x - s_i) <= alpha_i + tol`` row-wise."""
        return bool(np.all(self.base.H @ (np.asarray(x) - self.centers[i])
                           <= self.scalings[i] + tol))

    def margin(self, i, x) -> float:
        """Largest facet excess ``max_r H_z,r (x - s_i) - alpha_i``."""
        return float(np.max(self.base.H @ (np.asarray(x) - self.centers[i]))
                     - self.scalings[i])


@dataclass
class ContainmentDualData:
    """Dual certificates of robust containment for one tube transition.

    Attributes
    ----------
    D : ndarray, shape (v1, n, p)
        Parametric sensitivity at every base-set vertex.
    d : ndarray, shape (v1, n)
        Nominal (``theta = 0``) image minus the next center.
    Lambda : ndarray, shape (v1, r, q)
        Nonnegative multipliers with ``H_z D_j = Lambda_j H_theta``.
    """

    D: np.ndarray
    d: np.ndarray
    Lambda: np.ndarray

    def stationarity_residual(self, Hz, Htheta) -> float:
        return float(max(np.max(np.abs(Hz @ D - L @ Htheta), initial=0.0)
                         for D, L in zip(self.D, self.Lambda)))


def _transition_terms(Zi, v, Znext, sys, K, Zbar, offset):
    s, alpha = np.asarray(Zi[0], dtype=float), float(Zi[1])
    s_next = np.asarray(Znext[0], dtype=float)
    v = np.asarray(v, dtype=float).reshape(-1)
    K = np.atleast_2d(K)
    off = np.zeros(sys.n) if offset is None else np.asarray(offset, float)
    A0, B0 = sys.A_list[0], sys.B_list[0]
    Ds, ds = [], []
    for zj in Zbar.vertices():
        x = s + alpha * zj
        u = K @ x + v
        Ds.append(D_map(x, u, sys))
        ds.append(A0 @ x + B0 @ u + off - s_next)
    return np.array(Ds), np.array(ds)


def containment_margin(Zi, v, Znext, sys, K, Zbar, offset=None) -> float:
    """``max_{theta, j, r} H_z,r (A(theta) x_j + B(theta) u_j + c - s+) - alpha+``.

    Nonpositive iff the image of ``{s} + alpha Zbar`` under the closed loop
    with input offset ``v`` lies in ``{s+} + alpha+ Zbar`` for every
    ``theta in Theta``. The maximum over ``Theta`` is taken row by row
    with :meth:`Polytope.support` (a linear program).
    """
    alpha_next = float(Znext[1])
    Ds, ds = _transition_terms(Zi, v, Znext, sys, K, Zbar, offset)
    Hz = Zbar.H
    worst = -np.inf
    for D, d in zip(Ds, ds):
        HD = Hz @ D
        Hd = Hz @ d
        for r in range(Hz.shape[0]):
            val = sys.Theta.support(HD[r]) + Hd[r] - alpha_next
            worst = max(worst, val)
    return float(worst)


def containment_check(Zi, v, Znext, sys, K, Zbar, offset=None, tol=1e-9
                      ) -> bool:
    """Robust containment decided by the explicit primal LPs."""
    return containment_margin(Zi, v, Znext, sys, K, Zbar, offset) <= tol


def containment_dual(Zi, v, Znext, sys, K, Zbar, offset=None, tol=1e-9):
    """Search for multipliers certifying containment (the dual encoding).

    Solves the feasibility problem ``Lambda_j >= 0``,
    ``H_z D_j = Lambda_j H_theta``,
    ``Lambda_j h_theta + H_z d_j <= (alpha+ + tol) 1`` for every base
    vertex ``j`` with Clarabel.

    Returns
    -------
    ContainmentDualData or None
        ``None`` when no certificate exists.
    """
    alpha_next = float(Znext[1])
    Ds, ds = _transition_terms(Zi, v, Znext, sys, K, Zbar, offset)
    Hz, Ht, ht = Zbar.H, sys.Theta.H, sys.Theta.h
    r, q = Hz.shape[0], Ht.shape[0]
    prog = ConicProgram()
    lams = []
    for D, d in zip(Ds, ds):
        L = prog.var((r, q))
        lams.append(L)
        prog.add_eq(L @ Ht, Hz @ D)
        prog.add_le(L @ ht.reshape(-1, 1), (alpha_next + tol)
                    - (Hz @ d).reshape(-1, 1))
        prog.add_ge(L, 0.0)
    prog.minimize(np.zeros(prog.n))
    sol = solve_conic(prog)
    if not sol.ok:
        return None
    Lam = np.array([np.maximum(L.value(sol.x), 0.0) for L in lams])
    return ContainmentDualData(Ds, ds, Lam)


# ----------------------------------------------------------------------------
# terminal set
# ----------------------------------------------------------------------------

@dataclass
class TerminalSet:
    """Terminal set ``{(s, alpha) | H_T (s, alpha) <= h_T}``.

    The representation is a general polytope in ``R^{n+1}``: its offsets
    are not normalized because the row ``-alpha <= 0`` has offset zero.

    Attributes
    ----------
    polytope : Polytope
    theta_c : ndarray
        Parameter used by the candidate center map.
    center_offset : ndarray
        Constant added to the successor center (center of the mean range).
    mean_vertices : ndarray
        Corners of the range of the deterministic disturbance.
    iterations : int
    converged : bool
    """

    polytope: Polytope
    theta_c: np.ndarray
    center_offset: np.ndarray
    mean_vertices: np.ndarray
    iterations: int = 0
    converged: bool = True
    info: dict = field(default_factory=dict)

    @property
    def H(self):
        return self.polytope.H

    @property
    def h(self):
        return self.polytope.h

    def contains(self, s, alpha, tol=1e-9) -> bool:
        return self.polytope.contains(np.append(s, alpha), tol)

    def to_dict(self) -> dict:
        return {**self.polytope.to_dict(), "dim": self.polytope.dim,
                "theta_c": self.theta_c.tolist(),
                "center_offset": self.center_offset.tolist(),
                "mean_vertices": self.mean_vertices.tolist(),
                "iterations": self.iterations, "converged": self.converged}

    @classmethod
    def from_dict(cls, d) -> "TerminalSet":
        return cls(Polytope.from_dict(d), np.asarray(d["theta_c"], float),
                   np.asarray(d["center_offset"], float),
                   np.asarray(d["mean_vertices"], float),
                   int(d.get("iterations", 0)), bool(d.get("converged", True)))


def _scaling_terms(sys, K, Zbar, M, mean_vertices, center_offset):
    """Affine functions ``a_i(s, alpha) = g_i^T (s, alpha) + c_i`` whose
    maximum is the smallest covering scaling for the successor ``M s + c``."""
    Hz = Zbar.H
    rows, consts = [], []
    for Acl in sys.vertex_closed_loops(K):
        Gs = Hz @ (Acl - M)                 # coefficient of s
        for zj in Zbar.vertices():
            ga = Hz @ (Acl @ zj)            # coefficient of alpha
            for wv in mean_vertices:
                c = Hz @ (wv - center_offset)
                rows.append(np.hstack([Gs, ga[:, None]]))
                consts.append(c)
    G = np.vstack(rows)
    c = np.concatenate(consts)
    # drop exact duplicates
    key = np.round(np.hstack([G, c[:, None]]), 12)
    _, idx = np.unique(key, axis=0, return_index=True)
    idx = np.sort(idx)
    return G[idx], c[idx]


def stage_set(sys, K, Zbar, f_max, g_max) -> Polytope:
    """Points ``(s, alpha)``, ``alpha >= 0``, whose tube section satisfies
    the tightened state and (zero terminal input) input constraints."""
    n = sys.n
    K = np.atleast_2d(K)
    F, G = sys.F, sys.G
    fbar = Zbar.supports(F) if F.shape[0] else np.zeros(0)
    gbar = Zbar.supports(G @ K) if G.shape[0] else np.zeros(0)
    H = np.vstack([np.hstack([F, fbar[:, None]]),
                   np.hstack([G @ K, gbar[:, None]]),
                   np.append(np.zeros(n), -1.0)[None, :]])
    h = np.concatenate([1.0 - np.asarray(f_max, float),
                        1.0 - np.asarray(g_max, float), [0.0]])
    return Polytope(H, h)


def terminal_set(sys, K, Zbar, f_max, g_max, mean_vertices=None,
                 max_iter=50, tol=1e-9) -> TerminalSet:
    """Maximal invariant subset of the stage set under the candidate map.

    The candidate map sends ``(s, alpha)`` to ``s+ = A_cl(theta_c) s + c``
    with ``theta_c`` the Chebyshev center of ``Theta`` and ``c`` the center
    of the mean range, and ``alpha+`` to the smallest admissible scaling
    no less than ``max_i a_i(s, alpha)``, the covering scaling of the
    image under every ``theta``. The backward iteration
    ``Omega <- Omega cap Pre(Omega)`` eliminates ``alpha+`` exactly
    (Fourier-Motzkin on one variable) and stops when no new row cuts
    ``Omega`` or after ``max_iter`` iterations.

    Parameters
    ----------
    sys : UncertainLTISystem
    K : ndarray
    Zbar : Polytope
        Base set with unit offsets.
    f_max, g_max : ndarray
        Worst-case tightening of the state and input rows.
    mean_vertices : ndarray, optional
        Corners of the set of deterministic disturbance values the tube
        must absorb after the horizon (default: the origin only).

    Raises
    ------
    TerminalSetEmpty
    """
    n = sys.n
    K = np.atleast_2d(K)
    mean_vertices = np.zeros((1, n)) if mean_vertices is None else \
        np.atleast_2d(np.asarray(mean_vertices, dtype=float))
    center_offset = 0.5 * (mean_vertices.min(axis=0) +
                           mean_vertices.max(axis=0))
    theta_c, _ = sys.Theta.chebyshev_center()
    M = sys.A_cl(theta_c, K)
    G, c = _scaling_terms(sys, K, Zbar, M, mean_vertices, center_offset)

    omega = stage_set(sys, K, Zbar, f_max, g_max)
    if omega.is_empty():
        raise TerminalSetEmpty("the tightened stage set is empty")
    omega = omega.minimal()
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        pre = _pre_rows(omega, M, center_offset, G, c)
        try:
            V = omega.vertices()
        except EmptyPolytope as exc:
            raise TerminalSetEmpty("terminal set iteration emptied") from exc
        # rows that cut the current set
        vals = pre[0] @ V.T - pre[1][:, None]
        cutting = np.max(vals, axis=1) > tol
        if not np.any(cutting):
            converged = True
            break
        omega = Polytope(np.vstack([omega.H, pre[0][cutting]]),
                         np.concatenate([omega.h, pre[1][cutting]]))
        if omega.is_empty():
            raise TerminalSetEmpty("terminal set iteration emptied")
        omega = omega.minimal()
    if np.allclose(mean_vertices, 0.0) and \
            not omega.contains(np.zeros(n + 1), 1e-9):
        raise TerminalSetEmpty("terminal set does not contain the origin")
    return TerminalSet(omega, np.atleast_1d(theta_c), center_offset,
                       mean_vertices, it, converged)


def _pre_rows(omega, M, c0, G, c):
    """Rows of ``{y | exists a' >= G y + c, (M s + c0, a') in omega}``."""
    n = M.shape[0]
    Hs, Ha, h = omega.H[:, :n], omega.H[:, n], omega.h
    Ms = np.hstack([Hs @ M, np.zeros((Hs.shape[0], 1))])
    rhs = h - Hs @ c0
    rows, offs = [], []
    zero = np.abs(Ha) <= 1e-14
    rows.append(Ms[zero])
    offs.append(rhs[zero])
    up = np.flatnonzero(Ha > 1e-14)      # a' <= (rhs - Ms y) / Ha
    lo = np.flatnonzero(Ha < -1e-14)     # a' >= (rhs - Ms y) / Ha
    # lower bounds on a': G y + c, and (Ms y - rhs) / |Ha|
    L_coef = [G] + [(Ms[i] / -Ha[i])[None, :] for i in lo]
    L_const = [c] + [np.array([-rhs[i] / -Ha[i]]) for i in lo]
    L_coef = np.vstack(L_coef)
    L_const = np.concatenate(L_const)
    for i in up:
        U_coef = -Ms[i] / Ha[i]
        U_const = rhs[i] / Ha[i]
        # L_coef y + L_const <= U_coef y + U_const
        rows.append(L_coef - U_coef[None, :])
        offs.append(U_const - L_const)
    H = np.vstack(rows)
    hh = np.concatenate(offs)
    return H, hh


def successor(ts: TerminalSet, sys, K, Zbar, s, alpha):
    """Candidate successor ``(s+, alpha+)`` of a terminal pair.

    Returns
    -------
    s_next : ndarray
    alpha_next : float
        Smallest value that both covers the image for every ``theta``
        and is admissible for ``ts`` (``nan`` if none exists).
    """
    n = sys.n
    M = sys.A_cl(ts.theta_c, K)
    G, c = _scaling_terms(sys, K, Zbar, M, ts.mean_vertices, ts.center_offset)
    y = np.append(np.asarray(s, float), float(alpha))
    s_next = M @ y[:n] + ts.center_offset
    lower = float(np.max(G @ y + c))
    Hs, Ha, h = ts.H[:, :n], ts.H[:, n], ts.h
    rhs = h - Hs @ s_next
    upper = np.inf
    for a, b in zip(Ha, rhs):
        if a > 1e-14:
            upper = min(upper, b / a)
        elif a < -1e-14:
            lower = max(lower, b / a)
    if lower > upper + 1e-9:
        return s_next, np.nan
    return s_next, max(lower, 0.0)


@dataclass
class InvarianceReport:
    """Outcome of :func:`terminal_invariance_check`."""

    passed: bool
    worst_residual: float
    membership_residual: float
    containment_residual: float
    n_vertices: int


def terminal_invariance_check(ts: TerminalSet, sys, K, Zbar, tol=1e-7
                              ) -> InvarianceReport:
    """Check the candidate map on every vertex of the terminal set.

    For each vertex ``(s, alpha)`` the successor from :func:`successor` must
    lie in the set (membership residual) and the image of
    ``{s} + alpha Zbar`` under every ``theta`` and every mean value must be
    covered by ``{s+} + alpha+ Zbar`` with zero input offset (containment
    residual, evaluated with the primal oracle).
    """
    n = sys.n
    V = ts.polytope.vertices()
    worst_mem = -np.inf
    worst_cont = -np.inf
    zero_v = np.zeros(sys.m)
    for y in V:
        s, alpha = y[:n], max(y[n], 0.0)
        s_next, a_next = successor(ts, sys, K, Zbar, s, alpha)
        if not np.isfinite(a_next):
            worst_mem = max(worst_mem, np.inf)
            continue
        worst_mem = max(worst_mem, float(np.max(
            ts.H @ np.append(s_next, a_next) - ts.h)))
        for wv in ts.mean_vertices:
            worst_cont = max(worst_cont, containment_margin(
                (s, alpha), zero_v, (s_next, a_next), sys, K, Zbar,
                offset=wv))
    worst = max(worst_mem, worst_cont)
    return InvarianceReport(bool(worst <= tol), float(worst),
                            float(worst_mem), float(worst_cont), len(V))
