"""Uncertain linear systems with affine parameter dependence.

The plant is ``x+ = A(theta) x + B(theta) u + w`` with
``A(theta) = A_0 + sum_i theta_i A_i`` (same for ``B``) and ``theta`` in a
polytope ``Theta``. Because every quantity certified here is affine in
``theta`` once written in Schur-complement form, checking the vertices of
``Theta`` suffices for the whole set.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .conic import ConicProgram, bmat, solve_conic
from .errors import (ConfigError, NotQuadraticallyStable, SynthesisInfeasible,
                     TerminalWeightInfeasible)
from .polytope import Polytope

#: Minimum eigenvalue margin used by the stability and synthesis LMIs.
LMI_EPS = 1e-9


def normalize_constraints(P: Polytope, name="constraint set") -> Polytope:
    """Rescale rows of ``P`` so that every offset equals one.

    Rows with a non-positive offset cannot be normalized (the origin would
    not be an interior point) and raise :class:`ConfigError`.
    """
    if P.n_rows == 0:
        return P
    h = P.h
    if np.any(h <= 0):
        raise ConfigError(f"{name}: the origin must satisfy every row strictly")
    if not np.allclose(h, 1.0, rtol=0, atol=1e-12):
        warnings.warn(f"{name}: rows rescaled to unit offsets", stacklevel=2)
    return Polytope(P.H / h[:, None], np.ones_like(h))


@dataclass(frozen=True)
class UncertainLTISystem:
    """Affinely parameterized linear system with polytopic constraints.

    Parameters
    ----------
    A_list, B_list : sequence of ndarray
        ``[A_0, ..., A_p]`` and ``[B_0, ..., B_p]``.
    Theta : Polytope
        Bounded, nonempty uncertainty set in ``R^p``.
    X, U : Polytope
        State and input constraint sets ``F x <= 1`` and ``G u <= 1``.
        Offsets are normalized to one on construction.
    p_x, p_u : float
        Chance-constraint probability levels.
    """

    A_list: tuple
    B_list: tuple
    Theta: Polytope
    X: Polytope
    U: Polytope
    p_x: float = 0.9
    p_u: float = 0.9
    _theta_vertices: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        A_list = tuple(np.array(a, dtype=float, ndmin=2) for a in self.A_list)
        B_list = tuple(np.array(b, dtype=float, ndmin=2) for b in self.B_list)
        object.__setattr__(self, "A_list", A_list)
        object.__setattr__(self, "B_list", B_list)
        n = A_list[0].shape[0]
        m = B_list[0].shape[1]
        if len(A_list) != len(B_list):
            raise ConfigError("A_list and B_list must have the same length")
        for a in A_list:
            if a.shape != (n, n):
                raise ConfigError("all A_i must be n x n")
        for b in B_list:
            if b.shape != (n, m):
                raise ConfigError("all B_i must be n x m")
        if self.Theta.dim != len(A_list) - 1:
            raise ConfigError("Theta dimension must equal the number of "
                              "parameter matrices")
        if self.X.dim != n or self.U.dim != m:
            raise ConfigError("constraint set dimensions do not match")
        for p in (self.p_x, self.p_u):
            if not 0.0 < p < 1.0:
                raise ConfigError("probability levels must lie in (0, 1)")
        object.__setattr__(self, "X", normalize_constraints(self.X, "X"))
        object.__setattr__(self, "U", normalize_constraints(self.U, "U"))
        if self.Theta.is_empty() or not self.Theta.is_bounded():
            raise ConfigError("Theta must be nonempty and bounded")
        object.__setattr__(self, "_theta_vertices", self.Theta.vertices())

    # --------------------------------------------------------------- sizes
    @property
    def n(self) -> int:
        return self.A_list[0].shape[0]

    @property
    def m(self) -> int:
        return self.B_list[0].shape[1]

    @property
    def p(self) -> int:
        return len(self.A_list) - 1

    @property
    def F(self) -> np.ndarray:
        return self.X.H

    @property
    def G(self) -> np.ndarray:
        return self.U.H

    @property
    def theta_vertices(self) -> np.ndarray:
        return self._theta_vertices

    # ----------------------------------------------------------- matrices
    def A(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        out = self.A_list[0].copy()
        for t, a in zip(theta, self.A_list[1:]):
            out += t * a
        return out

    def B(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        out = self.B_list[0].copy()
        for t, b in zip(theta, self.B_list[1:]):
            out += t * b
        return out

    def A_cl(self, theta, K) -> np.ndarray:
        """Closed-loop matrix ``A(theta) + B(theta) K``."""
        return self.A(theta) + self.B(theta) @ np.atleast_2d(K)

    def vertex_closed_loops(self, K) -> list:
        return [self.A_cl(t, K) for t in self.theta_vertices]

    def with_theta(self, Theta: Polytope) -> "UncertainLTISystem":
        """Copy of the system with a different uncertainty set."""
        return UncertainLTISystem(self.A_list, self.B_list, Theta, self.X,
                                  self.U, self.p_x, self.p_u)

    def with_levels(self, p_x=None, p_u=None) -> "UncertainLTISystem":
        return UncertainLTISystem(self.A_list, self.B_list, self.Theta,
                                  self.X, self.U,
                                  self.p_x if p_x is None else p_x,
                                  self.p_u if p_u is None else p_u)

    def nominal(self, theta_bar) -> "UncertainLTISystem":
        """The same system with ``Theta`` collapsed to ``{theta_bar}``."""
        theta_bar = np.atleast_1d(np.asarray(theta_bar, dtype=float))
        p = self.p
        H = np.vstack([np.eye(p), -np.eye(p)])
        h = np.concatenate([theta_bar, -theta_bar])
        return self.with_theta(Polytope(H, h, vertices=theta_bar[None, :]))

    # ------------------------------------------------------- serialization
    def to_dict(self) -> dict:
        return {
            "A": [a.tolist() for a in self.A_list],
            "B": [b.tolist() for b in self.B_list],
            "Theta": self.Theta.to_dict(),
            "X": {**self.X.to_dict(), "dim": self.n},
            "U": {**self.U.to_dict(), "dim": self.m},
            "p_x": self.p_x,
            "p_u": self.p_u,
        }

    @classmethod
    def from_dict(cls, d) -> "UncertainLTISystem":
        try:
            A = [np.array(a, dtype=float, ndmin=2) for a in d["A"]]
            B = [np.array(b, dtype=float, ndmin=2) for b in d["B"]]
            n, m = A[0].shape[0], B[0].shape[1]
            X = Polytope.from_dict({"dim": n, **d["X"]})
            U = Polytope.from_dict({"dim": m, **d.get("U", {"H": [], "h": []})})
            Theta = Polytope.from_dict(d["Theta"])
            return cls(A, B, Theta, X, U, float(d.get("p_x", 0.9)),
                       float(d.get("p_u", d.get("p_x", 0.9))))
        except (KeyError, IndexError, TypeError) as exc:
            raise ConfigError(f"invalid system description: {exc}") from exc


@dataclass(frozen=True)
class FeedbackGain:
    """Stabilizing gain with its common Lyapunov certificate.

    Attributes
    ----------
    K : ndarray, shape (m, n)
    P_lyap : ndarray, shape (n, n)
        ``A_cl(theta_j)^T P A_cl(theta_j) - P < 0`` at every vertex.
    """

    K: np.ndarray
    P_lyap: np.ndarray


def _schur_margin(P, Acl):
    M = np.block([[P, Acl.T @ P], [P @ Acl, P]])
    return np.linalg.eigvalsh(0.5 * (M + M.T))[0]


def verify_gain(sys: UncertainLTISystem, K) -> FeedbackGain:
    """Certify robust quadratic stability of ``A_cl(theta) = A + B K``.

    Solves ``[P, A_j^T P; P A_j, P] >= I`` at every vertex closed loop
    (the LMI is homogeneous, so the unit margin only fixes the scale), with
    minimum trace as tie-break, then rescales ``P`` to unit trace.

    Raises
    ------
    NotQuadraticallyStable
        If no common certificate exists.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape != (sys.m, sys.n):
        raise ValueError(f"K must have shape {(sys.m, sys.n)}")
    n = sys.n
    prog = ConicProgram()
    P = prog.sym_var(n)
    for Acl in sys.vertex_closed_loops(K):
        prog.add_psd(bmat([[P, Acl.T @ P], [P @ Acl, P]]) - np.eye(2 * n))
    rows = np.arange(n) * n + np.arange(n)
    prog.minimize(np.asarray(P.coef[rows].sum(axis=0)).reshape(-1))
    sol = solve_conic(prog, settings={"max_iter": 100})
    if not sol.ok:
        raise NotQuadraticallyStable(
            f"no common Lyapunov function ({sol.status})")
    Pv = P.value(sol.x)
    Pv = 0.5 * (Pv + Pv.T)
    Pv /= np.trace(Pv)
    for Acl in sys.vertex_closed_loops(K):
        if _schur_margin(Pv, Acl) < LMI_EPS:
            raise NotQuadraticallyStable("certificate failed the post-check")
    return FeedbackGain(K, Pv)


def synthesize_gain(sys: UncertainLTISystem, eps=1e-6) -> FeedbackGain:
    """Robustly stabilizing gain via ``Y = P^{-1}`` and ``L = K Y``.

    Solves ``[Y, (A_j Y + B_j L)^T; A_j Y + B_j L, Y] >= eps I`` at every
    vertex ``j`` with ``tr Y = 1``; the returned gain is re-certified by
    :func:`verify_gain`.

    Raises
    ------
    SynthesisInfeasible
    """
    n, m = sys.n, sys.m
    prog = ConicProgram()
    Y = prog.sym_var(n)
    L = prog.var((m, n))
    for theta in sys.theta_vertices:
        A, B = sys.A(theta), sys.B(theta)
        M = A @ Y + B @ L
        prog.add_psd(bmat([[Y, M.T], [M, Y]]), eps=eps)
    rows = np.arange(n) * n + np.arange(n)
    tr = np.asarray(Y.coef[rows].sum(axis=0)).reshape(-1)
    prog.add_rows("zero", tr[None, :], [1.0])
    prog.minimize(np.zeros(prog.n))
    sol = solve_conic(prog)
    if not sol.ok:
        raise SynthesisInfeasible(f"gain synthesis LMI: {sol.status}")
    Yv = Y.value(sol.x)
    Lv = L.value(sol.x)
    K = Lv @ np.linalg.inv(0.5 * (Yv + Yv.T))
    try:
        return verify_gain(sys, K)
    except NotQuadraticallyStable as exc:
        raise SynthesisInfeasible("synthesized gain failed verification") \
            from exc


def lqr_gain(A, B, Q, R) -> np.ndarray:
    """Discrete-time LQR gain ``K`` for ``u = K x`` (note the sign)."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    Q = np.atleast_2d(Q)
    R = np.atleast_2d(R)
    X = scipy.linalg.solve_discrete_are(A, B, Q, R)
    return -np.linalg.solve(R + B.T @ X @ B, B.T @ X @ A)


def terminal_weight(sys: UncertainLTISystem, K, Q, R) -> np.ndarray:
    """Minimum-trace ``P`` with ``A_j^T P A_j - P <= -(Q + K^T R K)``.

    The condition is imposed at every vertex closed loop ``A_j`` in the
    Schur form ``[P - Qbar, A_j^T P; P A_j, P] >= 0``, which is affine in
    ``theta``.

    Raises
    ------
    TerminalWeightInfeasible
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = sys.n
    Qbar = Q + K.T @ R @ K
    prog = ConicProgram()
    P = prog.sym_var(n)
    for Acl in sys.vertex_closed_loops(K):
        prog.add_psd(bmat([[P - Qbar, Acl.T @ P], [P @ Acl, P]]))
    prog.add_psd(P, eps=LMI_EPS)
    rows = np.arange(n) * n + np.arange(n)
    prog.minimize(np.asarray(P.coef[rows].sum(axis=0)).reshape(-1))
    sol = solve_conic(prog)
    if not sol.ok:
        raise TerminalWeightInfeasible(f"terminal weight LMI: {sol.status}")
    Pv = P.value(sol.x)
    Pv = 0.5 * (Pv + Pv.T)
    # Make the decrease condition hold exactly despite solver tolerance by
    # growing P along the (unique) Lyapunov direction if needed.
    for _ in range(50):
        worst = max(np.linalg.eigvalsh(A.T @ Pv @ A - Pv + Qbar)[-1]
                    for A in sys.vertex_closed_loops(K))
        if worst <= 0.0:
            break
        Pv = Pv + (worst + 1e-12) * _lyap_bump(sys, K)
    return Pv


def _lyap_bump(sys, K):
    """``Pi`` with ``A_j^T Pi A_j - Pi <= -I`` at all vertices (a unit step)."""
    n = sys.n
    prog = ConicProgram()
    P = prog.sym_var(n)
    for Acl in sys.vertex_closed_loops(K):
        prog.add_psd(bmat([[P - np.eye(n), Acl.T @ P], [P @ Acl, P]]))
    rows = np.arange(n) * n + np.arange(n)
    prog.minimize(np.asarray(P.coef[rows].sum(axis=0)).reshape(-1))
    sol = solve_conic(prog).require_optimal("Lyapunov bump")
    Pv = P.value(sol.x)
    return 0.5 * (Pv + Pv.T)


def D_map(a, b, sys: UncertainLTISystem) -> np.ndarray:
    """Parametric sensitivity ``[A_1 a + B_1 b, ..., A_p a + B_p b]``.

    Satisfies ``A(t) a + B(t) b = A(t') a + B(t') b + D(a, b) (t - t')``.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    cols = [Ai @ a + Bi @ b for Ai, Bi in zip(sys.A_list[1:], sys.B_list[1:])]
    if not cols:
        return np.zeros((sys.n, 0))
    return np.column_stack(cols)
