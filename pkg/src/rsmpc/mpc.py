"""Receding-horizon tube MPC with robust containment and indirect feedback.

At every step the controller solves one convex quadratic program over

* input offsets ``v_0..v_{N-1}`` (applied input ``u = K x + v``),
* tube centers ``s_0..s_N`` and scalings ``alpha_0..alpha_N``,
* nonnegative multipliers ``Lambda`` certifying robust containment
  ``A_cl(theta) ({s_i} + alpha_i Zbar) + B(theta) v_i`` in
  ``{s_{i+1}} + alpha_{i+1} Zbar`` for every ``theta``,
* predicted states ``x_0..x_N`` under the current estimate ``theta_bar``,
  which only feed the cost.

The measured state enters exclusively through ``x_0 = x_true`` (indirect
feedback); the tube starts from the previous solution shifted by one step,
so recursive feasibility does not depend on the realized noise.

The sparse constraint matrix depends on ``theta_bar`` only through the
prediction rows. It is built once per estimate, and between steps only the
right-hand side changes, which lets the Clarabel solver object be reused.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .conic import (INFEASIBLE, NUMERICAL_FAILURE, OPTIMAL, ConicProgram,
                    _clarabel_cones, _CLARABEL_STATUS, clarabel_settings)
from .errors import (EstimateOutsideTheta, Infeasible, MissingPrevSolution,
                     NumericalFailure)
from .tube import HomotheticTube, successor


@dataclass
class MPCConfig:
    """Controller data.

    Attributes
    ----------
    N : int
        Prediction horizon.
    Q, R : ndarray
        Quadratic stage weights on the state and on ``u = K x + v``.
    P : ndarray
        Terminal weight.
    K : ndarray
        Prestabilizing gain.
    Zbar : Polytope
        Tube base set (unit offsets).
    tightening : TighteningTable
        Offsets ``f_k``, ``g_k`` indexed by absolute time.
    terminal : TerminalSet
    mean : ndarray, shape (T_mean, n), optional
        Deterministic disturbance sequence indexed by absolute time (held
        at its last value beyond the end). Zero if omitted.
    input_l1 : float
        Weight of an additional ``||u + u_offset||_1`` stage cost.
    input_offset : ndarray, shape (T_mean, m), optional
        Offset added to ``u`` inside the 1-norm (absolute input level).
    tube_weight : float
        Weight of a linear ``sum_i alpha_i`` term. The tube scalings do not
        enter the expected cost, so the optimizer is not unique in them; a
        small positive weight selects the tightest tube among (nearly)
        optimal solutions instead of an arbitrary interior point, which
        makes the tube handed to the next step reproducible.
    project_estimate : bool
        Project ``theta_bar`` onto ``Theta`` instead of raising
        :class:`EstimateOutsideTheta`.
    solver : dict
        Clarabel settings (see :func:`clarabel_settings`).
    feas_tol : float
        Constraint violation tolerated in a returned optimal solution.
    """

    N: int
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    K: np.ndarray
    Zbar: object
    tightening: object
    terminal: object
    mean: np.ndarray | None = None
    input_l1: float = 0.0
    input_offset: np.ndarray | None = None
    tube_weight: float = 0.0
    project_estimate: bool = True
    solver: dict = field(default_factory=dict)
    feas_tol: float = 1e-6

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon must be at least one")
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.K = np.atleast_2d(np.asarray(self.K, dtype=float))
        if np.linalg.eigvalsh(self.Q)[0] < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        rmin = np.linalg.eigvalsh(self.R)[0]
        if rmin <= 0 and not (self.input_l1 > 0 and rmin >= -1e-12):
            raise ValueError("R must be positive definite")
        if self.tube_weight < 0:
            raise ValueError("tube_weight must be nonnegative")


@dataclass
class MPCStepSolution:
    """Optimal (or failed) solution of one MPC step.

    Arrays are ``None`` unless ``status == "Optimal"``.
    """

    status: str
    k: int
    theta_bar: np.ndarray
    v: np.ndarray | None = None
    s: np.ndarray | None = None
    alpha: np.ndarray | None = None
    Lambda: np.ndarray | None = None
    x: np.ndarray | None = None
    u: np.ndarray | None = None
    objective: float = np.nan
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def tube(self, Zbar) -> HomotheticTube:
        return HomotheticTube(Zbar, self.s, self.alpha)

    @property
    def u0(self) -> np.ndarray:
        """Input applied at the current step."""
        return self.u[0]


@dataclass
class Candidate:
    """Shifted solution used as the recursive-feasibility witness."""

    v: np.ndarray
    s: np.ndarray
    alpha: np.ndarray


class _Layout:
    """Index bookkeeping for the decision vector."""

    def __init__(self, n, m, N, v1, r, q, l1):
        self.n, self.m, self.N = n, m, N
        self.v1, self.r, self.q = v1, r, q
        off = 0
        self.v0 = off
        off += N * m
        self.s0 = off
        off += (N + 1) * n
        self.a0 = off
        off += N + 1
        self.L0 = off
        off += N * v1 * r * q
        self.x0 = off
        off += (N + 1) * n
        self.t0 = off
        if l1:
            off += N * m
        self.size = off

    def v(self, i):
        return self.v0 + i * self.m + np.arange(self.m)

    def s(self, i):
        return self.s0 + i * self.n + np.arange(self.n)

    def a(self, i):
        return self.a0 + i

    def L(self, i, j):
        base = self.L0 + (i * self.v1 + j) * self.r * self.q
        return base + np.arange(self.r * self.q).reshape(self.r, self.q)

    def x(self, i):
        return self.x0 + i * self.n + np.arange(self.n)

    def t(self, i):
        return self.t0 + i * self.m + np.arange(self.m)


class _Rows:
    """Accumulates COO triplets and right-hand sides for one cone."""

    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []
        self.b = []
        self.count = 0
        self.slots = {}

    def add(self, coef_blocks, rhs, slot=None):
        """Add ``len(rhs)`` rows; ``coef_blocks`` is a list of
        ``(column_indices, matrix)`` with matrix shape (len(rhs), len(cols))."""
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        k = rhs.size
        for cols, M in coef_blocks:
            M = np.atleast_2d(np.asarray(M, dtype=float))
            cols = np.atleast_1d(cols)
            rr, cc = np.nonzero(M)
            self.rows.append(self.count + rr)
            self.cols.append(cols[cc])
            self.vals.append(M[rr, cc])
        start = self.count
        self.b.append(rhs)
        self.count += k
        if slot is not None:
            self.slots.setdefault(slot, []).append(np.arange(start, start + k))
        return start

    def matrix(self, ncols):
        if not self.rows:
            return sp.csc_matrix((self.count, ncols)), np.zeros(self.count)
        A = sp.csc_matrix((np.concatenate(self.vals),
                           (np.concatenate(self.rows),
                            np.concatenate(self.cols))),
                          shape=(self.count, ncols))
        return A, np.concatenate(self.b) if self.b else np.zeros(0)


class RobustStochasticMPC:
    """Tube MPC controller for an :class:`UncertainLTISystem`.

    Parameters
    ----------
    sys : UncertainLTISystem
        Model with uncertainty set ``Theta`` (a singleton gives the
        mismatch-unaware stochastic MPC baseline).
    cfg : MPCConfig
    """

    def __init__(self, sys, cfg: MPCConfig):
        self.sys = sys
        self.cfg = cfg
        n, m, N = sys.n, sys.m, cfg.N
        Zb = cfg.Zbar
        self.Zv = Zb.vertices()
        self.Hz = Zb.H
        self.Ht, self.ht = sys.Theta.H, sys.Theta.h
        self.lay = _Layout(n, m, N, self.Zv.shape[0], self.Hz.shape[0],
                           self.Ht.shape[0], cfg.input_l1 > 0)
        K = cfg.K
        self.fbar = Zb.supports(sys.F) if sys.F.shape[0] else np.zeros(0)
        self.gbar = Zb.supports(sys.G @ K) if sys.G.shape[0] else np.zeros(0)
        self._cache_theta = None
        self._solver = None
        self._static = self._build_static()

    # ------------------------------------------------------------ assembly
    def _mean(self, k):
        if self.cfg.mean is None:
            return np.zeros(self.sys.n)
        mu = self.cfg.mean
        return mu[min(k, mu.shape[0] - 1)]

    def _uoff(self, k):
        if self.cfg.input_offset is None:
            return np.zeros(self.sys.m)
        uo = self.cfg.input_offset
        return uo[min(k, uo.shape[0] - 1)]

    def _build_static(self):
        """Rows that do not depend on ``theta_bar`` (rhs filled per step)."""
        sys, cfg, lay = self.sys, self.cfg, self.lay
        n, m, N = sys.n, sys.m, cfg.N
        K = cfg.K
        Hz, Ht, ht = self.Hz, self.Ht, self.ht
        r, q, p = Hz.shape[0], Ht.shape[0], sys.p
        eq, ineq = _Rows(), _Rows()
        In = np.eye(n)
        # tube initialization s_0, alpha_0
        eq.add([(lay.s(0), In)], np.zeros(n), slot="s_init")
        eq.add([(np.array([lay.a(0)]), np.ones((1, 1)))], [0.0], slot="a_init")
        # stationarity H_z D_j = Lambda_j H_theta
        A_l = [sys.A_list[l] + sys.B_list[l] @ K for l in range(1, p + 1)]
        B_l = [sys.B_list[l] for l in range(1, p + 1)]
        for i in range(N):
            for j, zj in enumerate(self.Zv):
                Lidx = lay.L(i, j)
                for l in range(p):
                    HA = Hz @ A_l[l]
                    blocks = [(lay.s(i), HA),
                              (np.array([lay.a(i)]), (HA @ zj)[:, None]),
                              (lay.v(i), Hz @ B_l[l])]
                    # - sum_c Lambda[rho, c] Ht[c, l]
                    cols = Lidx.reshape(-1)
                    M = np.zeros((r, r * q))
                    for rho in range(r):
                        M[rho, rho * q:(rho + 1) * q] = -Ht[:, l]
                    blocks.append((cols, M))
                    eq.add(blocks, np.zeros(r))
        # containment offsets: Lambda h + H_z d <= alpha_{i+1}
        A0cl = sys.A_list[0] + sys.B_list[0] @ K
        HA0 = Hz @ A0cl
        HB0 = Hz @ sys.B_list[0]
        for i in range(N):
            for j, zj in enumerate(self.Zv):
                cols = lay.L(i, j).reshape(-1)
                M = np.zeros((r, r * q))
                for rho in range(r):
                    M[rho, rho * q:(rho + 1) * q] = ht
                ineq.add([(cols, M), (lay.s(i), HA0),
                          (np.array([lay.a(i)]), (HA0 @ zj)[:, None]),
                          (lay.v(i), HB0), (lay.s(i + 1), -Hz),
                          (np.array([lay.a(i + 1)]), -np.ones((r, 1)))],
                         np.zeros(r), slot=("mean", i))
        # multipliers nonnegative
        nL = N * self.Zv.shape[0] * r * q
        ineq.add([(lay.L0 + np.arange(nL), -np.eye(nL))], np.zeros(nL))
        # alpha_i >= 0
        ineq.add([(lay.a0 + np.arange(1, N + 1), -np.eye(N))], np.zeros(N))
        # tightened state and input rows
        F, G = sys.F, sys.G
        for i in range(N):
            if F.shape[0]:
                ineq.add([(lay.s(i), F),
                          (np.array([lay.a(i)]), self.fbar[:, None])],
                         np.ones(F.shape[0]), slot=("f", i))
            if G.shape[0]:
                ineq.add([(lay.s(i), G @ K), (lay.v(i), G),
                          (np.array([lay.a(i)]), self.gbar[:, None])],
                         np.ones(G.shape[0]), slot=("g", i))
        # terminal set
        HT, hT = cfg.terminal.H, cfg.terminal.h
        ineq.add([(lay.s(N), HT[:, :n]),
                  (np.array([lay.a(N)]), HT[:, n:])], hT)
        # 1-norm epigraph of the absolute input
        if cfg.input_l1 > 0:
            Im = np.eye(m)
            for i in range(N):
                ineq.add([(lay.x(i), K), (lay.v(i), Im), (lay.t(i), -Im)],
                         np.zeros(m), slot=("l1p", i))
                ineq.add([(lay.x(i), -K), (lay.v(i), -Im), (lay.t(i), -Im)],
                         np.zeros(m), slot=("l1m", i))
        # objective
        Qb = cfg.Q + K.T @ cfg.R @ K
        KR = K.T @ cfg.R
        Pq = sp.lil_matrix((lay.size, lay.size))
        for i in range(N):
            xi, vi = lay.x(i), lay.v(i)
            Pq[np.ix_(xi, xi)] = 2 * Qb
            Pq[np.ix_(xi, vi)] = 2 * KR
            Pq[np.ix_(vi, xi)] = 2 * KR.T
            Pq[np.ix_(vi, vi)] = 2 * cfg.R
        xN = lay.x(N)
        Pq[np.ix_(xN, xN)] = 2 * cfg.P
        qv = np.zeros(lay.size)
        if cfg.input_l1 > 0:
            qv[lay.t0:lay.t0 + N * m] = cfg.input_l1
        if cfg.tube_weight > 0:
            for i in range(N + 1):
                qv[lay.a(i)] = cfg.tube_weight
        return {"eq": eq, "ineq": ineq, "P": sp.csc_matrix(Pq), "q": qv}

    def _prediction_rows(self, theta_bar):
        """Rows ``x_0 = x_true`` and ``x_{i+1} = A_cl x_i + B v_i + mean``."""
        sys, lay, N, n = self.sys, self.lay, self.cfg.N, self.sys.n
        K = self.cfg.K
        Acl = sys.A_cl(theta_bar, K)
        Bb = sys.B(theta_bar)
        rows = _Rows()
        rows.add([(lay.x(0), np.eye(n))], np.zeros(n), slot="x_true")
        for i in range(N):
            rows.add([(lay.x(i + 1), np.eye(n)), (lay.x(i), -Acl),
                      (lay.v(i), -Bb)], np.zeros(n), slot=("pred", i))
        return rows

    def _matrices(self, theta_bar):
        key = np.asarray(theta_bar, dtype=float).tobytes()
        if self._cache_theta is not None and self._cache_theta[0] == key:
            return self._cache_theta[1]
        st = self._static
        pred = self._prediction_rows(theta_bar)
        size = self.lay.size
        Ap, bp = pred.matrix(size)
        Ae, be = st["eq"].matrix(size)
        Ai, bi = st["ineq"].matrix(size)
        A = sp.vstack([Ap, Ae, Ai], format="csc")
        b = np.concatenate([bp, be, bi])
        n_eq = Ap.shape[0] + Ae.shape[0]
        # absolute positions of parameterized right-hand-side slots
        slots = {}
        for name, idx in pred.slots.items():
            slots[("p", name)] = np.concatenate(idx)
        off = Ap.shape[0]
        for name, idx in st["eq"].slots.items():
            slots[("e", name)] = off + np.concatenate(idx)
        off = n_eq
        for name, idx in st["ineq"].slots.items():
            slots[("i", name)] = off + np.concatenate(idx)
        data = {"A": A, "b": b, "n_eq": n_eq, "slots": slots}
        self._cache_theta = (key, data)
        self._solver = None
        return data

    def _rhs(self, data, x_true, s_init, a_init, k):
        sys, cfg, N = self.sys, self.cfg, self.cfg.N
        b = data["b"].copy()
        sl = data["slots"]
        b[sl[("p", "x_true")]] = x_true
        for i in range(N):
            b[sl[("p", ("pred", i))]] = self._mean(k + i)
        b[sl[("e", "s_init")]] = s_init
        b[sl[("e", "a_init")]] = a_init
        tt = cfg.tightening
        for i in range(N):
            b[sl[("i", ("mean", i))]] = np.tile(-self.Hz @ self._mean(k + i),
                                                self.Zv.shape[0])
            if sys.F.shape[0]:
                b[sl[("i", ("f", i))]] = 1.0 - tt.f_at(k + i)
            if sys.G.shape[0]:
                b[sl[("i", ("g", i))]] = 1.0 - tt.g_at(k + i)
            if cfg.input_l1 > 0:
                uo = self._uoff(k + i)
                b[sl[("i", ("l1p", i))]] = -uo
                b[sl[("i", ("l1m", i))]] = uo
        return b

    def _theta(self, theta_bar):
        theta_bar = np.atleast_1d(np.asarray(theta_bar, dtype=float))
        Theta = self.sys.Theta
        if Theta.contains(theta_bar, 1e-9):
            return theta_bar
        if not self.cfg.project_estimate:
            raise EstimateOutsideTheta(f"estimate {theta_bar} not in Theta")
        from .sim import project_onto_polytope

        return project_onto_polytope(Theta, theta_bar)

    def _initial_tube(self, x_true, prev, k):
        if k == 0 or prev is None:
            if k > 0:
                raise MissingPrevSolution("k > 0 requires the previous step")
            return np.asarray(x_true, dtype=float).copy(), 0.0
        if not prev.ok:
            raise MissingPrevSolution("previous step has no solution")
        return prev.s[1].copy(), float(prev.alpha[1])

    def assemble(self, x_true, theta_bar, prev=None, k=0) -> ConicProgram:
        """The step-``k`` problem as a :class:`ConicProgram`.

        Variables are ordered ``v, s, alpha, Lambda, x`` (and the 1-norm
        epigraph variables when enabled); see :attr:`lay` for offsets.
        """
        theta_bar = self._theta(theta_bar)
        s_init, a_init = self._initial_tube(x_true, prev, k)
        data = self._matrices(theta_bar)
        b = self._rhs(data, np.asarray(x_true, float), s_init, a_init, k)
        A, n_eq = data["A"], data["n_eq"]
        prog = ConicProgram()
        prog.new_vars(self.lay.size)
        prog.add_rows("zero", A[:n_eq], b[:n_eq])
        prog.add_rows("nonneg", A[n_eq:], b[n_eq:])
        prog.minimize(self._static["q"], P=self._static["P"])
        return prog

    def solve_step(self, x_true, theta_bar, prev=None, k=0) -> MPCStepSolution:
        """Solve the step-``k`` problem.

        The returned solution is checked against all constraints with
        tolerance ``cfg.feas_tol``.

        Raises
        ------
        Infeasible
            The problem has no solution (never patched). ``info["solution"]``
            holds a stub :class:`MPCStepSolution` with the status.
        NumericalFailure
            The solver stopped without a certified solution, or the solution
            violates the constraints by more than ``cfg.feas_tol``.
        """
        theta_bar = self._theta(theta_bar)
        s_init, a_init = self._initial_tube(x_true, prev, k)
        data = self._matrices(theta_bar)
        b = self._rhs(data, np.asarray(x_true, float), s_init, a_init, k)
        status, z, info = self._solve_b(data, b, refine=False)
        if status != OPTIMAL or info["violation"] > self.cfg.feas_tol:
            # the fast path skips iterative refinement; retry with it on
            status, z, info = self._solve_b(data, b, refine=True)
            info["refined"] = True
            self._solver = None
        if status != OPTIMAL:
            self._raise(status, k, theta_bar, info)
        if info["violation"] > self.cfg.feas_tol:
            self._raise(NUMERICAL_FAILURE, k, theta_bar, info)
        return self._unpack(z, k, theta_bar, info, x_true, s_init, a_init)

    def _solve_b(self, data, b, refine):
        import clarabel

        A, n_eq = data["A"], data["n_eq"]
        if refine or self._solver is None:
            prog = ConicProgram()
            prog.new_vars(self.lay.size)
            prog.add_rows("zero", A[:n_eq], b[:n_eq])
            prog.add_rows("nonneg", A[n_eq:], b[n_eq:])
            opts = {"tol": 1e-8, "iterative_refinement_enable": refine,
                    **self.cfg.solver}
            if refine:
                opts["iterative_refinement_enable"] = True
            P = sp.triu(self._static["P"], format="csc")
            solver = clarabel.DefaultSolver(
                P, self._static["q"], A, b, _clarabel_cones(prog),
                clarabel_settings(**opts))
            if not refine:
                self._solver = solver
        else:
            solver = self._solver
            solver.update(b=b)
        sol = solver.solve()
        raw = str(sol.status)
        status = _CLARABEL_STATUS.get(raw, NUMERICAL_FAILURE)
        if status not in (OPTIMAL, INFEASIBLE):
            status = NUMERICAL_FAILURE
        info = {"raw_status": raw, "iterations": sol.iterations,
                "solve_time": sol.solve_time, "violation": np.inf}
        z = np.array(sol.x)
        if status == OPTIMAL:
            res = b - A @ z
            info["violation"] = float(max(
                np.max(np.abs(res[:n_eq]), initial=0.0),
                -np.min(res[n_eq:], initial=0.0)))
        return status, z, info

    @staticmethod
    def _raise(status, k, theta_bar, info):
        partial = MPCStepSolution(status, k, theta_bar, info=info)
        info = dict(info, solution=partial)
        if status == INFEASIBLE:
            raise Infeasible(f"step {k}: problem infeasible", info)
        raise NumericalFailure(f"step {k}: solver returned {info['raw_status']}"
                               f" (violation {info.get('violation', np.nan):.2e})",
                               NUMERICAL_FAILURE, info)

    def _unpack(self, z, k, theta_bar, info, x_true, s_init, a_init):
        lay, N, n, m = self.lay, self.cfg.N, self.sys.n, self.sys.m
        v = z[lay.v0:lay.v0 + N * m].reshape(N, m)
        s = z[lay.s0:lay.s0 + (N + 1) * n].reshape(N + 1, n)
        alpha = z[lay.a0:lay.a0 + N + 1].copy()
        nL = N * lay.v1 * lay.r * lay.q
        Lam = z[lay.L0:lay.L0 + nL].reshape(N, lay.v1, lay.r, lay.q)
        x = z[lay.x0:lay.x0 + (N + 1) * n].reshape(N + 1, n).copy()
        # s_0, alpha_0 and x_0 are fixed by equality rows; copy them exactly
        s = s.copy()
        s[0] = s_init
        alpha[0] = a_init
        x[0] = x_true
        u = x[:N] @ self.cfg.K.T + v
        P, q = self._static["P"], self._static["q"]
        obj = float(0.5 * z @ (P @ z) + q @ z)
        return MPCStepSolution(OPTIMAL, k, theta_bar, v, s, alpha, Lam, x, u,
                               obj, info)

    def stage_cost(self, x, u, k=0) -> float:
        """Realized stage cost ``x'Qx + u'Ru + c ||u + u_offset||_1``."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        c = float(x @ self.cfg.Q @ x + u @ self.cfg.R @ u)
        if self.cfg.input_l1 > 0:
            c += self.cfg.input_l1 * float(np.sum(np.abs(u + self._uoff(k))))
        return c

    # ------------------------------------------------------------- shifting
    def shift(self, prev: MPCStepSolution) -> Candidate:
        """Shifted candidate ``v = (v_1..v_{N-1}, 0)`` with the terminal
        successor of ``(s_N, alpha_N)`` appended to the tube."""
        if not prev.ok:
            raise MissingPrevSolution("cannot shift a failed solution")
        sN, aN = successor(self.cfg.terminal, self.sys, self.cfg.K,
                           self.cfg.Zbar, prev.s[-1], max(prev.alpha[-1], 0.0))
        v = np.vstack([prev.v[1:], np.zeros((1, self.sys.m))])
        s = np.vstack([prev.s[1:], sN[None, :]])
        alpha = np.append(prev.alpha[1:], aN)
        return Candidate(v, s, alpha)

    def candidate_violation(self, cand: Candidate, k) -> float:
        """Worst violation of the step-``k`` tube constraints by ``cand``.

        Checks the tightened state and input rows, nonnegative scalings,
        the terminal set, and robust containment of every transition
        (maximum over the vertices of ``Theta``, which is exact because the
        containment condition is affine in ``theta``).
        """
        sys, cfg, N = self.sys, self.cfg, self.cfg.N
        if not np.all(np.isfinite(cand.alpha)):
            return np.inf
        K = cfg.K
        worst = -np.inf
        tt = cfg.tightening
        for i in range(N):
            s, a, v = cand.s[i], cand.alpha[i], cand.v[i]
            if sys.F.shape[0]:
                worst = max(worst, np.max(sys.F @ s + a * self.fbar - 1.0
                                          + tt.f_at(k + i)))
            if sys.G.shape[0]:
                worst = max(worst, np.max(sys.G @ (K @ s + v) + a * self.gbar
                                          - 1.0 + tt.g_at(k + i)))
        worst = max(worst, -np.min(cand.alpha[1:]))
        HT, hT = cfg.terminal.H, cfg.terminal.h
        worst = max(worst, np.max(HT @ np.append(cand.s[N], cand.alpha[N])
                                  - hT))
        worst = max(worst, self.containment_violation(cand.s, cand.alpha,
                                                      cand.v, k))
        return float(worst)

    def containment_violation(self, s, alpha, v, k) -> float:
        """``max`` over transitions, base vertices, ``Theta`` vertices and
        facets of the containment excess (nonpositive when contained)."""
        sys, K = self.sys, self.cfg.K
        Tv = sys.theta_vertices
        worst = -np.inf
        Acls = [sys.A_cl(t, K) for t in Tv]
        Bs = [sys.B(t) for t in Tv]
        for i in range(self.cfg.N):
            X = s[i][None, :] + alpha[i] * self.Zv          # (v1, n)
            for Acl, B in zip(Acls, Bs):
                img = X @ Acl.T + (B @ v[i])[None, :] + self._mean(k + i)
                exc = (img - s[i + 1]) @ self.Hz.T - alpha[i + 1]
                worst = max(worst, float(np.max(exc)))
        return worst
