"""Closed-loop Monte-Carlo harness and empirical metrics.

The true plant evolves as ``x+ = A(theta_true) x + B(theta_true) u + w``
with ``u = K x + v_0`` from the controller. Every trace records the
measured states and applied inputs; constraint flags are recomputed from
those, never taken from the controller.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .conic import ConicProgram, solve_conic
from .errors import RSMPCError, SeedMismatch, SolverFailure
from .model import D_map
from .polytope import Polytope

__all__ = [
    "sample_noise", "ClosedLoopTrace", "ConstantEstimator", "ProjectedRLS",
    "project_onto_polytope", "run_closed_loop", "empirical_satisfaction",
    "SatisfactionResult", "cost_increase_stats", "running_l2_average",
    "rls_projected_update", "trace_to_csv",
]


# ---------------------------------------------------------------- noise
def sample_noise(nm, seed, n_samples=None) -> np.ndarray:
    """Draw realizations of ``W = (w_0..w_{T-1})``.

    Gaussian models are sampled exactly. For the moment-only family the
    surrogate is ``mean + L u`` with ``L L^T`` the covariance and ``u``
    i.i.d. uniform on ``[-sqrt(3), sqrt(3)]`` (zero mean, unit variance,
    kurtosis 1.8), so the first two moments match exactly.

    Parameters
    ----------
    nm : NoiseModel
    seed : int or numpy.random.Generator
    n_samples : int, optional
        If given, return a stack of that many sequences.

    Returns
    -------
    ndarray, shape (T, n) or (n_samples, T, n)
    """
    rng = np.random.default_rng(seed)
    S = 1 if n_samples is None else int(n_samples)
    T, n = nm.T, nm.n
    if nm.iid:
        L = _factor(nm.Sigma_w)
        shape = (S, T, n)
    else:
        L = _factor(nm.Sigma_W)
        shape = (S, T * n)
    if nm.family == "gaussian":
        u = rng.standard_normal(shape)
    else:
        u = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=shape)
    W = (u @ L.T).reshape(S, T, n) + nm.mean[None]
    return W[0] if n_samples is None else W


def _factor(S):
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        lam, U = np.linalg.eigh(S)
        return U * np.sqrt(np.clip(lam, 0.0, None))


# ----------------------------------------------------------- estimators
def project_onto_polytope(P: Polytope, y, check=True) -> np.ndarray:
    """Euclidean projection of ``y`` onto ``P`` (a small QP).

    With ``check`` the KKT conditions are verified: primal feasibility,
    and ``y - x`` lying in the cone spanned by the active normals.
    """
    y = np.asarray(y, dtype=float).ravel()
    if P.contains(y, 0.0):
        return y.copy()
    d = y.size
    prog = ConicProgram()
    prog.new_vars(d)
    prog.add_rows("nonneg", P.H, P.h)
    prog.minimize(-2.0 * y, P=2.0 * np.eye(d), const=float(y @ y))
    sol = solve_conic(prog, "clarabel")
    sol.require_optimal()
    xs = sol.x[:d]
    if check:
        _check_projection(P, y, xs)
    return xs


def _check_projection(P, y, x, tol=1e-6):
    from scipy.optimize import nnls

    if np.max(P.H @ x - P.h) > tol:
        raise SolverFailure("projection is infeasible", "NumericalFailure")
    active = np.abs(P.H @ x - P.h) <= 1e-7 * max(1.0, np.abs(P.h).max())
    r = y - x
    if not active.any():
        if np.linalg.norm(r) > tol:
            raise SolverFailure("projection KKT check failed", "NumericalFailure")
        return
    _, res = nnls(P.H[active].T, r)
    if res > tol * max(1.0, np.linalg.norm(r)):
        raise SolverFailure("projection KKT check failed", "NumericalFailure")


class ConstantEstimator:
    """Always returns the same estimate (projected onto ``Theta``)."""

    def __init__(self, theta_bar, Theta: Polytope | None = None):
        tb = np.atleast_1d(np.asarray(theta_bar, dtype=float))
        self.theta_bar = tb if Theta is None else project_onto_polytope(Theta, tb)

    def reset(self):
        pass

    def __call__(self, history) -> np.ndarray:
        return self.theta_bar.copy()


def rls_projected_update(x, u, x_next, w_mean, sys, theta, Pcov, forgetting=1.0):
    """One recursive-least-squares step followed by projection onto ``Theta``.

    Uses the identity ``x+ - A_0 x - B_0 u - w_mean = D(x, u) theta + noise``.

    Returns
    -------
    theta_proj : ndarray
        Projected estimate (always in ``Theta``).
    theta_ls : ndarray
        Unprojected estimate, which carries the recursion.
    Pcov : ndarray
    """
    D = D_map(x, u, sys)
    y = x_next - sys.A_list[0] @ x - sys.B_list[0] @ u - w_mean
    if not np.any(D):
        return project_onto_polytope(sys.Theta, theta), theta, Pcov
    S = forgetting * np.eye(D.shape[0]) + D @ Pcov @ D.T
    G = np.linalg.solve(S, D @ Pcov).T
    theta = theta + G @ (y - D @ theta)
    Pcov = (Pcov - G @ D @ Pcov) / forgetting
    Pcov = 0.5 * (Pcov + Pcov.T)
    return project_onto_polytope(sys.Theta, theta), theta, Pcov


class ProjectedRLS:
    """Recursive least squares on ``theta`` with projection onto ``Theta``.

    Parameters
    ----------
    sys : UncertainLTISystem
    prior : array_like
        Initial estimate, returned until a transition has been observed.
    P0 : float
        Initial covariance scale.
    mean : ndarray, shape (T, n), optional
        Deterministic disturbance, removed from the regression target.
    """

    def __init__(self, sys, prior, P0=1e3, forgetting=1.0, mean=None):
        self.sys = sys
        self.prior = np.atleast_1d(np.asarray(prior, dtype=float))
        self.P0 = P0
        self.forgetting = forgetting
        self.mean = mean
        self.reset()

    def reset(self):
        self.theta_ls = self.prior.copy()
        self.Pcov = self.P0 * np.eye(self.prior.size)
        self._seen = 0
        self._last = project_onto_polytope(self.sys.Theta, self.prior)

    def __call__(self, history) -> np.ndarray:
        xs, us = history["x"], history["u"]
        while self._seen < len(us):
            k = self._seen
            wm = np.zeros(self.sys.n) if self.mean is None else \
                self.mean[min(k, len(self.mean) - 1)]
            self._last, self.theta_ls, self.Pcov = rls_projected_update(
                xs[k], us[k], xs[k + 1], wm, self.sys, self.theta_ls,
                self.Pcov, self.forgetting)
            self._seen += 1
        return self._last.copy()


# --------------------------------------------------------------- traces
@dataclass
class ClosedLoopTrace:
    """Record of one closed-loop run.

    Arrays cover the steps actually executed: ``x_true`` has one more row
    than ``u_true``. When a step fails the run halts; ``halted_at`` is that
    step and ``status[-1]`` its status.
    """

    seed: int
    theta_true: np.ndarray
    x_true: np.ndarray
    u_true: np.ndarray
    v0: np.ndarray
    s0: np.ndarray
    alpha0: np.ndarray
    theta_bar: np.ndarray
    status: list
    state_flags: np.ndarray
    input_flags: np.ndarray
    cost: np.ndarray
    halted_at: int | None = None
    z_true: np.ndarray | None = None
    tube_slack: np.ndarray | None = None
    candidate_violation: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.u_true.shape[0]

    @property
    def halted(self) -> bool:
        return self.halted_at is not None

    @property
    def e_true(self):
        """Error ``x_true - z_true`` (diagnostic runs only)."""
        if self.z_true is None:
            return None
        return self.x_true[:self.z_true.shape[0]] - self.z_true

    @property
    def total_cost(self) -> float:
        return float(np.sum(self.cost))


def run_closed_loop(sys, theta_true, controller, estimator, W, T, x0,
                    seed=0, diagnostics=False, check_candidate=False,
                    plant_sys=None) -> ClosedLoopTrace:
    """Simulate ``T`` steps of the closed loop.

    Parameters
    ----------
    sys : UncertainLTISystem
        Model whose constraints define the recorded flags.
    theta_true : array_like
        True parameter (must lie in ``plant_sys.Theta``).
    controller : RobustStochasticMPC
    estimator : callable
        ``history -> theta_bar``; called once per step before the solve.
        ``history`` holds the lists ``x`` and ``u`` observed so far.
    W : ndarray, shape (>=T, n)
        Realized disturbance including its mean.
    x0 : array_like
    diagnostics : bool
        Also propagate the true nominal state ``z`` (known ``theta_true``)
        and record its slack in the planned tube ``{s_0} + alpha_0 Zbar``.
    check_candidate : bool
        Record the worst constraint violation of the shifted candidate at
        every step after the first.
    plant_sys : UncertainLTISystem, optional
        Model used to propagate the plant (default ``sys``). The baseline
        controller is built on a singleton model while the plant keeps the
        true matrices.
    """
    plant = sys if plant_sys is None else plant_sys
    theta_true = np.atleast_1d(np.asarray(theta_true, dtype=float))
    if not plant.Theta.contains(theta_true, 1e-9):
        raise ValueError("theta_true must lie in Theta")
    A_t, B_t = plant.A(theta_true), plant.B(theta_true)
    K = controller.cfg.K
    if hasattr(estimator, "reset"):
        estimator.reset()
    x = np.asarray(x0, dtype=float).copy()
    xs, us, vs, ss, als, tbs, stat, cost = [x.copy()], [], [], [], [], [], [], []
    z = x.copy() if diagnostics else None
    zs, slack, cviol = ([z.copy()] if diagnostics else None), [], []
    prev = None
    halted = None
    hist = {"x": xs, "u": us}
    for k in range(T):
        theta_bar = np.atleast_1d(estimator(hist))
        tbs.append(theta_bar)
        if check_candidate and prev is not None:
            cand = controller.shift(prev)
            cviol.append(controller.candidate_violation(cand, k))
        try:
            sol = controller.solve_step(x, theta_bar, prev, k)
        except (SolverFailure, RSMPCError) as exc:
            stat.append(getattr(exc, "status", None) or type(exc).__name__)
            halted = k
            break
        stat.append(sol.status)
        if diagnostics:
            slack.append(float(np.max(controller.Hz @ (z - sol.s[0]))
                               - sol.alpha[0]))
        u = sol.u0.copy()
        us.append(u)
        vs.append(sol.v[0].copy())
        ss.append(sol.s[0].copy())
        als.append(float(sol.alpha[0]))
        cost.append(controller.stage_cost(x, u, k))
        if diagnostics:
            z = A_t @ z + B_t @ (K @ z + sol.v[0]) + controller._mean(k)
            zs.append(z.copy())
        x = A_t @ x + B_t @ u + W[k]
        xs.append(x.copy())
        prev = sol
    X = np.array(xs)
    m = sys.m
    U = np.array(us).reshape(-1, m)
    tr = ClosedLoopTrace(
        seed=seed, theta_true=theta_true, x_true=X, u_true=U,
        v0=np.array(vs).reshape(-1, m), s0=np.array(ss).reshape(-1, sys.n),
        alpha0=np.array(als), theta_bar=np.array(tbs), status=stat,
        state_flags=_flags(sys.F, X), input_flags=_flags(sys.G, U),
        cost=np.array(cost), halted_at=halted)
    if diagnostics:
        tr.z_true = np.array(zs)
        tr.tube_slack = np.array(slack)
    if check_candidate:
        tr.candidate_violation = np.array(cviol)
    return tr


def _flags(F, X):
    if F.shape[0] == 0:
        return np.ones((X.shape[0], 0), dtype=bool)
    return (X @ F.T) <= 1.0


# -------------------------------------------------------------- metrics
@dataclass
class SatisfactionResult:
    """Empirical constraint satisfaction.

    Attributes
    ----------
    per_step : ndarray
        ``N_c(k)`` in percent over the non-halted traces.
    N_c : float
        ``min_k N_c(k)``.
    n_used : int
        Number of traces in the statistic.
    n_halted : int
        Traces excluded because the controller failed mid-run.
    passed : bool or None
        ``N_c >= threshold`` when a threshold was given.
    """

    per_step: np.ndarray
    N_c: float
    n_used: int
    n_halted: int
    passed: bool | None = None


def empirical_satisfaction(traces, rows=None, threshold=None, kind="state"
                           ) -> SatisfactionResult:
    """Percentage of traces satisfying the selected rows at each step.

    Parameters
    ----------
    traces : sequence of ClosedLoopTrace
    rows : int or sequence of int, optional
        Constraint rows evaluated jointly (default: all rows).
    threshold : float, optional
        Pass threshold for ``N_c`` in percent.
    kind : {"state", "input"}
    """
    good = [t for t in traces if not t.halted]
    n_halted = len(traces) - len(good)
    if not good:
        raise ValueError("no complete traces to evaluate")
    flags = np.stack([t.state_flags if kind == "state" else t.input_flags
                      for t in good])
    if rows is not None:
        flags = flags[:, :, np.atleast_1d(rows)]
    ok = flags.all(axis=2)
    per_step = 100.0 * ok.mean(axis=0)
    Nc = float(per_step.min())
    passed = None if threshold is None else bool(Nc >= threshold)
    return SatisfactionResult(per_step, Nc, len(good), n_halted, passed)


def cost_increase_stats(traces, baseline_traces):
    """Per-seed percentage increase of accumulated closed-loop cost.

    Returns
    -------
    dict
        ``mean``, ``std``, ``lower``/``upper`` (mean -/+ 2 std) and the
        per-seed ``values``.
    """
    base = {t.seed: t for t in baseline_traces}
    test = {t.seed: t for t in traces}
    if set(base) != set(test) or len(base) != len(baseline_traces) \
            or len(test) != len(traces):
        raise SeedMismatch("trace sets must have the same distinct seeds")
    seeds = sorted(test)
    vals = np.array([100.0 * (test[s].total_cost - base[s].total_cost)
                     / base[s].total_cost for s in seeds])
    mean = float(vals.mean())
    std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
    return {"mean": mean, "std": std, "lower": mean - 2 * std,
            "upper": mean + 2 * std, "values": vals, "seeds": seeds}


def running_l2_average(traces) -> np.ndarray:
    """Average over traces of ``(1/T) sum_{k<T} ||x_k||^2`` for every ``T``."""
    sq = np.stack([np.sum(t.x_true[:-1] ** 2, axis=1) for t in traces])
    T = np.arange(1, sq.shape[1] + 1)
    return np.mean(np.cumsum(sq, axis=1) / T, axis=0)


# ----------------------------------------------------------------- I/O
def trace_columns(n, m, n_state_rows, n_input_rows):
    cols = ["k"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)]
    cols += [f"v{i}" for i in range(m)] + [f"s{i}" for i in range(n)]
    cols += ["alpha", "status"]
    cols += [f"xflag{i}" for i in range(n_state_rows)]
    cols += [f"uflag{i}" for i in range(n_input_rows)]
    return cols


def trace_to_csv(tr: ClosedLoopTrace) -> str:
    """CSV text of a trace, one row per state sample ``k = 0..T``.

    Input-related columns of the last row (and of a halted step) are empty.
    Floats use ``repr`` so equal traces give byte-identical files.
    """
    n, m = tr.x_true.shape[1], tr.u_true.shape[1]
    nf, ng = tr.state_flags.shape[1], tr.input_flags.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trace_columns(n, m, nf, ng))
    K = tr.x_true.shape[0]
    for k in range(K):
        row = [k] + [repr(float(a)) for a in tr.x_true[k]]
        if k < tr.u_true.shape[0]:
            row += [repr(float(a)) for a in tr.u_true[k]]
            row += [repr(float(a)) for a in tr.v0[k]]
            row += [repr(float(a)) for a in tr.s0[k]]
            row += [repr(float(tr.alpha0[k]))]
        else:
            row += [""] * (2 * m + n + 1)
        row += [tr.status[k] if k < len(tr.status) else ""]
        row += [int(f) for f in tr.state_flags[k]]
        if k < tr.input_flags.shape[0]:
            row += [int(f) for f in tr.input_flags[k]]
        else:
            row += [""] * ng
        w.writerow(row)
    return buf.getvalue()
