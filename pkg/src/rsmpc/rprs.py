"""Robust variance bounds and probabilistic reachable sets for the error.

The error ``e_k`` between the true state and its noise-free part obeys
``e_{k+1} = A_cl(theta) e_k + w_k`` with ``e_0 = 0``. For an unknown
``theta`` in ``Theta`` its covariance is not known exactly, so this module
computes matrices ``Vbar_k`` that upper bound ``var[e_k]`` in the Loewner
order for every ``theta`` (one max-det program per step for i.i.d. noise,
a chain of inner/outer bounds for correlated noise), turns them into
confidence sets via Chebyshev or Gaussian quantiles, and produces the
constraint tightening offsets ``f_k`` and ``g_k``.

Every bound returned here is certified after the solve: the dominance
margin against each vertex is evaluated in floating point and, if the
solver left a tiny negative eigenvalue, the bound is inflated by that
amount. Since ``theta -> A(theta) V A(theta)^T`` is matrix convex, the
vertex check covers all of ``Theta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .conic import (ConicProgram, MaxDetProgram, _trace, bmat, solve_conic,
                    solve_maxdet)
from .errors import CorrelationBoundViolated, InvalidProbability
from .polytope import Polytope

#: Extra slack added when certifying a bound (absolute, in eigenvalue units).
CERT_MARGIN = 1e-10

#: Eigenvalue shift of the positive definite fallback for the inner bound.
FALLBACK_SHIFT = 1e-6

#: Schur blocks larger than this use the equivalent inverse encoding when
#: ``encoding="auto"``.
AUTO_SCHUR_LIMIT = 24


# ----------------------------------------------------------------------------
# noise description
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseModel:
    """First and second moments of the noise sequence ``W = (w_0..w_{T-1})``.

    Parameters
    ----------
    T : int
        Number of noise samples.
    n : int
        Dimension of each ``w_k`` (the state dimension).
    mean : ndarray, shape (T, n), optional
        Deterministic part ``mu_W``; zero if omitted. Only the zero-mean
        remainder enters the variance bounds.
    Sigma_w : ndarray, shape (n, n), optional
        Covariance of each sample for i.i.d. noise.
    Sigma_W : ndarray, shape (T n, T n), optional
        Full covariance for correlated noise. Exactly one of ``Sigma_w``
        and ``Sigma_W`` must be given.
    family : {"moment", "gaussian"}
        ``"moment"`` means only the two moments are known (Chebyshev
        levels); ``"gaussian"`` allows chi-squared quantiles.
    """

    T: int
    n: int
    mean: np.ndarray | None = None
    Sigma_w: np.ndarray | None = None
    Sigma_W: np.ndarray | None = None
    family: str = "moment"

    def __post_init__(self):
        if self.family not in ("moment", "gaussian"):
            raise ValueError("family must be 'moment' or 'gaussian'")
        if (self.Sigma_w is None) == (self.Sigma_W is None):
            raise ValueError("give exactly one of Sigma_w and Sigma_W")
        mean = np.zeros((self.T, self.n)) if self.mean is None else \
            np.array(self.mean, dtype=float).reshape(self.T, self.n)
        object.__setattr__(self, "mean", mean)
        if self.Sigma_w is not None:
            S = np.array(self.Sigma_w, dtype=float).reshape(self.n, self.n)
            _check_spd(S, "Sigma_w")
            object.__setattr__(self, "Sigma_w", S)
        else:
            S = np.array(self.Sigma_W, dtype=float)
            if S.shape != (self.T * self.n, self.T * self.n):
                raise ValueError("Sigma_W must be (T n) x (T n)")
            _check_spd(S, "Sigma_W")
            object.__setattr__(self, "Sigma_W", S)

    @property
    def iid(self) -> bool:
        return self.Sigma_w is not None

    def full_covariance(self, k=None) -> np.ndarray:
        """Covariance of ``(w_0..w_{k-1})`` (default: the whole sequence)."""
        k = self.T if k is None else k
        if self.iid:
            return np.kron(np.eye(k), self.Sigma_w)
        return self.Sigma_W[:k * self.n, :k * self.n]

    def block(self, i, j) -> np.ndarray:
        """``cov(w_i, w_j)``."""
        n = self.n
        if self.iid:
            return self.Sigma_w if i == j else np.zeros((n, n))
        return self.Sigma_W[i * n:(i + 1) * n, j * n:(j + 1) * n]

    def to_dict(self) -> dict:
        d = {"T": self.T, "n": self.n, "family": self.family,
             "mean": self.mean.tolist()}
        if self.iid:
            d["Sigma_w"] = self.Sigma_w.tolist()
        else:
            d["Sigma_W"] = self.Sigma_W.tolist()
        return d

    @classmethod
    def from_dict(cls, d) -> "NoiseModel":
        return cls(int(d["T"]), int(d["n"]), d.get("mean"),
                   d.get("Sigma_w"), d.get("Sigma_W"),
                   d.get("family", "moment"))


def _check_spd(S, name):
    if not np.allclose(S, S.T, atol=1e-12 * max(1.0, np.abs(S).max())):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(0.5 * (S + S.T))[0] <= 0:
        raise ValueError(f"{name} must be positive definite")


def ar1_covariance(Sigma_w, T, rho) -> np.ndarray:
    """``cov(w_i, w_j) = rho^|i-j| Sigma_w`` (positive definite for |rho| < 1)."""
    idx = np.arange(T)
    R = rho ** np.abs(idx[:, None] - idx[None, :])
    return np.kron(R, np.asarray(Sigma_w, dtype=float))


# ----------------------------------------------------------------------------
# variance bounds
# ----------------------------------------------------------------------------

@dataclass
class VarianceBoundSequence:
    """Loewner upper bounds ``Vbar_1..Vbar_T`` on ``var[e_k]``.

    Attributes
    ----------
    bounds : ndarray, shape (T, n, n)
        ``bounds[k - 1]`` bounds ``var[e_k]``.
    K : ndarray, shape (m, n)
        Feedback gain used for ``var[K e_k]``.
    method : str
        ``"iid"`` or ``"correlated"``.
    info : dict
        Per-step diagnostics (log-determinants, certification inflation,
        fallbacks triggered, solver backends).
    """

    bounds: np.ndarray
    K: np.ndarray
    method: str = "iid"
    info: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.bounds.shape[0]

    @property
    def input_bounds(self) -> np.ndarray:
        """``K Vbar_k K^T`` for every ``k``."""
        K = self.K
        return np.einsum("ij,kjl,ml->kim", K, self.bounds, K)

    def logdets(self) -> np.ndarray:
        return np.array([np.linalg.slogdet(V)[1] for V in self.bounds])


def _certify(Vbar, targets):
    """Inflate ``Vbar`` so that ``Vbar - M >= 0`` holds for every target."""
    Vbar = 0.5 * (Vbar + Vbar.T)
    worst = min(np.linalg.eigvalsh(Vbar - M)[0] for M in targets)
    shift = 0.0
    if worst < 0.0:
        shift = -worst + CERT_MARGIN * max(1.0, np.abs(Vbar).max())
        Vbar = Vbar + shift * np.eye(Vbar.shape[0])
    return Vbar, shift


def _encoding(encoding, block):
    if encoding == "auto":
        return "schur" if block <= AUTO_SCHUR_LIMIT else "inverse"
    if encoding not in ("schur", "inverse"):
        raise ValueError("encoding must be 'schur', 'inverse' or 'auto'")
    return encoding


def _min_trace_bound(targets, backend="auto"):
    """Trace surrogate: ``min tr D`` subject to ``D >= M_j`` for all ``j``.

    The constraints are linear in ``D`` itself, so no inverse appears;
    the result is a valid but generally not minimum-volume bound.
    """
    n = targets[0].shape[0]
    prog = ConicProgram()
    D = prog.sym_var(n)
    for M in targets:
        prog.add_psd(D - 0.5 * (M + M.T))
    prog.minimize(_trace(D))
    name = "clarabel" if backend == "auto" else backend
    sol = solve_conic(prog, backend=name)
    if not sol.ok and backend == "auto":
        sol = solve_conic(prog, backend="scs")
    sol.require_optimal("trace bound")
    Dv = D.value(sol.x)
    Dv, shift = _certify(Dv, targets)
    return Dv, {"shift": shift, "encoding": "trace", "backend": name}


def _bound_quadratic(A_list, V, X_list, objective, encoding, backend):
    """Max-det bound ``D >= A_j V A_j^T + X_j`` for all ``j``.

    With the Schur encoding the constraint is the 3x3 block LMI
    ``[S, S X_j, S A_j; X_j S, X_j, 0; A_j^T S, 0, V^-1] >= 0`` in
    ``S = D^-1``, which requires ``X_j > 0``. The inverse encoding states
    the equivalent ``S <= (A_j V A_j^T + X_j)^-1``.
    """
    n = A_list[0].shape[0]
    targets = [A @ V @ A.T + X for A, X in zip(A_list, X_list)]
    if len(targets) == 1:
        # a single vertex: the exact value is the tightest bound
        return 0.5 * (targets[0] + targets[0].T), {
            "shift": 0.0, "encoding": "exact", "backend": None}
    if objective == "trace":
        return _min_trace_bound(targets, backend)
    enc = _encoding(encoding, 2 * n + V.shape[0])
    mp = MaxDetProgram(n, objective=objective)
    S = mp.S
    if enc == "schur":
        Vinv = np.linalg.inv(V)
        Vinv = 0.5 * (Vinv + Vinv.T)
        for A, X in zip(A_list, X_list):
            mp.add_psd(bmat([[S, S @ X, S @ A],
                             [X @ S, X, None],
                             [A.T @ S, None, Vinv]]))
    else:
        for M in targets:
            Minv = np.linalg.inv(M)
            mp.add_psd(0.5 * (Minv + Minv.T) - S)
    sol = solve_maxdet(mp, backend=backend).require_optimal("variance bound")
    D, shift = _certify(np.linalg.inv(sol.S), targets)
    return D, {"shift": shift, "encoding": enc,
               "backend": sol.info.get("backend")}


def iid_variance_bounds(sys, K, Sigma_w, T, objective="logdet",
                        encoding="schur", backend="auto"
                        ) -> VarianceBoundSequence:
    """Bounds for i.i.d. noise by the max-det recursion.

    ``Vbar_1 = Sigma_w`` and, for ``k >= 1``, ``Vbar_{k+1}`` is the
    max-det (minimum volume) matrix dominating
    ``A_cl(theta_j) Vbar_k A_cl(theta_j)^T + Sigma_w`` at every vertex.

    Parameters
    ----------
    sys : UncertainLTISystem
    K : ndarray
        Feedback gain (assumed robustly stabilizing).
    Sigma_w : ndarray
        Noise covariance, positive definite.
    T : int
        Number of bounds.
    objective : {"logdet", "trace"}
    encoding : {"schur", "inverse", "auto"}
    backend : str
        Max-det backend, see :func:`solve_maxdet`.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    Sigma_w = np.asarray(Sigma_w, dtype=float)
    _check_spd(Sigma_w, "Sigma_w")
    A_list = sys.vertex_closed_loops(K)
    bounds = [Sigma_w.copy()]
    shifts = [0.0]
    for _ in range(1, T):
        D, info = _bound_quadratic(A_list, bounds[-1],
                                   [Sigma_w] * len(A_list), objective,
                                   encoding, backend)
        bounds.append(D)
        shifts.append(info["shift"])
    seq = VarianceBoundSequence(np.array(bounds), K, "iid")
    seq.info = {"shifts": shifts, "logdet": seq.logdets().tolist()}
    return seq


def inner_bound(A_list, Y_head, objective="logdet", fallback=True,
                encoding="schur", backend="auto"):
    """Bound ``D_1 >= A_I(theta_j) Y_head A_I(theta_j)^T`` at all vertices.

    Here ``A_I = [A_cl, I]`` and ``Y_head`` is the leading ``2n x 2n`` block
    of the current stacked bound. Writing the product as
    ``A Y11 A^T + Xt(theta)`` with
    ``Xt = A Y12 + Y21 A^T + Y22`` gives the same structure as the i.i.d.
    recursion.

    Parameters
    ----------
    A_list : list of ndarray
        Vertex closed-loop matrices.
    Y_head : ndarray, shape (2n, 2n)
    fallback : bool
        If some ``Xt(theta_j)`` is not positive definite, replace it by
        ``Xt + (|lambda_min| + 1e-6) I`` (a positive definite upper bound).
        With ``fallback=False`` a :class:`CorrelationBoundViolated` is
        raised instead. Only relevant for the Schur encoding.

    Returns
    -------
    D1 : ndarray, shape (n, n)
    info : dict
    """
    n = A_list[0].shape[0]
    Y_head = 0.5 * (Y_head + Y_head.T)
    if len(A_list) == 1:
        AI = np.hstack([A_list[0], np.eye(n)])
        D1 = AI @ Y_head @ AI.T
        return 0.5 * (D1 + D1.T), {"shift": 0.0, "encoding": "exact",
                                    "backend": None, "fallbacks": 0}
    Y11 = Y_head[:n, :n]
    Y12 = Y_head[:n, n:]
    Y22 = Y_head[n:, n:]
    X_list = []
    fallbacks = 0
    enc = _encoding(encoding, 3 * n)
    for A in A_list:
        Xt = A @ Y12 + Y12.T @ A.T + Y22
        Xt = 0.5 * (Xt + Xt.T)
        lam = np.linalg.eigvalsh(Xt)[0]
        if enc == "schur" and lam <= 0:
            if not fallback:
                raise CorrelationBoundViolated(
                    f"inner-bound block not positive definite "
                    f"(min eigenvalue {lam:.3g})")
            Xt = Xt + (abs(lam) + FALLBACK_SHIFT) * np.eye(n)
            fallbacks += 1
        X_list.append(Xt)
    targets = [np.hstack([A, np.eye(n)]) @ Y_head @ np.hstack([A, np.eye(n)]).T
               for A in A_list]
    if np.linalg.eigvalsh(Y11)[0] <= 0:
        raise CorrelationBoundViolated("leading block must be positive definite")
    D1, info = _bound_quadratic(A_list, Y11, X_list, objective, enc, backend)
    D1, extra = _certify(D1, targets)
    info["shift"] += extra
    info["fallbacks"] = fallbacks
    return D1, info


def outer_bound(Y_list, objective="logdet", encoding="auto", backend="auto",
                eps=1e-8):
    """Max-det ``Ybar >= Y_j`` for every matrix in ``Y_list``.

    The Schur encoding ``[S, S Y_j; Y_j S, Y_j] >= eps I`` in ``S = Ybar^-1``
    realizes the strict inequality with margin ``eps``; the inverse
    encoding states ``S <= Y_j^-1`` directly.

    Returns
    -------
    Ybar : ndarray
    info : dict
    """
    Y_list = [0.5 * (Y + Y.T) for Y in Y_list]
    d = Y_list[0].shape[0]
    if len(Y_list) == 1:
        return Y_list[0].copy(), {"shift": 0.0, "encoding": "identity"}
    if objective == "trace":
        return _min_trace_bound(Y_list, backend)
    enc = _encoding(encoding, 2 * d)
    mp = MaxDetProgram(d, objective=objective)
    S = mp.S
    for Y in Y_list:
        if enc == "schur":
            mp.add_psd(bmat([[S, S @ Y], [Y @ S, Y]]), eps=eps)
        else:
            Yinv = np.linalg.inv(Y)
            mp.add_psd(0.5 * (Yinv + Yinv.T) - S)
    sol = solve_maxdet(mp, backend=backend).require_optimal("outer bound")
    Ybar, shift = _certify(np.linalg.inv(sol.S), Y_list)
    return Ybar, {"shift": shift, "encoding": enc,
                  "backend": sol.info.get("backend")}


def _algorithm_one_step(A_list, Sigma, k, n, objective, fallback, encoding,
                        backend):
    """Bound on ``var[e_k]`` from the leading ``k n`` block of ``Sigma``."""
    Ybar = Sigma[:k * n, :k * n].copy()
    log = []
    for i in range(k, 1, -1):
        head = Ybar[:2 * n, :2 * n]
        D1, info_ib = inner_bound(A_list, head, objective, fallback,
                                  "schur" if encoding != "inverse" else
                                  "inverse", backend)
        if i == 2:
            Ybar = D1
            log.append({"i": i, "inner": info_ib})
            continue
        Ys = []
        rest = Ybar[2 * n:, 2 * n:]
        cross = Ybar[:2 * n, 2 * n:]
        for A in A_list:
            AI = np.hstack([A, np.eye(n)])
            off = AI @ cross
            Ys.append(np.block([[D1, off], [off.T, rest]]))
        if all(np.allclose(Y, Ys[0], rtol=0, atol=0) for Y in Ys):
            Ybar = Ys[0]
            info_ob = {"shift": 0.0, "encoding": "identity"}
        else:
            Ybar, info_ob = outer_bound(Ys, objective, encoding, backend)
        log.append({"i": i, "inner": info_ib, "outer": info_ob})
    return Ybar, log


def correlated_variance_bounds(sys, K, Sigma_W, T, objective="logdet",
                               fallback=True, encoding="auto",
                               backend="auto", n_jobs=1
                               ) -> VarianceBoundSequence:
    """Bounds for correlated noise by repeated inner and outer bounds.

    For each ``k`` the stacked covariance of ``(w_0..w_{k-1})`` is reduced
    one block at a time: the inner bound replaces
    ``A_I(theta) Ybar_head A_I(theta)^T`` by a parameter-free matrix, the
    outer bound removes the remaining (affine) parameter dependence of the
    off-diagonal blocks, until a single ``n x n`` bound remains.

    Parameters
    ----------
    sys : UncertainLTISystem
    K : ndarray
    Sigma_W : ndarray, shape (T n, T n)
        Covariance of the full noise sequence.
    T : int
    objective, fallback, encoding, backend
        See :func:`inner_bound` and :func:`outer_bound`.
    n_jobs : int
        Steps ``k`` are independent; values above one evaluate them in
        parallel with joblib.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    Sigma_W = np.asarray(Sigma_W, dtype=float)
    n = sys.n
    if Sigma_W.shape[0] < T * n:
        raise ValueError("Sigma_W is shorter than the horizon")
    _check_spd(Sigma_W[:T * n, :T * n], "Sigma_W")
    A_list = sys.vertex_closed_loops(K)

    def one(k):
        if k == 1:
            return Sigma_W[:n, :n].copy(), []
        return _algorithm_one_step(A_list, Sigma_W, k, n, objective,
                                   fallback, encoding, backend)

    if n_jobs == 1:
        results = [one(k) for k in range(1, T + 1)]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(delayed(one)(k)
                                          for k in range(1, T + 1))
    bounds = np.array([r[0] for r in results])
    seq = VarianceBoundSequence(bounds, K, "correlated")
    fallbacks = sum(step["inner"].get("fallbacks", 0)
                    for r in results for step in r[1])
    seq.info = {"logdet": seq.logdets().tolist(), "fallbacks": fallbacks,
                "solves": [2 * len(r[1]) - 1 if r[1] else 0 for r in results]}
    return seq


def exact_error_variance(A_cl, cov, k) -> np.ndarray:
    """``var[e_k]`` for a fixed closed loop and noise covariance.

    ``cov`` is either an ``n x n`` i.i.d. covariance or the full stacked
    covariance of ``(w_0..w_{k-1})`` (or longer).
    """
    A_cl = np.asarray(A_cl, dtype=float)
    n = A_cl.shape[0]
    cov = np.asarray(cov, dtype=float)
    if cov.shape == (n, n):
        V = np.zeros((n, n))
        for _ in range(k):
            V = A_cl @ V @ A_cl.T + cov
        return V
    powers = [np.eye(n)]
    for _ in range(k - 1):
        powers.append(A_cl @ powers[-1])
    M = np.hstack(powers[::-1])
    return M @ cov[:k * n, :k * n] @ M.T


# ----------------------------------------------------------------------------
# confidence sets and tightening
# ----------------------------------------------------------------------------

SHAPES = ("ellipsoid", "halfspaces", "polytope")


def _check_p(p):
    if not 0.0 < p < 1.0:
        raise InvalidProbability(f"probability level {p} outside (0, 1)")


def ellipsoid_level(p, n, family="moment") -> float:
    """``ptilde`` with ``Pr(e^T V^-1 e <= ptilde) >= p``."""
    _check_p(p)
    if family == "moment":
        return n / (1.0 - p)
    return float(chi2.ppf(p, n))


def halfspace_level(p, family="moment") -> float:
    """``ptilde`` with ``Pr(h^T e <= sqrt(ptilde h^T V h)) >= p``."""
    _check_p(p)
    if family == "moment":
        return 1.0 / (1.0 - p)
    if p < 0.5:
        raise InvalidProbability("gaussian half-space levels need p >= 0.5")
    return float(chi2.ppf(2.0 * p - 1.0, 1))


def row_levels(shape, p, family, n_rows, dim, budgets=None) -> np.ndarray:
    """Per-row ``ptilde`` for a constraint set with ``n_rows`` normals.

    ``"ellipsoid"`` uses one level for the whole set (dimension ``dim``),
    ``"halfspaces"`` gives each row the full level ``p``, and
    ``"polytope"`` splits the violation budget ``1 - p`` over the rows
    (equally unless ``budgets``, summing to at most ``1 - p``, is given).
    """
    _check_p(p)
    if n_rows == 0:
        return np.zeros(0)
    if shape == "ellipsoid":
        return np.full(n_rows, ellipsoid_level(p, dim, family))
    if shape == "halfspaces":
        return np.full(n_rows, halfspace_level(p, family))
    if shape == "polytope":
        if budgets is None:
            budgets = np.full(n_rows, (1.0 - p) / n_rows)
        budgets = np.asarray(budgets, dtype=float)
        if budgets.shape != (n_rows,) or np.any(budgets <= 0):
            raise InvalidProbability("one positive budget per row required")
        if budgets.sum() > 1.0 - p + 1e-12:
            raise InvalidProbability("row budgets exceed the violation level")
        return np.array([halfspace_level(1.0 - b, family) for b in budgets])
    raise ValueError(f"unknown shape {shape!r}")


@dataclass
class RPRSSequence:
    """Confidence sets ``E_k`` for the state error and ``E^u_k`` for ``K e_k``.

    Index ``k`` runs over ``0..T``; ``E_0 = {0}`` because ``e_0 = 0``.

    Attributes
    ----------
    shape : str
        ``"ellipsoid"``, ``"halfspaces"`` or ``"polytope"``.
    family : str
    p_x, p_u : float
    V, Vu : ndarray, shapes (T+1, n, n) and (T+1, m, m)
        Variance bounds (zero at ``k = 0``).
    state_normals, input_normals : ndarray
        Directions defining the sets (the rows of ``F`` and ``G``).
    state_levels, input_levels : ndarray
        ``ptilde`` per normal; for ellipsoids the common level repeated.
    """

    shape: str
    family: str
    p_x: float
    p_u: float
    V: np.ndarray
    Vu: np.ndarray
    state_normals: np.ndarray
    input_normals: np.ndarray
    state_levels: np.ndarray
    input_levels: np.ndarray

    @property
    def T(self) -> int:
        return self.V.shape[0] - 1

    def state_offsets(self) -> np.ndarray:
        """``sqrt(ptilde h^T V_k h)`` for every ``k`` and normal ``h``."""
        return _offsets(self.state_normals, self.V, self.state_levels)

    def input_offsets(self) -> np.ndarray:
        return _offsets(self.input_normals, self.Vu, self.input_levels)

    def contains_error(self, k, e) -> bool:
        """Membership ``e in E_k`` for a state error sample."""
        k = min(k, self.T)
        e = np.asarray(e, dtype=float)
        if k == 0:
            return bool(np.allclose(e, 0.0))
        if self.shape == "ellipsoid":
            return bool(e @ np.linalg.solve(self.V[k], e)
                        <= self.state_levels[0] if self.state_levels.size
                        else True)
        off = self.state_offsets()[k]
        return bool(np.all(self.state_normals @ e <= off))

    def error_membership(self, E) -> np.ndarray:
        """Vectorized membership for samples ``E`` of shape (N, T+1, n)."""
        E = np.asarray(E, dtype=float)
        Tn = min(E.shape[1] - 1, self.T)
        out = np.ones(E.shape[:2], dtype=bool)
        if self.shape == "ellipsoid":
            lev = self.state_levels[0]
            for k in range(1, Tn + 1):
                Vi = np.linalg.inv(self.V[k])
                q = np.einsum("ni,ij,nj->n", E[:, k], Vi, E[:, k])
                out[:, k] = q <= lev
        else:
            off = self.state_offsets()
            for k in range(1, Tn + 1):
                out[:, k] = np.all(E[:, k] @ self.state_normals.T <= off[k],
                                   axis=1)
        out[:, 0] = np.all(np.abs(E[:, 0]) < 1e-12, axis=1)
        return out


def _offsets(normals, V, levels):
    if normals.shape[0] == 0:
        return np.zeros((V.shape[0], 0))
    quad = np.einsum("ri,kij,rj->kr", normals, V, normals)
    return np.sqrt(np.maximum(quad, 0.0) * levels[None, :])


def build_rprs(bounds: VarianceBoundSequence, shape, p_x, family="moment",
               state_normals=None, input_normals=None, p_u=None,
               state_budgets=None, input_budgets=None) -> RPRSSequence:
    """Confidence sets from variance bounds.

    Parameters
    ----------
    bounds : VarianceBoundSequence
    shape : {"ellipsoid", "halfspaces", "polytope"}
    p_x : float
        Probability level for the state error sets.
    family : {"moment", "gaussian"}
    state_normals, input_normals : ndarray, optional
        Constraint normals (rows of ``F`` and ``G``). Without normals only
        the ellipsoidal description is meaningful.
    p_u : float, optional
        Level for the input sets (defaults to ``p_x``).
    state_budgets, input_budgets : ndarray, optional
        Per-row violation budgets for ``shape="polytope"``.
    """
    if shape not in SHAPES:
        raise ValueError(f"shape must be one of {SHAPES}")
    if family not in ("moment", "gaussian"):
        raise ValueError("family must be 'moment' or 'gaussian'")
    p_u = p_x if p_u is None else p_u
    _check_p(p_x)
    _check_p(p_u)
    n = bounds.bounds.shape[1]
    m = bounds.K.shape[0]
    Fn = np.zeros((0, n)) if state_normals is None else \
        np.atleast_2d(np.asarray(state_normals, dtype=float))
    Gn = np.zeros((0, m)) if input_normals is None else \
        np.atleast_2d(np.asarray(input_normals, dtype=float))
    if shape == "ellipsoid" and Fn.shape[0] == 0:
        lx = np.array([ellipsoid_level(p_x, n, family)])
    else:
        lx = row_levels(shape, p_x, family, Fn.shape[0], n, state_budgets)
    lu = row_levels(shape, p_u, family, Gn.shape[0], m, input_budgets)
    V = np.concatenate([np.zeros((1, n, n)), bounds.bounds])
    Vu = np.concatenate([np.zeros((1, m, m)), bounds.input_bounds])
    return RPRSSequence(shape, family, p_x, p_u, V, Vu, Fn, Gn, lx, lu)


@dataclass
class TighteningTable:
    """Offsets ``f_k`` (state rows) and ``g_k`` (input rows), ``k = 0..T``.

    Rows beyond ``T`` are held at the last entry (:meth:`f_at`, :meth:`g_at`).
    ``empty[k]`` flags an empty tightened state or input set at step ``k``.
    """

    f: np.ndarray
    g: np.ndarray
    empty: np.ndarray

    @property
    def T(self) -> int:
        return self.f.shape[0] - 1

    def f_at(self, k) -> np.ndarray:
        return self.f[min(k, self.T)]

    def g_at(self, k) -> np.ndarray:
        return self.g[min(k, self.T)]

    def f_window(self, k, N) -> np.ndarray:
        """``f_{k}, ..., f_{k+N-1}`` stacked (clamped)."""
        idx = np.minimum(np.arange(k, k + N), self.T)
        return self.f[idx]

    def g_window(self, k, N) -> np.ndarray:
        idx = np.minimum(np.arange(k, k + N), self.T)
        return self.g[idx]

    @property
    def f_max(self) -> np.ndarray:
        return self.f.max(axis=0) if self.f.size else np.zeros(self.f.shape[1])

    @property
    def g_max(self) -> np.ndarray:
        return self.g.max(axis=0) if self.g.size else np.zeros(self.g.shape[1])

    def to_dict(self) -> dict:
        return {"f": self.f.tolist(), "g": self.g.tolist(),
                "empty": self.empty.tolist()}


def tighten(X: Polytope, U: Polytope, rprs: RPRSSequence, K=None
            ) -> TighteningTable:
    """Tightening offsets for ``F z <= 1 - f_k`` and ``G v <= 1 - g_k``.

    Each row offset is the support of the confidence set in the row's
    direction: ``sqrt(ptilde F_r Vbar_k F_r^T)`` for half-space and
    polytopic sets (with the row's own level) and for ellipsoids (with the
    common ellipsoid level). The input sets use ``K Vbar_k K^T``, which is
    already stored in ``rprs``; ``K`` is accepted for interface symmetry.
    """
    F, G = X.H, U.H
    if rprs.shape == "ellipsoid":
        lx = np.full(F.shape[0], rprs.state_levels[0]) if F.shape[0] else \
            np.zeros(0)
        lu = np.full(G.shape[0], ellipsoid_level(rprs.p_u, G.shape[1],
                                                 rprs.family)) \
            if G.shape[0] else np.zeros(0)
    else:
        if rprs.state_normals.shape != F.shape or \
                not np.allclose(rprs.state_normals, F):
            raise ValueError("the confidence sets were built for other normals")
        lx, lu = rprs.state_levels, rprs.input_levels
    f = _offsets(F, rprs.V, lx)
    g = _offsets(G, rprs.Vu, lu)
    empty = np.zeros(f.shape[0], dtype=bool)
    for k in range(f.shape[0]):
        if F.shape[0] and Polytope(F, X.h - f[k]).is_empty():
            empty[k] = True
        if G.shape[0] and Polytope(G, U.h - g[k]).is_empty():
            empty[k] = True
    return TighteningTable(f, g, empty)
