"""Declarative conic programs and a thin solver facade.

Problems are stated in the standard form used by Clarabel::

    minimize    1/2 x^T P x + q^T x
    subject to  b - A x  in  K_1 x K_2 x ...

with cones ``zero``, ``nonneg``, ``soc`` (second order), ``psd`` (packed
upper triangle, off-diagonals scaled by sqrt(2)) and ``exp`` (the
exponential cone ``{(u, v, w) | v exp(u / v) <= w, v > 0}``).

Matrix-valued constraints are written with :class:`Affine`, a small
expression type for matrices that are affine in the decision vector, so an
LMI can be stated as ``prog.add_psd(bmat([[S, S @ A], [A.T @ S, S]]))``.

Two backends are available: Clarabel (interior point, default) and SCS
(first order, faster on large semidefinite problems). Whatever the
backend reports, every solution marked ``Optimal`` has been re-substituted
into all constraint blocks by :func:`constraint_violation`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import Infeasible, NumericalFailure, SolverFailure

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"
NUMERICAL_FAILURE = "NumericalFailure"

#: Allowed constraint violation of a returned optimal point.
RESIDUAL_TOL = 1e-7

#: Margin used for strict matrix inequalities (``M > 0`` becomes ``M >= eps I``).
STRICT_EPS = 1e-8

_SQRT2 = np.sqrt(2.0)


# ----------------------------------------------------------------------------
# affine matrix expressions
# ----------------------------------------------------------------------------

class Affine:
    """Matrix ``const + reshape(coef @ x)`` that is affine in ``x``.

    Entries are stored in row-major order: entry ``(i, j)`` of the matrix is
    row ``i * ncols + j`` of ``coef``.

    Parameters
    ----------
    const : ndarray, shape (r, c)
    coef : sparse matrix, shape (r * c, nvars)
    """

    __array_priority__ = 100

    def __init__(self, const, coef):
        const = np.atleast_2d(np.asarray(const, dtype=float))
        self.const = const
        self.coef = sp.csr_matrix(coef)
        if self.coef.shape[0] != const.size:
            raise ValueError("coefficient rows must match the matrix size")

    @property
    def shape(self):
        return self.const.shape

    @property
    def nvars(self):
        return self.coef.shape[1]

    @property
    def T(self):
        r, c = self.shape
        perm = np.arange(r * c).reshape(r, c).T.reshape(-1)
        return Affine(self.const.T, self.coef[perm])

    def _lift(self, other):
        if isinstance(other, Affine):
            return _pad(self, other)
        other = np.asarray(other, dtype=float)
        if other.ndim == 0:
            other = np.full(self.shape, float(other))
        other = np.broadcast_to(np.atleast_2d(other), self.shape)
        return self, constant(other, self.nvars)

    def __add__(self, other):
        a, b = self._lift(other)
        return Affine(a.const + b.const, a.coef + b.coef)

    __radd__ = __add__

    def __neg__(self):
        return Affine(-self.const, -self.coef)

    def __sub__(self, other):
        return self + (-other if isinstance(other, Affine)
                       else -np.asarray(other, dtype=float))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, scalar):
        scalar = float(scalar)
        return Affine(scalar * self.const, scalar * self.coef)

    __rmul__ = __mul__

    def __matmul__(self, M):
        """``self @ M`` for a constant matrix ``M``."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        r, _ = self.shape
        op = sp.kron(sp.identity(r), sp.csr_matrix(M.T), format="csr")
        return Affine(self.const @ M, op @ self.coef)

    def __rmatmul__(self, M):
        """``M @ self`` for a constant matrix ``M``."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        _, c = self.shape
        op = sp.kron(sp.csr_matrix(M), sp.identity(c), format="csr")
        return Affine(M @ self.const, op @ self.coef)

    def __getitem__(self, key):
        r, c = self.shape
        idx = np.arange(r * c).reshape(r, c)[key]
        idx = np.atleast_2d(idx)
        return Affine(self.const.reshape(-1)[idx.reshape(-1)].reshape(idx.shape),
                      self.coef[idx.reshape(-1)])

    def value(self, x):
        """Numerical value of the expression at ``x``."""
        x = np.asarray(x, dtype=float)[:self.nvars]
        return self.const + (self.coef @ x).reshape(self.shape)

    def symmetrize(self):
        return 0.5 * (self + self.T)


def _pad(a: Affine, b: Affine):
    n = max(a.nvars, b.nvars)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return _with_nvars(a, n), _with_nvars(b, n)


def _with_nvars(a: Affine, n):
    if a.nvars == n:
        return a
    coef = sp.hstack([a.coef, sp.csr_matrix((a.coef.shape[0], n - a.nvars))])
    return Affine(a.const, coef)


def constant(M, nvars=0) -> Affine:
    """Constant expression."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return Affine(M, sp.csr_matrix((M.size, nvars)))


def bmat(blocks) -> Affine:
    """Block matrix of :class:`Affine` expressions and constant arrays.

    ``None`` entries are filled with zeros of the size implied by the other
    blocks in the same block row and column.
    """
    nvars = max((b.nvars for row in blocks for b in row
                 if isinstance(b, Affine)), default=0)
    nr, nc = len(blocks), len(blocks[0])
    heights = [None] * nr
    widths = [None] * nc
    for i, row in enumerate(blocks):
        for j, b in enumerate(row):
            if b is None:
                continue
            shape = b.shape if isinstance(b, Affine) else np.atleast_2d(b).shape
            heights[i] = shape[0]
            widths[j] = shape[1]
    if None in heights or None in widths:
        raise ValueError("cannot infer block sizes")
    rows_const = []
    for i, row in enumerate(blocks):
        consts = []
        for j, b in enumerate(row):
            if b is None:
                b = np.zeros((heights[i], widths[j]))
            e = b if isinstance(b, Affine) else constant(b, nvars)
            e = _with_nvars(e, nvars)
            if e.shape != (heights[i], widths[j]):
                raise ValueError("inconsistent block sizes")
            consts.append(e)
        rows_const.append(consts)
    const = np.block([[e.const for e in row] for row in rows_const])
    # reorder coefficient rows into row-major order of the assembled matrix
    total_c = sum(widths)
    parts = []
    index = []
    r0 = 0
    for i, row in enumerate(rows_const):
        c0 = 0
        for j, e in enumerate(row):
            h, w = heights[i], widths[j]
            rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
            index.append(((r0 + rr) * total_c + (c0 + cc)).reshape(-1))
            parts.append(e.coef)
            c0 += w
        r0 += heights[i]
    index = np.concatenate(index)
    stacked = sp.vstack(parts, format="csr")
    inv = np.empty_like(index)
    inv[index] = np.arange(index.size)
    return Affine(const, stacked[inv])


# ----------------------------------------------------------------------------
# packing of symmetric matrices
# ----------------------------------------------------------------------------

def triu_indices_colmajor(n):
    """Upper-triangle indices ordered column by column (Clarabel order)."""
    rows, cols = [], []
    for j in range(n):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
    return np.array(rows, dtype=int), np.array(cols, dtype=int)


def svec(M):
    """Pack a symmetric matrix (Clarabel order, off-diagonals times sqrt 2)."""
    M = np.asarray(M, dtype=float)
    i, j = triu_indices_colmajor(M.shape[0])
    w = np.where(i == j, 1.0, _SQRT2)
    return w * M[i, j]


def smat(v, n):
    """Inverse of :func:`svec`."""
    i, j = triu_indices_colmajor(n)
    w = np.where(i == j, 1.0, 1.0 / _SQRT2)
    M = np.zeros((n, n))
    M[i, j] = w * v
    M[j, i] = w * v
    return M


def _psd_dim(size):
    n = int(round((np.sqrt(8 * size + 1) - 1) / 2))
    if n * (n + 1) // 2 != size:
        raise ValueError("invalid packed PSD block size")
    return n


# ----------------------------------------------------------------------------
# programs
# ----------------------------------------------------------------------------

@dataclass
class _Block:
    kind: str
    A: sp.csr_matrix
    b: np.ndarray
    dim: int = 0          # PSD matrix order or SOC length


@dataclass
class ConicSolution:
    """Result of :func:`solve_conic`.

    Attributes
    ----------
    x : ndarray or None
        Primal solution vector.
    objective : float
        Objective value including the constant offset.
    status : str
        One of ``Optimal``, ``Infeasible``, ``Unbounded``,
        ``NumericalFailure``.
    info : dict
        Backend diagnostics: raw status, iterations, solve time and the
        independently computed constraint violation.
    """

    x: np.ndarray | None
    objective: float
    status: str
    info: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.status == OPTIMAL

    def require_optimal(self, what="conic program"):
        """Raise the matching :class:`SolverFailure` unless optimal."""
        if self.status == OPTIMAL:
            return self
        msg = f"{what}: {self.status} ({self.info.get('raw_status')})"
        if self.status == INFEASIBLE:
            raise Infeasible(msg, info=self.info)
        if self.status == NUMERICAL_FAILURE:
            raise NumericalFailure(msg, info=self.info)
        raise SolverFailure(msg, status=self.status, info=self.info)


class ConicProgram:
    """Conic optimization problem built incrementally.

    Variables are allocated with :meth:`var` / :meth:`sym_var` and
    returned as :class:`Affine` expressions; constraints are added in any
    order. Raw sparse rows can be added with :meth:`add_rows` when an
    expression layer would be too slow.
    """

    def __init__(self):
        self.n = 0
        self.blocks: list[_Block] = []
        self._q = []
        self._P = None
        self.q_const = 0.0
        self.names: dict[str, slice] = {}

    # ---------------------------------------------------------- variables
    def new_vars(self, size, name=None) -> slice:
        sl = slice(self.n, self.n + size)
        self.n += size
        if name is not None:
            self.names[name] = sl
        return sl

    def var(self, shape, name=None) -> Affine:
        """General matrix variable of the given shape."""
        if np.isscalar(shape):
            shape = (int(shape), 1)
        r, c = shape
        sl = self.new_vars(r * c, name)
        coef = sp.csr_matrix((np.ones(r * c), (np.arange(r * c),
                              np.arange(sl.start, sl.stop))),
                             shape=(r * c, self.n))
        return Affine(np.zeros((r, c)), coef)

    def sym_var(self, n, name=None) -> Affine:
        """Symmetric ``n x n`` matrix variable (``n(n+1)/2`` scalars)."""
        m = n * (n + 1) // 2
        sl = self.new_vars(m, name)
        iu, ju = triu_indices_colmajor(n)
        lookup = np.empty((n, n), dtype=int)
        lookup[iu, ju] = np.arange(m) + sl.start
        lookup[ju, iu] = np.arange(m) + sl.start
        coef = sp.csr_matrix((np.ones(n * n), (np.arange(n * n),
                              lookup.reshape(-1))), shape=(n * n, self.n))
        return Affine(np.zeros((n, n)), coef)

    def _expr(self, e):
        if not isinstance(e, Affine):
            e = constant(e, self.n)
        return _with_nvars(e, self.n)

    # -------------------------------------------------------- constraints
    def add_rows(self, kind, A, b, dim=0):
        """Append ``b - A x in K`` for a cone of the given kind."""
        A = sp.csr_matrix(A)
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.shape[0] != b.size:
            raise ValueError("row count mismatch")
        if kind == "psd" and dim == 0:
            dim = _psd_dim(b.size)
        if kind == "soc" and dim == 0:
            dim = b.size
        if kind == "exp" and b.size % 3:
            raise ValueError("exponential cone blocks have 3 rows each")
        self.blocks.append(_Block(kind, A, b, dim))

    def add_eq(self, lhs, rhs=0.0):
        """``lhs == rhs`` elementwise."""
        e = self._expr(lhs) - rhs
        self.add_rows("zero", e.coef, -e.const.reshape(-1))

    def add_le(self, lhs, rhs=0.0):
        """``lhs <= rhs`` elementwise."""
        e = self._expr(lhs) - rhs
        self.add_rows("nonneg", e.coef, -e.const.reshape(-1))

    def add_ge(self, lhs, rhs=0.0):
        """``lhs >= rhs`` elementwise."""
        e = self._expr(lhs) - rhs
        self.add_rows("nonneg", -e.coef, e.const.reshape(-1))

    def add_soc(self, t, x):
        """``||x||_2 <= t`` for a scalar ``t`` and a vector ``x``."""
        t = self._expr(t)
        x = self._expr(x)
        xv = Affine(x.const.reshape(-1, 1), x.coef)
        e = bmat([[t], [xv]])
        e = _with_nvars(e, self.n)
        self.add_rows("soc", -e.coef, e.const.reshape(-1))

    def add_psd(self, M, eps=0.0):
        """``M >= eps * I`` in the Loewner order (``M`` is symmetrized)."""
        M = self._expr(M)
        k = M.shape[0]
        if M.shape != (k, k):
            raise ValueError("PSD constraint needs a square matrix")
        M = M.symmetrize()
        if eps:
            M = M - eps * np.eye(k)
        iu, ju = triu_indices_colmajor(k)
        w = np.where(iu == ju, 1.0, _SQRT2)
        rows = iu * k + ju
        coef = sp.diags(w) @ M.coef[rows]
        const = w * M.const[iu, ju]
        self.add_rows("psd", -coef, const, dim=k)

    def add_exp(self, u, v, w):
        """``(u, v, w)`` in the exponential cone, i.e. ``v exp(u/v) <= w``."""
        e = bmat([[self._expr(u)], [self._expr(v)], [self._expr(w)]])
        e = _with_nvars(e, self.n)
        self.add_rows("exp", -e.coef, e.const.reshape(-1))

    # ----------------------------------------------------------- objective
    def minimize(self, linear=None, P=None, const=0.0):
        """Set the objective ``1/2 x^T P x + linear(x) + const``.

        ``linear`` is a scalar :class:`Affine` or a coefficient vector.
        """
        if linear is None:
            q = np.zeros(self.n)
        elif isinstance(linear, Affine):
            e = self._expr(linear)
            if e.shape != (1, 1):
                raise ValueError("objective must be scalar")
            q = np.asarray(e.coef.todense()).reshape(-1)
            const += float(e.const[0, 0])
        else:
            q = np.asarray(linear, dtype=float).reshape(-1)
        self._q = q
        self._P = None if P is None else sp.csc_matrix(P)
        self.q_const = float(const)
        self._sense = 1.0

    def maximize(self, linear, const=0.0):
        if isinstance(linear, Affine):
            self.minimize(-linear, const=-const)
        else:
            self.minimize(-np.asarray(linear, dtype=float), const=-const)
        self._sense = -1.0

    # ------------------------------------------------------------ assembly
    def data(self):
        """Stacked ``(P, q, A, b, blocks)`` with every block padded to ``n``."""
        n = self.n
        q = np.zeros(n)
        q[:len(self._q)] = self._q
        if self._P is None:
            P = sp.csc_matrix((n, n))
        else:
            P = sp.csc_matrix(self._P)
            if P.shape != (n, n):
                P.resize((n, n))
        mats, rhs = [], []
        for blk in self.blocks:
            A = blk.A
            if A.shape[1] < n:
                A = sp.hstack([A, sp.csr_matrix((A.shape[0], n - A.shape[1]))])
            mats.append(A)
            rhs.append(blk.b)
        A = sp.vstack(mats, format="csc") if mats else sp.csc_matrix((0, n))
        b = np.concatenate(rhs) if rhs else np.zeros(0)
        return P, q, A, b

    def objective_value(self, x):
        P, q, _, _ = self.data()
        val = 0.5 * x @ (P @ x) + q @ x + self.q_const
        return getattr(self, "_sense", 1.0) * val

    def dump(self) -> str:
        """Plain-text listing of the program for offline debugging."""
        P, q, A, b = self.data()
        lines = [f"variables {self.n}",
                 f"objective q={np.array2string(q, threshold=50)} "
                 f"quadratic_nnz={P.nnz} const={self.q_const}"]
        row = 0
        for blk in self.blocks:
            m = blk.b.size
            lines.append(f"block {blk.kind} rows={m} dim={blk.dim}")
            sub = A[row:row + m].tocoo()
            for i, j, v in zip(sub.row, sub.col, sub.data):
                lines.append(f"  A[{i},{j}] = {v:.17g}")
            lines.append("  b = " + " ".join(f"{v:.17g}" for v in blk.b))
            row += m
        return "\n".join(lines)


# ----------------------------------------------------------------------------
# independent residual check
# ----------------------------------------------------------------------------

def constraint_violation(prog: ConicProgram, x) -> float:
    """Largest violation of any constraint block at ``x``.

    Computed directly from the program data, independently of the backend:
    absolute equality residual, negative part of inequality slacks, cone
    distance for second-order blocks and negated minimum eigenvalue for
    PSD blocks.
    """
    x = np.asarray(x, dtype=float)
    worst = 0.0
    for blk in prog.blocks:
        A = blk.A
        s = blk.b - A @ x[:A.shape[1]]
        if blk.kind == "zero":
            v = np.max(np.abs(s), initial=0.0)
        elif blk.kind == "nonneg":
            v = max(0.0, -np.min(s, initial=0.0))
        elif blk.kind == "soc":
            v = max(0.0, np.linalg.norm(s[1:]) - s[0])
        elif blk.kind == "psd":
            v = max(0.0, -np.linalg.eigvalsh(smat(s, blk.dim))[0])
        elif blk.kind == "exp":
            v = 0.0
            for u, t, w in s.reshape(-1, 3):
                if t > 0:
                    v = max(v, t * np.exp(min(u / t, 700.0)) - w, -t)
                else:
                    v = max(v, -t, u, -w)
        else:
            raise ValueError(blk.kind)
        worst = max(worst, v)
    return float(worst)


# ----------------------------------------------------------------------------
# backends
# ----------------------------------------------------------------------------

_KIND_ORDER_SCS = {"zero": 0, "nonneg": 1, "soc": 2, "psd": 3, "exp": 4}


def _clarabel_cones(prog):
    import clarabel

    cones = []
    for blk in prog.blocks:
        m = blk.b.size
        if m == 0:
            continue
        if blk.kind == "zero":
            cones.append(clarabel.ZeroConeT(m))
        elif blk.kind == "nonneg":
            cones.append(clarabel.NonnegativeConeT(m))
        elif blk.kind == "soc":
            cones.append(clarabel.SecondOrderConeT(m))
        elif blk.kind == "psd":
            cones.append(clarabel.PSDTriangleConeT(blk.dim))
        elif blk.kind == "exp":
            cones.extend(clarabel.ExponentialConeT() for _ in range(m // 3))
    return cones


def clarabel_settings(verbose=False, tol=1e-9, max_iter=200, **extra):
    import clarabel

    st = clarabel.DefaultSettings()
    st.verbose = verbose
    st.tol_gap_abs = tol
    st.tol_gap_rel = tol
    st.tol_feas = tol
    st.max_iter = max_iter
    for k, v in extra.items():
        setattr(st, k, v)
    return st


_CLARABEL_STATUS = {
    "Solved": OPTIMAL,
    "AlmostSolved": OPTIMAL,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
    "DualInfeasible": UNBOUNDED,
    "AlmostDualInfeasible": UNBOUNDED,
}


def _solve_clarabel(prog, settings):
    import clarabel

    P, q, A, b = prog.data()
    solver = clarabel.DefaultSolver(sp.triu(P, format="csc"), q, A, b,
                                    _clarabel_cones(prog), settings)
    sol = solver.solve()
    raw = str(sol.status)
    status = _CLARABEL_STATUS.get(raw, NUMERICAL_FAILURE)
    info = {"raw_status": raw, "iterations": sol.iterations,
            "solve_time": sol.solve_time, "backend": "clarabel"}
    x = np.array(sol.x) if status == OPTIMAL else None
    return x, status, info


_SCS_STATUS = {
    "solved": OPTIMAL,
    "solved_inaccurate": OPTIMAL,
    "infeasible": INFEASIBLE,
    "infeasible_inaccurate": INFEASIBLE,
    "unbounded": UNBOUNDED,
    "unbounded_inaccurate": UNBOUNDED,
}


def _scs_perm_psd(k):
    """Map SCS packed order (lower, column-major) onto Clarabel order."""
    iu, ju = triu_indices_colmajor(k)
    pos = {(int(i), int(j)): t for t, (i, j) in enumerate(zip(iu, ju))}
    perm = []
    for j in range(k):
        for i in range(j, k):
            perm.append(pos[(j, i)])
    return np.array(perm, dtype=int)


def _solve_scs(prog, eps=1e-8, max_iters=200000, verbose=False):
    import scs

    P, q, A, b = prog.data()
    rows = []
    order = sorted(range(len(prog.blocks)),
                   key=lambda t: _KIND_ORDER_SCS[prog.blocks[t].kind])
    offsets = np.cumsum([0] + [blk.b.size for blk in prog.blocks])
    cone = {"z": 0, "l": 0, "q": [], "s": [], "ep": 0}
    for t in order:
        blk = prog.blocks[t]
        idx = np.arange(offsets[t], offsets[t + 1])
        if blk.kind == "psd":
            idx = idx[_scs_perm_psd(blk.dim)]
            cone["s"].append(blk.dim)
        elif blk.kind == "zero":
            cone["z"] += idx.size
        elif blk.kind == "nonneg":
            cone["l"] += idx.size
        elif blk.kind == "soc":
            cone["q"].append(idx.size)
        elif blk.kind == "exp":
            cone["ep"] += idx.size // 3
        rows.append(idx)
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=int)
    data = {"A": sp.csc_matrix(A[rows]), "b": b[rows], "c": q}
    if P.nnz:
        data["P"] = sp.triu(P, format="csc")
    solver = scs.SCS(data, cone, eps_abs=eps, eps_rel=eps, max_iters=max_iters,
                     verbose=verbose, acceleration_lookback=20)
    sol = solver.solve()
    raw = sol["info"]["status"]
    status = _SCS_STATUS.get(raw, NUMERICAL_FAILURE)
    info = {"raw_status": raw, "iterations": sol["info"]["iter"],
            "solve_time": sol["info"]["solve_time"] / 1e3, "backend": "scs"}
    x = np.array(sol["x"]) if status == OPTIMAL else None
    return x, status, info


def solve_conic(prog: ConicProgram, backend="clarabel", settings=None,
                residual_tol=RESIDUAL_TOL) -> ConicSolution:
    """Solve ``prog`` and verify the answer.

    Parameters
    ----------
    prog : ConicProgram
    backend : {"clarabel", "scs"}
    settings : dict, optional
        Backend options: for Clarabel keyword arguments of
        :func:`clarabel_settings`, for SCS ``eps``/``max_iters``.
    residual_tol : float
        Maximum constraint violation accepted for an ``Optimal`` result,
        scaled by ``max(1, |b|_inf)``.

    Returns
    -------
    ConicSolution
        The status is downgraded to ``NumericalFailure`` when the
        independent residual check fails.
    """
    settings = dict(settings or {})
    t0 = time.perf_counter()
    if backend == "clarabel":
        x, status, info = _solve_clarabel(prog, clarabel_settings(**settings))
    elif backend == "scs":
        x, status, info = _solve_scs(prog, **settings)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    info["wall_time"] = time.perf_counter() - t0
    objective = np.nan
    if status == OPTIMAL:
        viol = constraint_violation(prog, x)
        info["violation"] = viol
        scale = max(1.0, max((np.max(np.abs(blk.b), initial=0.0)
                              for blk in prog.blocks), default=0.0))
        if viol > residual_tol * scale:
            status = NUMERICAL_FAILURE
            info["reason"] = f"residual check failed ({viol:.3g})"
        objective = prog.objective_value(x)
    return ConicSolution(x, float(objective), status, info)


# ----------------------------------------------------------------------------
# max-det programs
# ----------------------------------------------------------------------------

class MaxDetProgram:
    """Maximize ``log det S`` over a symmetric ``S`` subject to LMIs.

    The constraints are added with :meth:`add_psd`, where the argument is
    an :class:`Affine` expression built from :attr:`S` (and possibly
    auxiliary variables created with :attr:`prog`).

    Parameters
    ----------
    n : int
        Order of ``S``.
    objective : {"logdet", "trace"}
        ``"trace"`` replaces the log-det objective by ``maximize tr S``, a
        cheaper surrogate whose optimum is still feasible (hence a valid
        bound) but not the max-det point.
    """

    def __init__(self, n, objective="logdet"):
        if objective not in ("logdet", "trace"):
            raise ValueError("objective must be 'logdet' or 'trace'")
        self.n = n
        self.objective = objective
        self.prog = ConicProgram()
        self.S = self.prog.sym_var(n, name="S")
        self._finalized = False

    def add_psd(self, M, eps=0.0):
        self.prog.add_psd(M, eps=eps)

    def _finalize(self):
        if self._finalized:
            return
        n = self.n
        prog = self.prog
        if self.objective == "trace":
            prog.add_psd(self.S)
            prog.maximize(_trace(self.S))
        else:
            # [S, L; L^T, diag(L)] >= 0 with L lower triangular, and
            # t_i <= log L_ii, gives log det S >= sum t_i with equality at
            # the optimum.
            m = n * (n + 1) // 2
            sl = prog.new_vars(m, name="L")
            rows, cols = np.tril_indices(n)
            coef = sp.csr_matrix((np.ones(m), (rows * n + cols,
                                  np.arange(sl.start, sl.stop))),
                                 shape=(n * n, prog.n))
            L = Affine(np.zeros((n, n)), coef)
            diag_idx = np.arange(n) * n + np.arange(n)
            dcoef = sp.csr_matrix(L.coef[diag_idx])
            D = _diag_from_vector(Affine(np.zeros((n, 1)), dcoef), n)
            prog.add_psd(bmat([[self.S, L], [L.T, D]]))
            t = prog.var((n, 1), name="t")
            for i in range(n):
                prog.add_exp(t[i, 0], constant([[1.0]]), L[i, i])
            prog.maximize(Affine(np.zeros((1, 1)),
                                 sp.csr_matrix(np.ones((1, n)) @ t.coef)))
        self._finalized = True


def _trace(X: Affine) -> Affine:
    n = X.shape[0]
    rows = np.arange(n) * n + np.arange(n)
    return Affine(np.array([[np.trace(X.const)]]),
                  sp.csr_matrix(X.coef[rows].sum(axis=0)))


def _diag_from_vector(v: Affine, n) -> Affine:
    coef = sp.lil_matrix((n * n, v.nvars))
    vc = v.coef.tolil()
    for i in range(n):
        coef[i * n + i] = vc[i]
    const = np.diag(v.const.reshape(-1))
    return Affine(const, coef.tocsr())


@dataclass
class MaxDetSolution:
    """Result of :func:`solve_maxdet`."""

    S: np.ndarray | None
    objective: float
    status: str
    info: dict = field(default_factory=dict)
    x: np.ndarray | None = None

    def require_optimal(self, what="max-det program"):
        ConicSolution(self.x, self.objective, self.status,
                      self.info).require_optimal(what)
        return self


#: Above this order of the largest PSD block the SCS backend is preferred.
SCS_THRESHOLD = 40


def solve_maxdet(mp: MaxDetProgram, backend="auto", settings=None
                 ) -> MaxDetSolution:
    """Solve a :class:`MaxDetProgram`.

    ``backend="auto"`` uses Clarabel unless the largest PSD block exceeds
    :data:`SCS_THRESHOLD`, in which case SCS (with tight tolerances) is
    considerably faster. If the chosen backend fails, the other one is
    tried before giving up.

    Returns
    -------
    MaxDetSolution
        ``objective`` is ``log det S`` (or ``tr S`` for the trace
        surrogate) evaluated on the returned matrix.
    """
    mp._finalize()
    prog = mp.prog
    if backend == "auto":
        biggest = max((blk.dim for blk in prog.blocks if blk.kind == "psd"),
                      default=0)
        order = ["scs", "clarabel"] if biggest > SCS_THRESHOLD else \
            ["clarabel", "scs"]
    else:
        order = [backend]
    settings = dict(settings or {})
    sol = None
    for name in order:
        opts = settings.get(name, {}) if settings else {}
        sol = solve_conic(prog, backend=name, settings=opts)
        if sol.ok:
            break
        if sol.status == INFEASIBLE and name == order[0] and len(order) > 1:
            continue
    if not sol.ok:
        return MaxDetSolution(None, np.nan, sol.status, sol.info)
    S = mp.S.value(sol.x)
    S = 0.5 * (S + S.T)
    if mp.objective == "trace":
        obj = float(np.trace(S))
    else:
        sign, logdet = np.linalg.slogdet(S)
        obj = float(logdet) if sign > 0 else -np.inf
    return MaxDetSolution(S, obj, OPTIMAL, sol.info, sol.x)
