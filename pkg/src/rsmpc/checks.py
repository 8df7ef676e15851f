"""Invariant suites shared by the ``check`` subcommand and the tests.

Each function compares the implementation against an independent route
(primal vertex LPs against the dual certificate, max-det bounds against
exact variance products, and so on) and returns a :class:`CheckResult`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rprs import exact_error_variance
from .tube import (containment_check, containment_dual,
                   terminal_invariance_check)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    data: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def random_containment_tuples(sys, K, Zbar, n_tuples, seed=0, scale=1.0):
    """Random ``(Z_i, v, Z_next)`` triples around the feasible/infeasible
    boundary: the next scaling is the exact minimal one times a random
    factor in ``[0.8, 1.2]``."""
    from .tube import containment_margin

    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_tuples):
        s = rng.normal(scale=scale, size=sys.n)
        a = rng.uniform(0.0, scale)
        v = rng.normal(scale=scale, size=sys.m)
        s2 = rng.normal(scale=scale, size=sys.n)
        # with alpha_next = 0 the margin is the minimal covering scaling
        need = containment_margin((s, a), v, (s2, 0.0), sys, K, Zbar)
        a2 = max(need, 0.0) * rng.uniform(0.8, 1.2)
        out.append(((s, a), v, (s2, a2)))
    return out


def containment_equivalence(sys, K, Zbar, n_tuples=100, seed=0, tol=1e-6
                            ) -> CheckResult:
    """Dual certificate exists iff the explicit vertex-LP check passes.

    Tuples within ``tol`` of the boundary are decided by both routes with
    the same tolerance, so agreement is required everywhere.
    """
    from .tube import containment_margin

    tuples = random_containment_tuples(sys, K, Zbar, n_tuples, seed)
    agree = 0
    mismatches = []
    n_true = 0
    for Zi, v, Zn in tuples:
        primal = containment_check(Zi, v, Zn, sys, K, Zbar, tol=tol)
        dual = containment_dual(Zi, v, Zn, sys, K, Zbar, tol=tol) is not None
        n_true += primal
        if primal == dual:
            agree += 1
        else:
            mismatches.append(containment_margin(Zi, v, Zn, sys, K, Zbar))
    return CheckResult(
        "dual/primal containment", agree == len(tuples),
        f"{agree}/{len(tuples)} agree ({n_true} contained)",
        {"agree": agree, "n": len(tuples), "n_true": n_true,
         "mismatch_margins": mismatches})


def loewner_dominance(sys, K, bounds, Sigma_W, T=None, tol=1e-7) -> CheckResult:
    """``min eig(Vbar_k - var[e_k](theta_j)) >= -tol`` for all ``k``, ``j``.

    ``var[e_k]`` is computed by the exact product formula for the stacked
    noise covariance ``Sigma_W`` (block diagonal for i.i.d. noise).
    """
    T = bounds.T if T is None else min(T, bounds.T)
    worst = np.inf
    where = None
    for j, A in enumerate(sys.vertex_closed_loops(K)):
        for k in range(1, T + 1):
            V = exact_error_variance(A, Sigma_W, k)
            lam = np.linalg.eigvalsh(bounds.bounds[k - 1] - V)[0]
            if lam < worst:
                worst, where = lam, (k, j)
    return CheckResult("Loewner dominance", worst >= -tol,
                       f"worst min-eig {worst:.3e} at (k, vertex) = {where}",
                       {"worst": worst, "where": where})


def terminal_invariance(ts, sys, K, Zbar, tol=1e-7) -> CheckResult:
    rep = terminal_invariance_check(ts, sys, K, Zbar, tol=tol)
    return CheckResult("terminal invariance", rep.passed,
                       f"worst residual {rep.worst_residual:.3e} over "
                       f"{rep.n_vertices} vertices",
                       {"worst": rep.worst_residual})


def recursive_feasibility(traces, tol=1e-6) -> CheckResult:
    """No failure after step 0 and every shifted candidate feasible."""
    bad_steps = [(t.seed, t.halted_at) for t in traces
                 if t.halted and t.halted_at > 0]
    first = [t.seed for t in traces if t.halted and t.halted_at == 0]
    cv = [float(np.max(t.candidate_violation)) for t in traces
          if t.candidate_violation is not None and t.candidate_violation.size]
    worst = max(cv) if cv else -np.inf
    # the property is conditional on a feasible start, so at least one run
    # must have started
    ok = not bad_steps and worst <= tol and len(first) < len(traces)
    return CheckResult("recursive feasibility", ok,
                       f"{len(bad_steps)} failures after step 0, "
                       f"{len(first)} infeasible starts, worst candidate "
                       f"violation {worst:.2e}",
                       {"bad": bad_steps, "first": first, "worst": worst})


def tube_soundness(traces, tol=1e-7) -> CheckResult:
    slack = [float(np.max(t.tube_slack)) for t in traces
             if t.tube_slack is not None and t.tube_slack.size]
    if not slack:
        return CheckResult("tube soundness", False, "no completed steps",
                           {"worst": None})
    worst = max(slack)
    return CheckResult("tube soundness", worst <= tol,
                       f"worst facet excess {worst:.2e}", {"worst": worst})
