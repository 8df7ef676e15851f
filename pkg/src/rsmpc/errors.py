"""Exception hierarchy shared by all modules.

Every error raised on purpose by the library derives from
:class:`RSMPCError`, so callers (and the command line front end) can map
failures to exit codes without catching unrelated exceptions.
"""


class RSMPCError(Exception):
    """Base class of all library errors."""


# --- polytopes --------------------------------------------------------------

class EmptyPolytope(RSMPCError):
    """The polytope has no points."""


class UnboundedDirection(RSMPCError):
    """A support function or vertex enumeration hit an unbounded direction."""


class DimensionTooLarge(RSMPCError):
    """Vertex enumeration was requested above the supported dimension."""


# --- optimization -----------------------------------------------------------

class SolverFailure(RSMPCError):
    """A conic solve ended without a certified optimal solution.

    Parameters
    ----------
    message : str
        Human readable description.
    status : str, optional
        Mapped status (``"Infeasible"``, ``"Unbounded"``,
        ``"NumericalFailure"``).
    info : dict, optional
        Raw solver diagnostics (iterations, residuals, timings).
    """

    def __init__(self, message, status="NumericalFailure", info=None):
        super().__init__(message)
        self.status = status
        self.info = dict(info or {})


class NumericalFailure(SolverFailure):
    """The solver stopped for numerical reasons or failed the residual check."""


class Infeasible(SolverFailure):
    """The optimization problem is (primal) infeasible."""

    def __init__(self, message, info=None):
        super().__init__(message, status="Infeasible", info=info)


# --- model ------------------------------------------------------------------

class NotQuadraticallyStable(RSMPCError):
    """No common quadratic Lyapunov function exists for the closed loop."""


class SynthesisInfeasible(RSMPCError):
    """The robust state-feedback synthesis LMI has no solution."""


class TerminalWeightInfeasible(RSMPCError):
    """No terminal weight satisfies the robust Lyapunov decrease condition."""


# --- stochastic tube --------------------------------------------------------

class CorrelationBoundViolated(RSMPCError):
    """The inner-bound problem requires a positive definite block that is not."""


class InvalidProbability(RSMPCError, ValueError):
    """A probability level outside the open interval (0, 1)."""


# --- nominal tube / controller ----------------------------------------------

class TerminalSetEmpty(RSMPCError):
    """The terminal set computation produced an empty set."""


class EstimateOutsideTheta(RSMPCError):
    """The parameter estimate lies outside the uncertainty set."""


class MissingPrevSolution(RSMPCError):
    """A step with k > 0 was requested without the previous solution."""


# --- harness ----------------------------------------------------------------

class SeedMismatch(RSMPCError):
    """Two trace collections were compared without matching seeds."""


class ConfigError(RSMPCError, ValueError):
    """An experiment configuration failed validation."""
