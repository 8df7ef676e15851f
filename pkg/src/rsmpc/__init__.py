"""Robust stochastic tube MPC for linear systems with parametric model
mismatch and (possibly correlated) additive noise."""

from .errors import *  # noqa: F401,F403
from .model import (FeedbackGain, UncertainLTISystem, lqr_gain,  # noqa: F401
                    synthesize_gain, terminal_weight, verify_gain)
from .mpc import MPCConfig, MPCStepSolution, RobustStochasticMPC  # noqa: F401
from .polytope import Polytope, pontryagin_diff  # noqa: F401
from .rprs import (NoiseModel, build_rprs, correlated_variance_bounds,  # noqa: F401
                   iid_variance_bounds, tighten)
from .tube import terminal_set  # noqa: F401

__version__ = "0.1.0"
