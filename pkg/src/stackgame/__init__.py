"""Numerical engine for Stackelberg games enforced by a third-party penalty.

Three models share the toolkit: a repeated discrete-time duopoly, a
continuous-time duopoly with learning-by-doing, and a mean-field game with
one major and many minor firms.  Each module computes the announced
equilibrium, the leader's optimal defection, and the minimal penalty rate
that makes the announcement credible.
"""

from . import discrete, dynamic, meanfield, numerics
from .results import PenaltySearchResult

__all__ = ["discrete", "dynamic", "meanfield", "numerics", "PenaltySearchResult"]

__version__ = "0.1.0"
