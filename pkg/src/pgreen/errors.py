"""Exception hierarchy.

Every error carries an ``exit_code`` so the command-line driver can map
outcomes onto its documented codes without a lookup table:
1 for configuration problems, 2 when an operator fails the edge
assumptions, 3 when a numerical routine does not converge.
"""

from __future__ import annotations


class PGreenError(Exception):
    """Base class for all library errors."""

    exit_code = 3


class ConfigError(PGreenError, ValueError):
    """Malformed input description or incompatible parameters."""

    exit_code = 1


class EmptyCoefficients(ConfigError):
    pass


class NonSymmetricMetric(ConfigError):
    pass


class CutoffTooSmall(ConfigError):
    pass


class DimensionTooSmall(ConfigError):
    pass


class SingularPoint(ConfigError):
    pass


class AssumptionViolation(PGreenError):
    """The operator does not satisfy the hypotheses at the requested edge."""

    exit_code = 2


class NotElliptic(AssumptionViolation):
    pass


class A1Violated(AssumptionViolation):
    pass


class A2Violated(AssumptionViolation):
    pass


class A3Violated(AssumptionViolation):
    pass


class A4Violated(AssumptionViolation):
    pass


class NotIsolatedMinimum(A3Violated):
    pass


class DegenerateBand(AssumptionViolation):
    pass


class LeadingTermNearZero(AssumptionViolation):
    pass


class NumericalFailure(PGreenError):
    exit_code = 3


class EigenSolverFailure(NumericalFailure):
    pass


class BranchLost(NumericalFailure):
    pass


class QuadratureNotConverged(NumericalFailure):
    pass


class TailTruncationDominates(NumericalFailure):
    pass
