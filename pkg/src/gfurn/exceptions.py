"""Exception hierarchy.

Validation problems derive from :class:`ValidationError` (also a
``ValueError``), numerical breakdowns from :class:`NumericalError`
(also an ``ArithmeticError``).  The CLI maps the two families to
different exit codes.
"""


class GFUError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(GFUError, ValueError):
    pass


class NumericalError(GFUError, ArithmeticError):
    pass


# spectral
class NonConstantRowSums(ValidationError):
    pass


class NegativeOffDiagonal(ValidationError):
    pass


class NonSimplePerronRoot(ValidationError):
    pass


class AmbiguousNu(ValidationError):
    pass


class SupercriticalUnsupported(ValidationError):
    pass


class OverflowDomain(NumericalError):
    pass


# rules
class InvalidProbability(ValidationError):
    pass


class EmptySupport(ValidationError):
    pass


class RowSumViolation(ValidationError):
    pass


# urn engine
class NonpositiveInitialCount(ValidationError):
    pass


class AllMassLost(NumericalError):
    pass


class MissingLog(ValidationError):
    pass


class InsufficientReplicates(ValidationError):
    pass


# limit processes
class CriticalRegime(ValidationError):
    pass


class BadGrid(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class DriverMissing(ValidationError):
    pass


class InsufficientPaths(ValidationError):
    pass


# covariance
class DimensionMismatch(ValidationError):
    pass


class QuadratureDivergence(NumericalError):
    pass


class SylvesterMismatch(NumericalError):
    pass


class NotCritical(ValidationError):
    pass


class UnsupportedJordanStructure(ValidationError):
    pass


# harness
class RegimeMismatch(ValidationError):
    pass


class SingularTheoreticalCovariance(NumericalError):
    pass


class HorizonTooShort(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class ConfigError(ValidationError):
    pass
