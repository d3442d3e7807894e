"""Exception hierarchy shared by every module."""


class SemError(Exception):
    """Base class for all errors raised by jumpsem."""


class ConfigError(SemError, ValueError):
    """A model, campaign or design document is malformed."""


class DimensionMismatch(SemError, ValueError):
    pass


class NotSymmetric(SemError, ValueError):
    pass


class NumericalError(SemError, ArithmeticError):
    """Base for failures that signal an inadmissible parameter or data set."""


class SingularPsi(NumericalError):
    """``I - B`` is not invertible at working precision."""


class NotPositiveDefinite(NumericalError):
    """Cholesky factorisation of a covariance matrix failed."""


class NoKeptIncrements(NumericalError):
    """The jump filter discarded every increment."""


class AllStartsFailed(NumericalError):
    pass


class NoConvergedFits(NumericalError):
    pass
