"""Exception hierarchy shared by all modules."""


class LogdetMlpError(Exception):
    """Base class for library errors."""


class DimensionMismatch(LogdetMlpError, ValueError):
    pass


class NotPositiveDefinite(LogdetMlpError, ValueError):
    """A Cholesky pivot was not strictly positive."""


class DegenerateCovariance(NotPositiveDefinite):
    """The empirical residual covariance is singular (or numerically so).

    The optimizers treat this as an infeasible point with value +inf.
    """


class NoConvergence(LogdetMlpError, RuntimeError):
    pass


class InfeasibleStart(LogdetMlpError, RuntimeError):
    pass


class AllRestartsInfeasible(LogdetMlpError, RuntimeError):
    pass


class NestingViolation(LogdetMlpError, RuntimeError):
    """The full model fitted worse than the nested restricted model."""


class KindMismatch(LogdetMlpError, ValueError):
    pass


class Diverged(LogdetMlpError, RuntimeError):
    """A simulated autoregressive series left the bounded region."""


class ConfigError(LogdetMlpError, ValueError):
    pass
