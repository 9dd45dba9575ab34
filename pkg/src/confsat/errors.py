"""Exception hierarchy shared by all modules."""


class ConfsatError(Exception):
    """Base class for library errors."""


class DimensionError(ConfsatError):
    pass


class MetricError(ConfsatError):
    """Metric is not symmetric positive-definite at some node."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class SolverError(ConfsatError):
    """Eigensolver did not converge; carries the residual history."""

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class NonPrincipalModeError(SolverError):
    """Converged eigenvector changes sign after the sign fix."""


class SchemeError(ConfsatError):
    pass


class ConfigError(ConfsatError):
    """Malformed scenario or manifold configuration."""

    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line
