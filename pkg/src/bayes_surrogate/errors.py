"""Exception types raised across the package."""


class SurrogateError(Exception):
    """Base class for all package errors."""


class DimensionError(SurrogateError, ValueError):
    pass


class DegenerateInputError(SurrogateError, ValueError):
    pass


class InvalidNoiseError(SurrogateError, ValueError):
    pass


class DegenerateNoiseError(SurrogateError, ValueError):
    pass


class UnsupportedPriorError(SurrogateError, ValueError):
    pass


class DomainError(SurrogateError, ValueError):
    pass


class DegenerateLiveSetError(SurrogateError, RuntimeError):
    pass


class InvalidLikelihoodError(SurrogateError, ValueError):
    pass


class EmptyResultError(SurrogateError, ValueError):
    pass


class InconsistentCacheError(SurrogateError, ValueError):
    pass


class ConfigError(SurrogateError, ValueError):
    """Invalid configuration; ``field`` names the offending key path."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class ConstrainedDrawError(SurrogateError, RuntimeError):
    """No point above the likelihood threshold was found within ``max_tries``.

    ``diagnostics`` carries the partial run state at the time of failure.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class PipelineError(SurrogateError, RuntimeError):
    """A pipeline phase failed; ``report`` is the partial report (``complete`` is False)."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
