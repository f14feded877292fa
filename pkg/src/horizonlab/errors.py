"""Exception hierarchy shared by every horizonlab module."""


class HorizonLabError(Exception):
    """Base class for all errors raised by horizonlab."""


class InvalidSpecError(HorizonLabError, ValueError):
    """A ClientSpec violates its invariants (shape, skew, stationarity)."""


class DomainError(HorizonLabError, ValueError):
    """A numeric argument lies outside the domain of a formula."""


class WindowError(HorizonLabError, ValueError):
    """No valid (input, target) window can be formed."""


class AggregationError(HorizonLabError, ValueError):
    """Client contributions cannot be combined (shape or weight mismatch)."""


class DecompositionError(HorizonLabError, ValueError):
    pass


class DegenerateSpectrumError(HorizonLabError, ValueError):
    pass


class ProjectionError(HorizonLabError, ValueError):
    pass


class DiagnosticsError(HorizonLabError, ValueError):
    pass


class VerdictError(HorizonLabError, ValueError):
    pass


class TrimError(HorizonLabError, ValueError):
    pass


class FitError(HorizonLabError, ValueError):
    """Raised by the decomposition pipeline; ``stage`` names the failing step."""

    def __init__(self, message, stage=None):
        self.stage = stage
        if stage is not None:
            message = f"[{stage}] {message}"
        super().__init__(message)


class MetricError(HorizonLabError, ValueError):
    pass


class RunError(HorizonLabError, RuntimeError):
    """A federated run cannot proceed; ``client_id`` / ``horizon`` locate it."""

    def __init__(self, message, client_id=None, horizon=None):
        self.reason = message
        self.client_id = client_id
        self.horizon = horizon
        parts = []
        if horizon is not None:
            parts.append(f"H={horizon}")
        if client_id is not None:
            parts.append(f"client={client_id}")
        if parts:
            message = f"{message} ({', '.join(parts)})"
        super().__init__(message)


class ConfigError(HorizonLabError, ValueError):
    pass


class ParseError(HorizonLabError, ValueError):
    """Malformed input file; ``line`` is 1-based."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
