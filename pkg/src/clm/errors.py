"""Exception hierarchy shared by every module in the package."""


class ClmError(Exception):
    """Base class for all package errors."""


class ShapeError(ClmError, ValueError):
    pass


class DomainError(ClmError, ValueError):
    pass


class UnboundedError(ClmError, ArithmeticError):
    pass


class NonConvergenceError(ClmError, RuntimeError):
    """Solver ran out of iterations; ``best`` holds the best iterate found."""

    def __init__(self, message, best=None, value=None):
        super().__init__(message)
        self.best = best
        self.value = value


class InfeasibleMeanError(DomainError):
    pass


class ConstructionError(ClmError, ValueError):
    """A market or scoring-rule construction failed an audit.

    ``witness`` carries the offending sample, e.g. ``(w, w_new, X)``.
    """

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class RejectedBid(ClmError, ValueError):
    pass


class LedgerStateError(ClmError, RuntimeError):
    pass


class ScheduleError(ClmError, ValueError):
    pass


class RescaleError(ClmError, ValueError):
    pass


class VoucherError(ClmError, ValueError):
    pass


class InvariantError(ClmError, RuntimeError):
    """An accounting identity failed during a run; ``witness`` has details."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class LedgerParseError(ClmError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class DigestMismatch(ClmError, ValueError):
    pass


class ConfigError(ClmError, ValueError):
    pass


class BatchError(ClmError, ValueError):
    """Rejected tabular rows; ``rows`` lists 1-based data row numbers."""

    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = list(rows)
