"""Exception types shared across the package."""


class DiffstopError(Exception):
    """Base class for all package errors."""


# --- expression language ---

class ExprSyntaxError(DiffstopError):
    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownIdentifier(DiffstopError):
    pass


class ArityMismatch(DiffstopError):
    pass


class EvalDomainError(DiffstopError):
    """Raised when evaluation leaves the expression's domain (ln of a
    negative number, division by zero, ...); carries the offending node."""

    def __init__(self, message, node):
        super().__init__(f"{message} in {node!r}")
        self.node = node


# --- problem validation ---

class ValidationError(DiffstopError):
    pass


class NonPositiveSigma(ValidationError):
    def __init__(self, x):
        super().__init__(f"sigma^2 is not positive at x={x}")
        self.x = x


class RateBelowFloor(ValidationError):
    def __init__(self, x, value, floor):
        super().__init__(f"discount rate {value} < floor {floor} at x={x}")
        self.x = x


class LocalIntegrabilityFailure(ValidationError):
    def __init__(self, lo, hi, what):
        super().__init__(f"integral of {what} over [{lo}, {hi}] exceeds cutoff")
        self.subinterval = (lo, hi)


class NegativeReward(ValidationError):
    def __init__(self, x, value):
        super().__init__(f"reward {value} < 0 at x={x}")
        self.x = x


# --- grid / fundamental pair ---

class TruncationFailure(DiffstopError):
    pass


class OverflowInExponent(DiffstopError):
    pass


class NonConvergence(DiffstopError):
    pass


class MonotonicityViolation(DiffstopError):
    pass


class OutOfSpan(DiffstopError):
    pass


class DegenerateBracket(DiffstopError):
    pass


# --- potentials / representation ---

class IntegrabilityFailure(DiffstopError):
    pass


class UnboundedRatio(DiffstopError):
    pass


class AbsorbingValueMissing(DiffstopError):
    pass


# --- excessivity / solver ---

class NegativeCandidate(DiffstopError):
    pass


class InfiniteValue(DiffstopError):
    pass


class HullDegeneracy(DiffstopError):
    pass


# --- simulation ---

class StepSizeUnstable(DiffstopError):
    pass


class ConfigError(DiffstopError):
    pass
