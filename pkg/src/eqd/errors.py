"""Exception and warning types shared across the package."""


class EqdError(Exception):
    """Base class for all package errors."""


class InvalidPoint(EqdError):
    """Raised for homogeneous coordinate vectors that define no point."""


class DimMismatch(EqdError):
    """Raised when two points live on projective spaces of different dimension."""


class InvalidMap(EqdError):
    """Raised when map data violates a family's construction contract."""


class IndeterminacyPoint(EqdError):
    """Raised when a point is too close to the indeterminacy set of a map.

    The optional ``step`` attribute records the iterate index at which an
    orbit failed.
    """

    def __init__(self, msg, step=None):
        super().__init__(msg)
        self.step = step


class NoRoots(EqdError):
    """Raised when a degree-zero polynomial is handed to the root finder."""


class DegenerateFiber(EqdError):
    """Raised when fiber multiplicities cannot be made to sum to d_t."""


class TreeTooLarge(EqdError):
    """Raised when an exact pullback tree would exceed the atom budget."""


class ExceptionalStart(EqdError):
    """Raised when backward walks collapse onto a superattracting inverse cycle."""


class PolarValue(EqdError):
    """Raised when an observable takes the value -inf at a required point."""


class BudgetExceeded(EqdError):
    """Raised when a nested fiber computation cannot respect its node budget."""


class InsufficientSignal(EqdError):
    """Raised when fewer than three correlation entries rise above the noise floor."""


class NormUnavailable(EqdError):
    """Raised when a bound check needs norm metadata that was not supplied."""


class HypothesisViolated(EqdError):
    """Raised when d_t <= d_{k-1}, outside the scope of the construction."""

    def __init__(self, msg, margin=None):
        super().__init__(msg)
        self.margin = margin


class ConfigError(EqdError):
    """Raised for malformed experiment configuration input."""


class MapParseError(ConfigError):
    """Raised for malformed map specification strings."""


class ObservableParseError(ConfigError):
    """Raised for malformed observable specification strings."""

    def __init__(self, msg, position=None):
        super().__init__(msg)
        self.position = position


class PolarMassWarning(UserWarning):
    """More than 1% of sample points were dropped at observable poles."""


class OrbitDropWarning(UserWarning):
    """More than 1% of forward orbits were dropped (indeterminacy or poles)."""


class IllConditionedRoots(UserWarning):
    """A root cluster could not be refined below the backward-error target."""
