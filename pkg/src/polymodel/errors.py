"""Exception types shared across the toolkit."""


class PolyModelError(Exception):
    """Base class for all toolkit errors."""


class ConstantSeriesError(PolyModelError):
    """Raised when a series has zero standard deviation and cannot be standardized."""


class SingularDesignError(PolyModelError):
    """Raised when the unpenalized normal equations are numerically singular."""


class ZeroVolatilityError(PolyModelError):
    """Raised when a ratio requires a nonzero volatility and the sample has none."""


class DomainError(PolyModelError):
    """Raised when an input is outside the mathematical domain of a formula."""


class InsufficientHistoryError(PolyModelError):
    """Raised when a factor history is too short for quantile estimation."""


class DegenerateGridError(PolyModelError):
    """Raised when all quantile values coincide and weights are undefined."""


class NoRelevantFactorsError(PolyModelError):
    """Raised when the relevant-factor set for a fund is empty."""


class NumericalError(PolyModelError):
    """Raised on non-finite activations or numerical overflow in the classifier."""


class ConfigError(PolyModelError):
    """Raised on malformed run configuration files."""
