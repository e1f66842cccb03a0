"""
Exception hierarchy for the GP lab.

Every failure the numerical services can signal derives from ``GPLabError`` so
the CLI and the HTTP layer can translate them in one place.
"""


class GPLabError(Exception):
    """Base class for all domain errors."""


class NotPositiveDefinite(GPLabError, ValueError):
    """A Cholesky pivot was not positive (after jitter)."""


class InnerNotPositiveDefinite(NotPositiveDefinite):
    """The J×J Woodbury inner matrix ΦᵀΦ + σ²I failed to factor."""


class DimensionMismatch(GPLabError, ValueError):
    """Operand shapes are incompatible."""


class ConvergenceFailure(GPLabError):
    """An iterative eigensolver exhausted its iteration budget."""


class BreakdownError(GPLabError):
    """CG curvature dᵀAd was not positive: the operator is not SPD."""


class NegativePivot(GPLabError):
    """Pivoted Cholesky met a negative diagonal pivot."""


class NonPositiveRitzValue(GPLabError):
    """A Lanczos tridiagonal block has a Ritz value ≤ 0."""


class UnknownParam(GPLabError, KeyError):
    """A hyperparameter name is not part of the parameter set."""


class OddFeatureCount(GPLabError, ValueError):
    """RFF basis counts must be even (cos/sin pairs)."""


class PrefixOutOfRange(GPLabError, ValueError):
    """Requested feature prefix exceeds the drawn frequencies."""


class EmptySupport(GPLabError, ValueError):
    """A truncation distribution was requested over an empty support."""


class SupplierExhausted(GPLabError):
    """A series supplier ran out of terms before the requested index."""


class ZeroProbabilitySample(GPLabError):
    """A single-sample estimate was requested at an index with zero mass."""


class NonPositiveParam(GPLabError, ValueError):
    """A constrained hyperparameter was zero or negative."""


class NonFiniteGradient(GPLabError, ValueError):
    """An optimizer step received NaN or infinite gradient entries."""


class EmptyData(GPLabError, ValueError):
    """No usable rows were found in the input."""


class ParseError(GPLabError, ValueError):
    """A CSV cell could not be parsed as a finite float."""

    def __init__(self, row: int, col: int, message: str = ""):
        self.row = row
        self.col = col
        super().__init__(message or f"unparseable value at row {row}, column {col}")


class TrainingAborted(GPLabError):
    """Exact telemetry failed during training."""


class ConfigError(GPLabError, ValueError):
    """A run configuration is inconsistent."""
