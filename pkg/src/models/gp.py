"""
Core GP value types: hyperparameters, datasets and likelihood terms.
"""
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.errors import DimensionMismatch, EmptyData, NonPositiveParam

LOG_2PI = math.log(2.0 * math.pi)

OUTPUTSCALE = "outputscale_sq"
LENGTHSCALE = "lengthscale"
NOISE = "noise_sq"
PARAM_GROUPS = (OUTPUTSCALE, LENGTHSCALE, NOISE)


class Hyperparams(BaseModel):
    """RBF/ARD hyperparameters θ = {o², ℓ, σ²} in raw (constrained) space."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    outputscale_sq: float = Field(..., description="Signal variance o²")
    lengthscales: List[float] = Field(..., min_length=1, description="ℓ, scalar (length 1) or one per input dimension")
    noise_sq: float = Field(..., description="Observation noise variance σ²")

    @field_validator("outputscale_sq", "noise_sq")
    @classmethod
    def _positive_scalar(cls, value: float) -> float:
        if not math.isfinite(value) or value <= 0:
            raise NonPositiveParam(f"hyperparameter must be positive and finite, got {value}")
        return float(value)

    @field_validator("lengthscales")
    @classmethod
    def _positive_lengthscales(cls, values: List[float]) -> List[float]:
        for value in values:
            if not math.isfinite(value) or value <= 0:
                raise NonPositiveParam(f"lengthscales must be positive and finite, got {value}")
        return [float(v) for v in values]

    @property
    def lengthscale_array(self) -> np.ndarray:
        return np.asarray(self.lengthscales, dtype=np.float64)

    @property
    def n_params(self) -> int:
        return len(self.lengthscales) + 2

    def param_names(self) -> List[str]:
        """Names in vector order: o², ℓ₀..ℓ_{k-1}, σ²."""
        return [OUTPUTSCALE] + [f"{LENGTHSCALE}_{k}" for k in range(len(self.lengthscales))] + [NOISE]

    def to_vector(self) -> np.ndarray:
        return np.concatenate(([self.outputscale_sq], self.lengthscale_array, [self.noise_sq]))

    @classmethod
    def from_vector(cls, vector: Sequence[float]) -> "Hyperparams":
        vector = np.asarray(vector, dtype=np.float64)
        if vector.ndim != 1 or vector.size < 3:
            raise DimensionMismatch(f"hyperparameter vector needs at least 3 entries, got shape {vector.shape}")
        return cls(
            outputscale_sq=float(vector[0]),
            lengthscales=[float(v) for v in vector[1:-1]],
            noise_sq=float(vector[-1]),
        )

    def replace(self, **changes) -> "Hyperparams":
        data = self.model_dump()
        data.update(changes)
        return Hyperparams(**data)

    def group_mask(self, groups: Sequence[str]) -> np.ndarray:
        """Boolean mask over the parameter vector selecting the named groups."""
        unknown = set(groups) - set(PARAM_GROUPS)
        if unknown:
            raise ValueError(f"unknown parameter groups: {sorted(unknown)}")
        mask = np.zeros(self.n_params, dtype=bool)
        mask[0] = OUTPUTSCALE in groups
        mask[1:-1] = LENGTHSCALE in groups
        mask[-1] = NOISE in groups
        return mask


@dataclass(frozen=True)
class Standardization:
    """Per-column z-score metadata for inputs and target."""
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float

    def standardize_x(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.x_mean) / self.x_scale

    def standardize_y(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_scale

    def unstandardize_y(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=np.float64) * self.y_scale + self.y_mean

    def unstandardize_variance(self, var: np.ndarray) -> np.ndarray:
        return np.asarray(var, dtype=np.float64) * self.y_scale ** 2


@dataclass(frozen=True)
class Dataset:
    """Observed data D = {(xᵢ, yᵢ)} with optional standardization record."""
    X: np.ndarray
    y: np.ndarray
    standardization: Optional[Standardization] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=np.float64).ravel()
        if X.shape[0] == 0:
            raise EmptyData("dataset has no rows")
        if X.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class MLLTerms:
    """The two log marginal likelihood terms and the negative log-likelihood."""
    logdet: float
    invquad: float
    n: int

    @property
    def total_nll(self) -> float:
        return 0.5 * (self.logdet + self.invquad + self.n * LOG_2PI)

    def as_dict(self) -> dict:
        return {
            "logdet": self.logdet,
            "invquad": self.invquad,
            "total_nll": self.total_nll,
            "n": self.n,
        }
