"""
Request and response models for the HTTP API.
"""
from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field

from src.config import get_settings
from src.models.gp import Dataset, Hyperparams


class LikelihoodMethod(str, Enum):
    """Likelihood evaluators exposed over HTTP."""
    CHOLESKY = "cholesky"
    CG = "cg"
    RFF = "rff"
    SS_RFF = "ss_rff"


class ObservedData(BaseModel):
    """Training inputs and targets."""
    X: List[List[float]] = Field(..., min_length=1, description="N×d inputs")
    y: List[float] = Field(..., min_length=1, description="N targets")
    theta: Hyperparams

    def dataset(self) -> Dataset:
        return Dataset(X=np.asarray(self.X, dtype=np.float64), y=np.asarray(self.y, dtype=np.float64))


class LikelihoodRequest(ObservedData):
    """Request model for a likelihood evaluation."""
    method: LikelihoodMethod = LikelihoodMethod.CHOLESKY
    cg_iters: int = Field(default=20, ge=1, description="CG iteration cap J")
    probes: int = Field(default=8, ge=1, description="Hutchinson probes for the CG log-determinant")
    rff_features: int = Field(default=100, ge=2, description="RFF basis functions (even)")
    ss_base_features: int = Field(default=10, ge=1, description="SS-RFF base frequency pairs")
    seed: int = Field(default_factory=lambda: get_settings().default_seed, ge=0)


class LikelihoodResponse(BaseModel):
    """Likelihood terms and, for randomized methods, the sampled truncation."""
    method: LikelihoodMethod
    n: int
    logdet: float
    invquad: float
    total_nll: float
    sampled_j: Optional[int] = None


class PredictRequest(ObservedData):
    """Request model for posterior prediction."""
    Xstar: List[List[float]] = Field(..., min_length=1, description="Test inputs")


class PredictResponse(BaseModel):
    mean: List[float]
    variance: List[float]
