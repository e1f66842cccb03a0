"""
Posterior prediction routes for the GP lab API.
"""
import numpy as np
from fastapi import APIRouter

from src.errors import DimensionMismatch
from src.models.api import PredictRequest, PredictResponse
from src.services.exact_gp import posterior_predict

router = APIRouter(prefix="/predict", tags=["predictions"])


@router.post("", response_model=PredictResponse)
def predict(request: PredictRequest):
    """Posterior mean and noisy predictive variance at ``Xstar``."""
    data = request.dataset()
    Xstar = np.asarray(request.Xstar, dtype=np.float64)
    if Xstar.ndim != 2 or Xstar.shape[1] != data.d:
        raise DimensionMismatch(f"Xstar must be M×{data.d}, got shape {Xstar.shape}")
    mean, variance = posterior_predict(data, request.theta, Xstar)
    return PredictResponse(mean=mean.tolist(), variance=variance.tolist())
