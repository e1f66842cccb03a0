"""
Estimator check routes for the GP lab API.
"""
from fastapi import APIRouter

from src.config import get_settings
from src.models.lab import EstimatorCheckConfig, EstimatorCheckReport
from src.services.experiments import run_estimator_check

router = APIRouter(prefix="/estimators", tags=["estimators"])


@router.post("/check", response_model=EstimatorCheckReport)
def check_estimator(config: EstimatorCheckConfig):
    """Run one unbiasedness check and return its report."""
    return run_estimator_check(config, threads=get_settings().threads)
