"""
Likelihood routes for the GP lab API.
"""
import logging

from fastapi import APIRouter

from src.errors import ConfigError
from src.models.api import LikelihoodMethod, LikelihoodRequest, LikelihoodResponse
from src.services.exact_gp import mll_exact
from src.services.krylov import cg_estimates
from src.services.numerics import make_rng, sample_probes
from src.services.rff import feature_map, mll_rff, sample_features
from src.services.unbiased import make_ssrff_config, ssrff_mll

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/likelihood", tags=["likelihood"])


@router.post("", response_model=LikelihoodResponse)
def evaluate_likelihood(request: LikelihoodRequest):
    """
    Evaluate log|K̂| and yᵀK̂⁻¹y with the requested method.

    Randomized methods draw from the stream keyed by ``seed``.
    """
    data = request.dataset()
    theta = request.theta
    rng = make_rng(request.seed)
    sampled_j = None

    if request.method is LikelihoodMethod.CHOLESKY:
        terms = mll_exact(data, theta)
    elif request.method is LikelihoodMethod.CG:
        probes = sample_probes(data.n, request.probes, rng=rng)
        _, terms = cg_estimates(data, theta, probes, request.cg_iters)
    elif request.method is LikelihoodMethod.RFF:
        J = request.rff_features
        features = sample_features(theta, data.d, J, rng)
        terms = mll_rff(feature_map(data.X, features, J // 2, theta), data.y, theta.noise_sq)
    else:
        if data.n < 2:
            raise ConfigError("ss_rff needs at least two observations")
        cfg = make_ssrff_config(data.n, request.ss_base_features)
        terms, sampled_j = ssrff_mll(data, theta, cfg, rng)

    logger.info("likelihood method=%s N=%d", request.method.value, data.n)
    return LikelihoodResponse(
        method=request.method,
        n=terms.n,
        logdet=terms.logdet,
        invquad=terms.invquad,
        total_nll=terms.total_nll,
        sampled_j=sampled_j,
    )
