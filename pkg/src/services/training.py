"""
Hyperparameter optimization: log reparameterization, Adam with a multi-step
learning-rate schedule, and a method-dispatched training loop.
"""
import logging
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.config import get_settings
from src.errors import ConfigError, NonFiniteGradient, NonPositiveParam, NotPositiveDefinite, TrainingAborted
from src.models.gp import Dataset, Hyperparams
from src.models.training import Method, TrainConfig, TrainRecord, TrainStep
from src.services.exact_gp import grad_exact, mll_exact
from src.services.kernels import kernel_matrix
from src.services.krylov import Preconditioner, cg_estimates, pivoted_cholesky
from src.services.numerics import make_rng, sample_probes
from src.services.rff import RFFFeatures, rff_estimates, sample_features
from src.services.truncation import (
    TruncationDistribution,
    exponential_with_mean,
    make_exponential,
    make_point_mass,
)
from src.services.unbiased import SSRFFConfig, make_ssrff_config, rrcg_grad_sample, ssrff_estimates

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


# ==================== Reparameterization ====================

def to_unconstrained(theta: Union[Hyperparams, Sequence[float]]) -> np.ndarray:
    """u = log θ, elementwise over the parameter vector."""
    vector = theta.to_vector() if isinstance(theta, Hyperparams) else np.asarray(theta, dtype=np.float64)
    if np.any(vector <= 0) or not np.all(np.isfinite(vector)):
        raise NonPositiveParam(f"cannot take log of parameters {vector}")
    return np.log(vector)


def from_unconstrained(u: Sequence[float]) -> Hyperparams:
    return Hyperparams.from_vector(np.exp(np.asarray(u, dtype=np.float64)))


def chain_rule(grad_raw: np.ndarray, theta: Hyperparams) -> np.ndarray:
    """∂L/∂u = ∂L/∂θ · θ for u = log θ."""
    return np.asarray(grad_raw) * theta.to_vector()


# ==================== Adam ====================

@dataclass(frozen=True)
class OptimState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros(cls, n: int) -> "OptimState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(state: OptimState, grad: np.ndarray, lr: float) -> Tuple[np.ndarray, OptimState]:
    """Bias-corrected Adam update; returns the parameter delta and the new state."""
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient(f"gradient has non-finite entries: {grad}")
    t = state.step_count + 1
    m = ADAM_BETA1 * state.first_moment + (1 - ADAM_BETA1) * grad
    v = ADAM_BETA2 * state.second_moment + (1 - ADAM_BETA2) * grad ** 2
    m_hat = m / (1 - ADAM_BETA1 ** t)
    v_hat = v / (1 - ADAM_BETA2 ** t)
    delta = -lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return delta, OptimState(m, v, t)


@dataclass(frozen=True)
class MultiStepSchedule:
    """lr·factor^(number of milestones passed); milestones are fractions of iters."""
    lr: float
    milestones: Tuple[float, ...]
    factor: float
    iters: int

    @property
    def milestone_steps(self) -> List[int]:
        return [int(m * self.iters) for m in self.milestones]

    def lr_at(self, step: int) -> float:
        passed = sum(step >= s for s in self.milestone_steps)
        return self.lr * self.factor ** passed


# ==================== Training loop ====================

@dataclass
class _Context:
    rr_dist: Optional[TruncationDistribution] = None
    ss_cfg: Optional[SSRFFConfig] = None
    frozen_features: Optional[RFFFeatures] = None


def rr_distribution(cfg: TrainConfig, n: int) -> TruncationDistribution:
    """Truncation distribution for RR-CG on {J_min..N}.

    A target E[J] the support cannot reach is clamped into [J_min, (J_min + N)/2].
    """
    if cfg.rr_point_mass:
        return make_point_mass(n)
    j_min = min(cfg.rr_j_min, n)
    if cfg.rr_lambda is not None:
        return make_exponential(cfg.rr_lambda, j_min, n)
    if cfg.rr_expected is None:
        raise ConfigError("rr_cg needs rr_lambda or rr_expected")
    target = min(max(cfg.rr_expected, j_min), 0.5 * (j_min + n))
    if target != cfg.rr_expected:
        logger.warning("rr_cg: E[J]=%g unreachable on {%d..%d}; using %g", cfg.rr_expected, j_min, n, target)
    try:
        return exponential_with_mean(target, j_min, n)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _build_context(data: Dataset, theta0: Hyperparams, cfg: TrainConfig) -> _Context:
    ctx = _Context()
    if cfg.method is Method.RR_CG:
        ctx.rr_dist = rr_distribution(cfg, data.n)
        logger.info("rr_cg truncation %s", ctx.rr_dist.describe())
    elif cfg.method is Method.SS_RFF:
        ctx.ss_cfg = make_ssrff_config(data.n, cfg.ss_base_features, cfg.ss_step, cfg.ss_dist)
    elif cfg.method is Method.RFF and cfg.freeze_features:
        ctx.frozen_features = sample_features(theta0, data.d, cfg.rff_features, make_rng(cfg.seed, 0xFEA7))
    return ctx


def _preconditioner(data: Dataset, theta: Hyperparams, cfg: TrainConfig) -> Optional[Preconditioner]:
    if cfg.precond_rank == 0:
        return None
    K = kernel_matrix(data.X, theta, include_noise=False)
    return pivoted_cholesky(K, min(cfg.precond_rank, data.n), theta.noise_sq)


def estimate_gradient(
    data: Dataset,
    theta: Hyperparams,
    cfg: TrainConfig,
    rng: np.random.Generator,
    ctx: Optional[_Context] = None,
) -> Tuple[np.ndarray, Optional[float], List[int]]:
    """Raw-space gradient, approximate objective (if any) and sampled truncations."""
    ctx = ctx or _build_context(data, theta, cfg)
    method = cfg.method
    if method is Method.CHOLESKY:
        return grad_exact(data, theta), mll_exact(data, theta).total_nll, []
    if method in (Method.CG, Method.RR_CG):
        probes = sample_probes(data.n, cfg.probes, rng=rng)
        precond = _preconditioner(data, theta, cfg)
        if method is Method.CG:
            grad, terms = cg_estimates(data, theta, probes, cfg.cg_iters, precond, cfg.cg_tol)
            return grad, None if terms is None else terms.total_nll, []
        grad, js = rrcg_grad_sample(data, theta, ctx.rr_dist, probes, rng, precond)
        return grad, None, [int(j) for j in js]
    if method is Method.RFF:
        features = ctx.frozen_features or sample_features(theta, data.d, cfg.rff_features, rng)
        grad, terms = rff_estimates(data, theta, features, cfg.rff_features // 2)
        return grad, terms.total_nll, []
    grad, terms, J = ssrff_estimates(data, theta, ctx.ss_cfg, rng)
    return grad, terms.total_nll, [J]


def _exact_nll(data: Dataset, theta: Hyperparams, step: int) -> float:
    try:
        return mll_exact(data, theta).total_nll
    except NotPositiveDefinite as exc:
        raise TrainingAborted(
            f"exact telemetry failed at step {step} with θ={theta.to_vector().tolist()}: {exc}"
        ) from exc


def train(data: Dataset, theta0: Hyperparams, cfg: TrainConfig) -> TrainRecord:
    """
    Optimize θ in log space with Adam and a multi-step schedule.

    Every step draws its probes, features and truncations from its own
    stream (seed, step), so identical inputs give identical records.
    """
    settings = get_settings()
    exact_telemetry = cfg.exact_telemetry
    if exact_telemetry is None:
        exact_telemetry = data.n <= settings.exact_telemetry_max_n
    schedule = MultiStepSchedule(cfg.lr, tuple(cfg.schedule_milestones), cfg.schedule_factor, cfg.iters)
    ctx = _build_context(data, theta0, cfg)
    mask = theta0.group_mask(cfg.trainable)
    log_every = cfg.log_every or max(1, cfg.iters // 10)

    theta = theta0
    u = to_unconstrained(theta)
    state = OptimState.zeros(u.size)
    steps: List[TrainStep] = []
    logger.info("training method=%s N=%d iters=%d lr=%g", cfg.method.value, data.n, cfg.iters, cfg.lr)

    for step in range(cfg.iters):
        started = time.perf_counter()
        lr = schedule.lr_at(step)
        rng = make_rng(cfg.seed, step)
        grad_raw, objective, sampled = estimate_gradient(data, theta, cfg, rng, ctx)
        grad_u = np.where(mask, chain_rule(grad_raw, theta), 0.0)
        exact = None
        if exact_telemetry:
            exact = objective if cfg.method is Method.CHOLESKY else _exact_nll(data, theta, step)
        delta, state = adam_step(state, grad_u, lr)
        steps.append(TrainStep(
            step=step,
            lr=lr,
            theta=theta.to_vector().tolist(),
            objective=objective,
            exact_nll=exact,
            grad_norm=float(np.linalg.norm(grad_u)),
            sampled_j=sampled,
            wall_time=time.perf_counter() - started,
        ))
        if (step + 1) % log_every == 0:
            logger.info("step %d/%d lr=%.2e |g|=%.3e exact=%s", step + 1, cfg.iters, lr,
                        steps[-1].grad_norm, "n/a" if exact is None else f"{exact:.6f}")
        u = u + delta
        theta = from_unconstrained(u)

    final_exact = _exact_nll(data, theta, cfg.iters) if exact_telemetry else None
    return TrainRecord(method=cfg.method, steps=steps, final_theta=theta, final_exact_nll=final_exact)
