"""
Bias-free estimators: Russian-Roulette CG and Single-Sample RFF.

RR-CG reweights the CG increments γⱼdⱼ by 1/P(𝒥 ≥ j) so the truncated solve
is unbiased for K̂⁻¹b. SS-RFF telescopes the RFF likelihood terms over nested
feature prefixes and keeps a single importance-weighted block, with the last
block closing onto the exact dense kernel.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from src.errors import ConfigError, PrefixOutOfRange
from src.models.gp import Dataset, Hyperparams, MLLTerms
from src.services.exact_gp import grad_exact, mll_exact
from src.services.kernels import kernel_grads, kernel_matrix
from src.services.krylov import Preconditioner, mbcg, slq_logdet_samples
from src.services.numerics import ProbeKind, ProbeSet
from src.services.rff import RFFFeatures, feature_map, mll_rff, rff_estimates, sample_features
from src.services.truncation import (
    CostLedger,
    SequenceSupplier,
    TruncationDistribution,
    make_harmonic,
    make_point_mass,
    make_uniform,
    rr_combine,
)

logger = logging.getLogger(__name__)


# ==================== Russian-Roulette CG ====================

def _rr_weight_table(dist: TruncationDistribution, Js: np.ndarray) -> np.ndarray:
    """(max J × k) table of 1/P(𝒥 ≥ j) for j ≤ Jₖ and 0 beyond."""
    max_j = int(np.max(Js))
    weights = dist.rr_weights(max_j)
    rows = np.arange(1, max_j + 1)[:, None]
    return np.where(rows <= Js[None, :], weights[:, None], 0.0)


def rrcg_solve_batch(
    A,
    B: np.ndarray,
    dist: TruncationDistribution,
    rng: np.random.Generator,
    precond: Optional[Preconditioner] = None,
    Js: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Independent RR-CG solves, one truncation draw per column of B."""
    B = np.asarray(B, dtype=np.float64)
    if B.ndim == 1:
        B = B[:, None]
    Js = dist.sample(rng, size=B.shape[1]) if Js is None else np.asarray(Js, dtype=int)
    X, _ = mbcg(A, B, precond, max_iter=int(Js.max()), tol=0.0,
                store_increments=False, increment_weights=_rr_weight_table(dist, Js))
    return X, Js


def rrcg_solve(
    A,
    b: np.ndarray,
    dist: TruncationDistribution,
    rng: np.random.Generator,
    precond: Optional[Preconditioner] = None,
) -> Tuple[np.ndarray, int]:
    """
    Σ_{j≤J} γⱼdⱼ / P(𝒥 ≥ j) for one sampled J.

    If CG terminates exactly before J the remaining increments are zero and
    the estimate equals the converged solve.
    """
    b = np.asarray(b, dtype=np.float64)
    J = dist.sample(rng)
    _, traces = mbcg(A, b[:, None], precond, max_iter=J, tol=0.0)
    trace = traces[0]
    supplier = SequenceSupplier(trace.increments[:trace.iterations],
                                exact_end=trace.converged_at is not None)
    x = rr_combine(supplier, dist, J)
    if np.isscalar(x):
        x = np.zeros_like(b)
    return x, J


def rrcg_grad_sample(
    data: Dataset,
    theta: Hyperparams,
    dist: TruncationDistribution,
    probes: ProbeSet,
    rng: np.random.Generator,
    precond: Optional[Preconditioner] = None,
    shared_solve: bool = False,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Unbiased gradient from three independent RR-CG solves and the draws used.

    K̂⁻¹z (one draw per probe), a left K̂⁻¹y and a right K̂⁻¹y each get their
    own truncation. ``shared_solve`` reuses the left solve on both sides of
    the quadratic term; that estimator is biased and only exists as a
    negative control.
    """
    K = kernel_matrix(data.X, theta)
    Z = probes.probes
    t = probes.t
    y = data.y[:, None]
    B = np.hstack([Z, y] if shared_solve else [Z, y, y])
    X, Js = rrcg_solve_batch(K, B, dist, rng, precond)
    U, left = X[:, :t], X[:, t]
    right = left if shared_solve else X[:, t + 1]
    grad = np.empty(theta.n_params)
    for p, dK in enumerate(kernel_grads(data.X, theta)):
        trace_term = np.mean(np.einsum("ij,ij->j", U, dK @ Z))
        grad[p] = 0.5 * (trace_term - left @ dK @ right)
    return grad, Js


def rrcg_grad(
    data: Dataset,
    theta: Hyperparams,
    dist: TruncationDistribution,
    probes: ProbeSet,
    rng: np.random.Generator,
    precond: Optional[Preconditioner] = None,
) -> np.ndarray:
    grad, _ = rrcg_grad_sample(data, theta, dist, probes, rng, precond)
    return grad


def rrcg_grad_replicas(
    data: Dataset,
    theta: Hyperparams,
    dist: TruncationDistribution,
    probes: ProbeSet,
    rng: np.random.Generator,
    precond: Optional[Preconditioner] = None,
    shared_solve: bool = False,
) -> np.ndarray:
    """One single-probe RR-CG gradient per probe column, shape (t, n_params)."""
    K = kernel_matrix(data.X, theta)
    Z = probes.probes
    R = probes.t
    Y = np.repeat(data.y[:, None], R, axis=1)
    B = np.hstack([Z, Y] if shared_solve else [Z, Y, Y])
    X, _ = rrcg_solve_batch(K, B, dist, rng, precond)
    U, left = X[:, :R], X[:, R:2 * R]
    right = left if shared_solve else X[:, 2 * R:]
    grads = np.empty((R, theta.n_params))
    for p, dK in enumerate(kernel_grads(data.X, theta)):
        trace_term = np.einsum("ij,ij->j", U, dK @ Z)
        quad_term = np.einsum("ij,ij->j", left, dK @ right)
        grads[:, p] = 0.5 * (trace_term - quad_term)
    return grads


def _telescoped_logdet(trace, probe: np.ndarray, dist: TruncationDistribution, J: int) -> float:
    if trace.iterations == 0:
        return 0.0
    single = ProbeSet(probes=probe[:, None], kind=ProbeKind.RADEMACHER, seed=-1)
    values = slq_logdet_samples([trace], single, steps=range(1, trace.iterations + 1))[0]
    deltas = np.diff(values, prepend=0.0)
    supplier = SequenceSupplier(deltas, exact_end=trace.converged_at is not None)
    return float(rr_combine(supplier, dist, J))


def rrcg_logdet_telescope(
    data: Dataset,
    theta: Hyperparams,
    dist: TruncationDistribution,
    probe: np.ndarray,
    rng: np.random.Generator,
) -> float:
    """RR estimate of log|K̂| over the SLQ telescope Δⱼ = vⱼ − vⱼ₋₁ (diagnostic)."""
    probe = np.asarray(probe, dtype=np.float64).ravel()
    J = dist.sample(rng)
    _, traces = mbcg(kernel_matrix(data.X, theta), probe[:, None], max_iter=J, tol=0.0,
                     store_increments=False)
    return _telescoped_logdet(traces[0], probe, dist, J)


def rrcg_logdet_replicas(
    data: Dataset,
    theta: Hyperparams,
    dist: TruncationDistribution,
    probes: ProbeSet,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """Telescoped RR log-det estimates, one replica per probe column."""
    Js = dist.sample(rng, size=probes.t)
    _, traces = mbcg(kernel_matrix(data.X, theta), probes.probes, max_iter=int(Js.max()), tol=0.0,
                     store_increments=False)
    values = np.empty(probes.t)
    for r, trace in enumerate(traces):
        # the batch ran to max J; column r only owns its first Js[r] iterations
        trace.alphas = trace.alphas[:Js[r]]
        trace.betas = trace.betas[:Js[r]]
        if trace.converged_at is not None and trace.converged_at > Js[r]:
            trace.converged_at = None
        values[r] = _telescoped_logdet(trace, probes.probes[:, r], dist, int(Js[r]))
    return values, Js


# ==================== Single-Sample RFF ====================

@dataclass(frozen=True)
class SSRFFConfig:
    """Telescope layout: base prefix J₀ pairs, step c pairs per block, block distribution."""
    base_features: int
    step: int
    dist: TruncationDistribution

    def __post_init__(self):
        if self.base_features < 1 or self.step < 1:
            raise ConfigError("base_features and step must be ≥ 1")

    @property
    def closing_block(self) -> int:
        return self.dist.support_max

    def pairs_at(self, j: int) -> int:
        """Frequency pairs at the right endpoint of block j (block 0 is the base)."""
        return self.base_features + self.step * j

    @property
    def max_pairs(self) -> int:
        """Largest prefix any low-rank term can need."""
        return self.pairs_at(self.closing_block - 1)


def make_ssrff_config(n: int, base_features: int, step: int = 1, kind: str = "harmonic",
                      j_min: int = 1) -> SSRFFConfig:
    """Size the block support so interior blocks use at most N/2 frequency pairs."""
    if base_features > n // 2:
        raise ConfigError(f"base_features={base_features} exceeds N/2={n // 2}")
    closing = max(0, (n // 2 - base_features) // step) + 1
    if kind == "harmonic":
        dist = make_harmonic(min(j_min, closing), closing)
    elif kind == "uniform":
        dist = make_uniform(min(j_min, closing), closing)
    elif kind == "closing":
        dist = make_point_mass(closing)
    else:
        raise ConfigError(f"unknown SS-RFF distribution kind: {kind}")
    return SSRFFConfig(base_features=base_features, step=step, dist=dist)


def _low_rank_flops(n: int, pairs: int) -> float:
    cols = 2 * pairs
    return float(n * cols ** 2 + cols ** 3)


def _draw(data: Dataset, theta: Hyperparams, cfg: SSRFFConfig, rng: np.random.Generator,
          features: Optional[RFFFeatures], J: Optional[int]) -> Tuple[RFFFeatures, int]:
    if J is None:
        J = cfg.dist.sample(rng)
    if features is None:
        features = sample_features(theta, data.d, 2 * cfg.max_pairs, rng)
    if features.pairs < cfg.max_pairs:
        raise PrefixOutOfRange(f"draw has {features.pairs} pairs, telescope needs {cfg.max_pairs}")
    return features, int(J)


def ssrff_mll(
    data: Dataset,
    theta: Hyperparams,
    cfg: SSRFFConfig,
    rng: np.random.Generator,
    features: Optional[RFFFeatures] = None,
    J: Optional[int] = None,
    ledger: Optional[CostLedger] = None,
) -> Tuple[MLLTerms, int]:
    """
    Single-sample estimate of (log|K̂|, yᵀK̂⁻¹y) and the block drawn.

    J is drawn before the frequencies. Both terms share J and the draw.
    """
    features, J = _draw(data, theta, cfg, rng, features, J)
    dist = cfg.dist

    def term(pairs: int) -> MLLTerms:
        if ledger is not None:
            ledger.charge(terms=1, flops=_low_rank_flops(data.n, pairs))
        return mll_rff(feature_map(data.X, features, pairs, theta), data.y, theta.noise_sq)

    base = term(cfg.pairs_at(dist.support_min - 1))
    left = base if J == dist.support_min else term(cfg.pairs_at(J - 1))
    if J == cfg.closing_block:
        right = mll_exact(data, theta)
        if ledger is not None:
            ledger.charge(terms=1, flops=data.n ** 3 / 3.0)
            ledger.closing_blocks += 1
    else:
        right = term(cfg.pairs_at(J))
    prob = dist.pmf_at(J)
    estimate = MLLTerms(
        logdet=base.logdet + (right.logdet - left.logdet) / prob,
        invquad=base.invquad + (right.invquad - left.invquad) / prob,
        n=data.n,
    )
    return estimate, J


def ssrff_estimates(
    data: Dataset,
    theta: Hyperparams,
    cfg: SSRFFConfig,
    rng: np.random.Generator,
    features: Optional[RFFFeatures] = None,
    J: Optional[int] = None,
) -> Tuple[np.ndarray, MLLTerms, int]:
    """Gradient of the single-sample NLL estimate with its terms, frequencies frozen."""
    features, J = _draw(data, theta, cfg, rng, features, J)
    dist = cfg.dist

    def term(pairs: int):
        return rff_estimates(data, theta, features, pairs)

    base_grad, base = term(cfg.pairs_at(dist.support_min - 1))
    if J == dist.support_min:
        left_grad, left = base_grad, base
    else:
        left_grad, left = term(cfg.pairs_at(J - 1))
    if J == cfg.closing_block:
        right_grad, right = grad_exact(data, theta), mll_exact(data, theta)
    else:
        right_grad, right = term(cfg.pairs_at(J))
    prob = dist.pmf_at(J)
    grad = base_grad + (right_grad - left_grad) / prob
    estimate = MLLTerms(
        logdet=base.logdet + (right.logdet - left.logdet) / prob,
        invquad=base.invquad + (right.invquad - left.invquad) / prob,
        n=data.n,
    )
    return grad, estimate, J


def ssrff_grad(
    data: Dataset,
    theta: Hyperparams,
    cfg: SSRFFConfig,
    rng: np.random.Generator,
    features: Optional[RFFFeatures] = None,
    J: Optional[int] = None,
) -> np.ndarray:
    grad, _, _ = ssrff_estimates(data, theta, cfg, rng, features, J)
    return grad
