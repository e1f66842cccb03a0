"""
Random Fourier features for the RBF kernel.

Frequencies are stored as base standard normals; ω = base/ℓ is formed at use
time so gradients with respect to ℓ flow through a frozen draw. Feature maps
use paired cos/sin columns, and a prefix of m frequencies is itself a valid
m-pair draw, which the single-sample telescope relies on.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
import scipy.linalg

from src.errors import DimensionMismatch, InnerNotPositiveDefinite, OddFeatureCount, PrefixOutOfRange
from src.models.gp import Dataset, Hyperparams, MLLTerms

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RFFFeatures:
    """A nested draw of J/2 frequencies, kept as base normals."""
    base: np.ndarray
    seed: Optional[int]
    theta_at_draw: Hyperparams

    @property
    def pairs(self) -> int:
        return self.base.shape[0]

    @property
    def n_basis(self) -> int:
        return 2 * self.pairs

    @property
    def omega(self) -> np.ndarray:
        return self.frequencies(self.theta_at_draw)

    def frequencies(self, theta: Hyperparams, m: Optional[int] = None) -> np.ndarray:
        """ω = base/ℓ for the first m pairs under ``theta``."""
        m = self.pairs if m is None else m
        ls = theta.lengthscale_array
        if ls.size not in (1, self.base.shape[1]):
            raise DimensionMismatch(f"{ls.size} lengthscales for {self.base.shape[1]}-dimensional frequencies")
        return self.base[:m] / ls


@dataclass(frozen=True)
class FeatureMatrix:
    """Φ (N × 2m) with its column scale √(o²/m)."""
    phi: np.ndarray
    scale: float

    @property
    def n_basis(self) -> int:
        return self.phi.shape[1]


def sample_features(theta: Hyperparams, d: int, J: int, rng: np.random.Generator,
                    seed: Optional[int] = None) -> RFFFeatures:
    """Draw J/2 frequency rows from N(0, diag(1/ℓ²)) (stored as base normals)."""
    if J < 2 or J % 2:
        raise OddFeatureCount(f"basis count must be even and ≥ 2, got {J}")
    if theta.lengthscale_array.size not in (1, d):
        raise DimensionMismatch(f"{theta.lengthscale_array.size} lengthscales for d={d}")
    return RFFFeatures(base=rng.standard_normal((J // 2, d)), seed=seed, theta_at_draw=theta)


def _projections(X: np.ndarray, features: RFFFeatures, m: int, theta: Hyperparams) -> np.ndarray:
    if not 1 <= m <= features.pairs:
        raise PrefixOutOfRange(f"prefix {m} outside 1..{features.pairs}")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] != features.base.shape[1]:
        raise DimensionMismatch(f"inputs have {X.shape[1]} columns, frequencies {features.base.shape[1]}")
    return X @ features.frequencies(theta, m).T


def feature_map(X: np.ndarray, features: RFFFeatures, m: int,
                theta: Optional[Hyperparams] = None) -> FeatureMatrix:
    """φ(x) = √(o²/m)·[cos(ωᵢᵀx), sin(ωᵢᵀx)] over the first m frequencies."""
    theta = theta or features.theta_at_draw
    Z = _projections(X, features, m, theta)
    scale = float(np.sqrt(theta.outputscale_sq / m))
    return FeatureMatrix(phi=scale * np.hstack([np.cos(Z), np.sin(Z)]), scale=scale)


def _inner_factor(phi: np.ndarray, noise_sq: float):
    inner = phi.T @ phi + noise_sq * np.eye(phi.shape[1])
    try:
        return scipy.linalg.cho_factor(inner, lower=True)
    except np.linalg.LinAlgError as exc:
        raise InnerNotPositiveDefinite(f"ΦᵀΦ + σ²I failed to factor: {exc}") from exc


def mll_rff(phi: Union[FeatureMatrix, np.ndarray], y: np.ndarray, noise_sq: float) -> MLLTerms:
    """
    Likelihood terms of K̃ = ΦΦᵀ + σ²I in O(NJ² + J³).

    Woodbury for the quadratic form, the matrix determinant lemma for the
    log-determinant.
    """
    if noise_sq <= 0:
        raise ValueError(f"noise_sq must be positive, got {noise_sq}")
    phi = phi.phi if isinstance(phi, FeatureMatrix) else np.asarray(phi, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, J = phi.shape
    if y.shape[0] != n:
        raise DimensionMismatch(f"Φ has {n} rows but y has {y.shape[0]}")
    cf = _inner_factor(phi, noise_sq)
    b = phi.T @ y
    logdet = 2.0 * np.sum(np.log(np.diagonal(cf[0]))) + (n - J) * np.log(noise_sq)
    invquad = (y @ y - b @ scipy.linalg.cho_solve(cf, b)) / noise_sq
    return MLLTerms(logdet=float(logdet), invquad=float(invquad), n=n)


def rff_estimates(data: Dataset, theta: Hyperparams, features: RFFFeatures, m: int) -> Tuple[np.ndarray, MLLTerms]:
    """Gradient of the RFF negative log-likelihood and its terms, frequencies frozen."""
    Z = _projections(data.X, features, m, theta)
    C, S = np.cos(Z), np.sin(Z)
    scale = np.sqrt(theta.outputscale_sq / m)
    phi = scale * np.hstack([C, S])
    n, J = phi.shape
    noise = theta.noise_sq
    y = data.y

    cf = _inner_factor(phi, noise)
    b = phi.T @ y
    Ainv_b = scipy.linalg.cho_solve(cf, b)
    alpha = (y - phi @ Ainv_b) / noise
    kinv_phi = scipy.linalg.cho_solve(cf, phi.T).T
    phi_alpha = phi.T @ alpha

    def contribution(dphi: np.ndarray) -> float:
        return float(np.sum(kinv_phi * dphi) - phi_alpha @ (dphi.T @ alpha))

    grad = np.empty(theta.n_params)
    grad[0] = contribution(phi / (2.0 * theta.outputscale_sq))
    ls = theta.lengthscale_array
    X = data.X
    W = features.frequencies(theta, m)
    for k in range(ls.size):
        if ls.size == 1:
            dZ = -Z / ls[0]
        else:
            dZ = -np.outer(X[:, k], W[:, k]) / ls[k]
        grad[1 + k] = contribution(scale * np.hstack([-S * dZ, C * dZ]))
    Ainv_diag_sum = np.trace(scipy.linalg.cho_solve(cf, np.eye(J)))
    trace_kinv = (n - J) / noise + Ainv_diag_sum
    grad[-1] = 0.5 * (trace_kinv - alpha @ alpha)

    logdet = 2.0 * np.sum(np.log(np.diagonal(cf[0]))) + (n - J) * np.log(noise)
    invquad = (y @ y - b @ Ainv_b) / noise
    return grad, MLLTerms(logdet=float(logdet), invquad=float(invquad), n=n)


def grad_rff(data: Dataset, theta: Hyperparams, features: RFFFeatures, m: int) -> np.ndarray:
    """∂(RFF total NLL)/∂θ for a fixed frequency draw."""
    grad, _ = rff_estimates(data, theta, features, m)
    return grad
