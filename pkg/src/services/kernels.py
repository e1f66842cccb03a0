"""
RBF/ARD kernel evaluation and analytic derivative matrices.

k(x, x′) = o²·exp(−½ Σₖ (xₖ − x′ₖ)²/ℓₖ²), squared Euclidean distance. All
derivatives are taken with respect to the raw parameters; the log-space chain
rule lives in the training service.
"""
from typing import List

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from src.errors import DimensionMismatch, UnknownParam
from src.models.gp import LENGTHSCALE, NOISE, OUTPUTSCALE, Hyperparams


def _scaled_inputs(X: np.ndarray, theta: Hyperparams) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    ls = theta.lengthscale_array
    if ls.size not in (1, X.shape[1]):
        raise DimensionMismatch(f"{ls.size} lengthscales for {X.shape[1]}-dimensional inputs")
    return X / ls


def sq_distances(X: np.ndarray) -> np.ndarray:
    """Pairwise squared distances, symmetric by construction."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 1:
        return np.zeros((1, 1))
    return squareform(pdist(X, "sqeuclidean"))


def kernel_matrix(X: np.ndarray, theta: Hyperparams, include_noise: bool = True) -> np.ndarray:
    """K̂[i, j] = k(xᵢ, xⱼ) + σ²·𝕀(i = j) (noise optional)."""
    K = theta.outputscale_sq * np.exp(-0.5 * sq_distances(_scaled_inputs(X, theta)))
    if include_noise:
        K[np.diag_indices_from(K)] += theta.noise_sq
    return K


def cross_kernel(Xstar: np.ndarray, X: np.ndarray, theta: Hyperparams) -> np.ndarray:
    """Noiseless M×N kernel between test and training inputs."""
    A = _scaled_inputs(Xstar, theta)
    B = _scaled_inputs(X, theta)
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatch(f"test inputs have {A.shape[1]} columns, training inputs {B.shape[1]}")
    return theta.outputscale_sq * np.exp(-0.5 * cdist(A, B, "sqeuclidean"))


def kernel_grad(X: np.ndarray, theta: Hyperparams, param: str,
                base: np.ndarray | None = None) -> np.ndarray:
    """
    ∂K̂/∂param for param in ``theta.param_names()``.

    ``base`` may carry a precomputed noiseless kernel matrix.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if param == NOISE:
        return np.eye(X.shape[0])
    K = kernel_matrix(X, theta, include_noise=False) if base is None else base
    if param == OUTPUTSCALE:
        return K / theta.outputscale_sq
    if param.startswith(LENGTHSCALE + "_"):
        try:
            k = int(param[len(LENGTHSCALE) + 1:])
        except ValueError:
            raise UnknownParam(param) from None
        ls = theta.lengthscale_array
        if not 0 <= k < ls.size:
            raise UnknownParam(param)
        if ls.size == 1:
            D = sq_distances(X)
        else:
            if ls.size != X.shape[1]:
                raise DimensionMismatch(f"{ls.size} lengthscales for {X.shape[1]}-dimensional inputs")
            D = sq_distances(X[:, [k]])
        return K * D / ls[k] ** 3
    raise UnknownParam(param)


def kernel_grads(X: np.ndarray, theta: Hyperparams) -> List[np.ndarray]:
    """All derivative matrices in ``theta.param_names()`` order."""
    base = kernel_matrix(X, theta, include_noise=False)
    return [kernel_grad(X, theta, name, base=base) for name in theta.param_names()]
