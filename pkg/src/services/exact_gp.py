"""
Exact (Cholesky) GP path: likelihood terms, gradient and predictive posterior.

This is the reference every approximate estimator is measured against, so it
favours plain dense algebra over cleverness.
"""
from typing import Tuple

import numpy as np
import scipy.linalg

from src.models.gp import Dataset, Hyperparams, MLLTerms
from src.services.kernels import cross_kernel, kernel_grads, kernel_matrix
from src.services.numerics import cholesky_factor, logdet_from_chol, solve_posdef


def mll_exact(data: Dataset, theta: Hyperparams) -> MLLTerms:
    """log|K̂| and yᵀK̂⁻¹y via one Cholesky factorization."""
    L = cholesky_factor(kernel_matrix(data.X, theta))
    w = scipy.linalg.solve_triangular(L, data.y, lower=True)
    return MLLTerms(logdet=logdet_from_chol(L), invquad=float(w @ w), n=data.n)


def grad_terms_exact(data: Dataset, theta: Hyperparams) -> Tuple[np.ndarray, np.ndarray]:
    """Per-parameter (tr(K̂⁻¹∂K̂), αᵀ∂K̂α) with α = K̂⁻¹y."""
    L = cholesky_factor(kernel_matrix(data.X, theta))
    K_inv = solve_posdef(L, np.eye(data.n))
    alpha = K_inv @ data.y
    dKs = kernel_grads(data.X, theta)
    traces = np.array([np.sum(K_inv * dK) for dK in dKs])
    quads = np.array([alpha @ dK @ alpha for dK in dKs])
    return traces, quads


def grad_exact(data: Dataset, theta: Hyperparams) -> np.ndarray:
    """∂(total NLL)/∂θ = ½[tr(K̂⁻¹∂K̂) − yᵀK̂⁻¹∂K̂K̂⁻¹y], raw parameters."""
    traces, quads = grad_terms_exact(data, theta)
    return 0.5 * (traces - quads)


def posterior_predict(data: Dataset, theta: Hyperparams, Xstar: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior mean K*ᵀK̂⁻¹y and noisy predictive variance."""
    L = cholesky_factor(kernel_matrix(data.X, theta))
    K_star = cross_kernel(Xstar, data.X, theta)
    mean = K_star @ solve_posdef(L, data.y)
    V = scipy.linalg.solve_triangular(L, K_star.T, lower=True)
    variance = theta.outputscale_sq - np.einsum("ij,ij->j", V, V) + theta.noise_sq
    return mean, np.maximum(variance, np.finfo(np.float64).tiny)
