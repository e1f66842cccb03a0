"""
Modified batch conjugate gradients (mBCG) with per-iteration traces.

A single mbcg call solves several right-hand sides at once and records, for
every column, the solution increments γⱼdⱼ, the step sizes and direction
coefficients, and the Lanczos tridiagonal those coefficients define. The
traces feed stochastic Lanczos quadrature, the early-truncated CG objective and
the Russian-Roulette reweighting in ``unbiased``.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from src.errors import BreakdownError, DimensionMismatch, NegativePivot, NonPositiveRitzValue
from src.models.gp import Dataset, Hyperparams, MLLTerms
from src.services.kernels import kernel_grads, kernel_matrix
from src.services.numerics import ProbeSet, SymTridiagonal, eig_sym_tridiag

logger = logging.getLogger(__name__)

TINY = 1e-300

MatVec = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Preconditioner:
    """SPD operator approximating K̂⁻¹, applied column-wise."""
    kind: str
    rank: int
    apply: MatVec
    factor: Optional[np.ndarray] = None

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity"


def identity_preconditioner() -> Preconditioner:
    return Preconditioner(kind="identity", rank=0, apply=lambda v: v)


@dataclass
class CGTrace:
    """Per-column record of an mbcg run."""
    alphas: np.ndarray
    betas: np.ndarray
    residual_norms: np.ndarray
    steps: int
    converged_at: Optional[int] = None
    increments: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def iterations(self) -> int:
        """Iterations this column actually performed."""
        return self.alphas.size

    @property
    def partial_solutions(self) -> np.ndarray:
        """x_j = Σ_{i≤j} γᵢdᵢ, one row per recorded step."""
        if self.increments is None:
            raise ValueError("trace was recorded without increments")
        return np.cumsum(self.increments, axis=0)

    @property
    def tridiag(self) -> SymTridiagonal:
        return self.tridiag_block(self.iterations)

    def tridiag_block(self, j: int) -> SymTridiagonal:
        """Leading block of the Lanczos tridiagonal from the first j iterations."""
        j = min(j, self.iterations)
        if j < 1:
            raise ValueError("trace has no iterations")
        a = self.alphas[:j]
        b = self.betas[:j]
        diag = 1.0 / a
        diag[1:] += b[:-1] / a[:-1]
        offdiag = np.sqrt(b[:-1]) / a[:-1]
        return SymTridiagonal(diag, offdiag)


def _as_matmul(A) -> MatVec:
    if callable(A):
        return A
    A = np.asarray(A, dtype=np.float64)
    return lambda V: A @ V


def mbcg(
    A,
    B: np.ndarray,
    precond: Optional[Preconditioner] = None,
    max_iter: int = 100,
    tol: float = 1e-10,
    store_increments: bool = True,
    increment_weights: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, List[CGTrace]]:
    """
    Preconditioned CG on every column of B simultaneously.

    A column stops once the 2-norm of its true residual b − A·x is at most
    ``tol`` or its curvature vanishes; afterwards it contributes zero
    increments while the other columns continue. The recurred residual
    screens candidates and an explicit A·x confirms them. With
    ``increment_weights`` (max_iter × k) the returned solutions are the
    weighted sums Σⱼ wⱼ·γⱼdⱼ instead of the plain sums.
    """
    if max_iter < 1:
        raise ValueError(f"max_iter must be ≥ 1, got {max_iter}")
    matmul = _as_matmul(A)
    precond = precond or identity_preconditioner()
    B = np.asarray(B, dtype=np.float64)
    squeeze = B.ndim == 1
    if squeeze:
        B = B[:, None]
    n, k = B.shape
    if increment_weights is not None:
        increment_weights = np.asarray(increment_weights, dtype=np.float64)
        if increment_weights.shape != (max_iter, k):
            raise DimensionMismatch(f"increment weights must be {(max_iter, k)}, got {increment_weights.shape}")

    X = np.zeros((n, k))
    X_plain = X if increment_weights is None else np.zeros((n, k))
    R = B.copy()
    Z = precond.apply(R)
    D = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    b_norms = np.linalg.norm(B, axis=0)

    active = b_norms > 0
    converged_at = np.where(active, -1, 0)
    own_iters = np.zeros(k, dtype=int)
    alphas = np.zeros((max_iter, k))
    betas = np.zeros((max_iter, k))
    res_norms = np.zeros((max_iter, k))
    increments = np.zeros((max_iter, n, k)) if store_increments else None
    D[:, ~active] = 0.0

    steps = 0
    for j in range(max_iter):
        if not active.any():
            break
        Q = matmul(D)
        if Q.shape != (n, k):
            raise DimensionMismatch(f"operator returned shape {Q.shape}, expected {(n, k)}")
        dq = np.einsum("ij,ij->j", D, Q)
        if np.any(active & (dq < 0)):
            raise BreakdownError(f"negative curvature at iteration {j + 1}: operator is not SPD")
        stalled = active & (dq <= TINY)
        if stalled.any():
            logger.warning("mbcg: %d column(s) stalled at iteration %d", int(stalled.sum()), j + 1)
            converged_at[stalled] = own_iters[stalled]
            active &= ~stalled
            D[:, stalled] = 0.0
            if not active.any():
                break

        alpha = np.where(active, rz / np.where(active, dq, 1.0), 0.0)
        step = D * alpha
        if increment_weights is None:
            X += step
        else:
            X += step * increment_weights[j]
            X_plain += step
        if store_increments:
            increments[j] = step
        R -= Q * alpha
        Z = precond.apply(R)
        rz_new = np.einsum("ij,ij->j", R, Z)
        safe_rz = np.where(rz > 0, rz, 1.0)
        beta = np.where(active & (rz > 0), rz_new / safe_rz, 0.0)
        D = Z + D * beta

        alphas[j, active] = alpha[active]
        betas[j, active] = beta[active]
        r_norm = np.linalg.norm(R, axis=0)
        res_norms[j] = r_norm
        own_iters[active] += 1
        rz = rz_new
        steps = j + 1

        done = active & (rz_new <= TINY)
        candidates = active & ~done & (r_norm <= tol)
        if candidates.any():
            true_norms = np.linalg.norm(B - matmul(X_plain), axis=0)
            done |= candidates & (true_norms <= tol)
        converged_at[done] = own_iters[done]
        active &= ~done
        D[:, ~active] = 0.0

    traces = []
    for col in range(k):
        iters = own_iters[col]
        traces.append(CGTrace(
            alphas=alphas[:iters, col].copy(),
            betas=betas[:iters, col].copy(),
            residual_norms=res_norms[:steps, col].copy(),
            steps=steps,
            converged_at=None if converged_at[col] < 0 else int(converged_at[col]),
            increments=increments[:steps, :, col].copy() if store_increments else None,
        ))
    if squeeze:
        X = X[:, 0]
    return X, traces


def pivoted_cholesky(K: np.ndarray, rank: int, noise_sq: float) -> Preconditioner:
    """
    Greedy diagonal-pivot rank-r factor L of K, used as (L·Lᵀ + σ²I)⁻¹.

    The inverse is applied with the Woodbury identity through an r×r
    Cholesky factor. Rank 0 falls back to the identity.
    """
    K = np.asarray(K, dtype=np.float64)
    n = K.shape[0]
    if not 0 <= rank <= n:
        raise ValueError(f"rank must lie in 0..{n}, got {rank}")
    if noise_sq <= 0:
        raise ValueError(f"noise_sq must be positive, got {noise_sq}")
    if rank == 0:
        return identity_preconditioner()

    L = np.zeros((n, rank))
    residual_diag = np.diagonal(K).copy()
    chosen = np.zeros(n, dtype=bool)
    scale = max(float(np.max(np.abs(residual_diag))), 1.0)
    m = 0
    for m in range(rank):
        candidates = np.where(chosen, -np.inf, residual_diag)
        i = int(np.argmax(candidates))
        pivot = residual_diag[i]
        if pivot < -1e-12 * scale:
            raise NegativePivot(f"pivot {pivot:.3e} at step {m + 1}: matrix is not positive semi-definite")
        if pivot <= 0:
            L = L[:, :m]
            break
        column = (K[:, i] - L[:, :m] @ L[i, :m]) / np.sqrt(pivot)
        column[chosen] = 0.0
        L[:, m] = column
        residual_diag -= column ** 2
        residual_diag[i] = 0.0
        chosen[i] = True
    effective = L.shape[1]
    inner = scipy.linalg.cho_factor(noise_sq * np.eye(effective) + L.T @ L, lower=True)

    def apply(V: np.ndarray) -> np.ndarray:
        return (V - L @ scipy.linalg.cho_solve(inner, L.T @ V)) / noise_sq

    return Preconditioner(kind="pivoted_cholesky", rank=effective, apply=apply, factor=L)


def invquad_cg(trace: CGTrace, y: np.ndarray) -> np.ndarray:
    """u_j = yᵀx_j for every recorded step."""
    return trace.partial_solutions @ np.asarray(y, dtype=np.float64)


def slq_logdet_samples(traces: Sequence[CGTrace], probes: ProbeSet,
                       steps: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Per-probe SLQ values ‖z‖²·Σᵢ τᵢ² log λᵢ, shape (t, len(steps)).

    Columns that converged before step j reuse their full tridiagonal.
    """
    if len(traces) != probes.t:
        raise DimensionMismatch(f"{len(traces)} traces for {probes.t} probes")
    if steps is None:
        steps = range(1, max(tr.steps for tr in traces) + 1)
    steps = list(steps)
    sq_norms = probes.sq_norms()
    values = np.zeros((probes.t, len(steps)))
    for p, trace in enumerate(traces):
        if trace.iterations == 0:
            continue
        cache = {}
        for s, j in enumerate(steps):
            block = min(j, trace.iterations)
            if block not in cache:
                evals, first = eig_sym_tridiag(trace.tridiag_block(block))
                if np.any(evals <= 0):
                    raise NonPositiveRitzValue(
                        f"Ritz value {evals.min():.3e} in block {block} of probe {p}"
                    )
                cache[block] = float(np.sum(first ** 2 * np.log(evals)))
            values[p, s] = sq_norms[p] * cache[block]
    return values


def slq_logdet(traces: Sequence[CGTrace], probes: ProbeSet,
               steps: Optional[Sequence[int]] = None) -> np.ndarray:
    """Probe-averaged SLQ log-determinant estimates v_j."""
    return slq_logdet_samples(traces, probes, steps).mean(axis=0)


def cg_estimates(
    data: Dataset,
    theta: Hyperparams,
    probes: ProbeSet,
    J: int,
    precond: Optional[Preconditioner] = None,
    tol: float = 0.0,
) -> Tuple[np.ndarray, Optional[MLLTerms]]:
    """
    Early-truncated CG gradient and the matching approximate likelihood terms.

    The objective is only reported for the identity preconditioner, where
    the tridiagonal describes K̂ itself.
    """
    if J < 1:
        raise ValueError(f"iteration cap must be ≥ 1, got {J}")
    K = kernel_matrix(data.X, theta)
    Z = probes.probes
    t = probes.t
    solutions, traces = mbcg(K, np.column_stack([Z, data.y]), precond, max_iter=J, tol=tol,
                             store_increments=False)
    U, a = solutions[:, :t], solutions[:, t]
    grad = np.empty(theta.n_params)
    for p, dK in enumerate(kernel_grads(data.X, theta)):
        trace_term = np.mean(np.einsum("ij,ij->j", U, dK @ Z))
        grad[p] = 0.5 * (trace_term - a @ dK @ a)
    terms = None
    if precond is None or precond.is_identity:
        logdet = float(slq_logdet(traces[:t], probes, steps=[J])[0])
        terms = MLLTerms(logdet=logdet, invquad=float(data.y @ a), n=data.n)
    return grad, terms


def stochastic_grad_cg(
    data: Dataset,
    theta: Hyperparams,
    probes: ProbeSet,
    J: int,
    precond: Optional[Preconditioner] = None,
    tol: float = 0.0,
) -> np.ndarray:
    """½[mean zᵀK̂_J⁻¹∂K̂z − yᵀK̂_J⁻¹∂K̂K̂_J⁻¹y] with CG capped at J iterations."""
    grad, _ = cg_estimates(data, theta, probes, J, precond, tol)
    return grad
