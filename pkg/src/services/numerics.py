"""
Dense linear-algebra and random-number substrate.

Everything here is a pure function of its inputs. Random streams come from a
counter-based Philox generator keyed by (seed, stream ids) so parallel
replicas get independent, reproducible streams.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np
import scipy.linalg

from src.errors import ConvergenceFailure, DimensionMismatch, NotPositiveDefinite

logger = logging.getLogger(__name__)

SYMMETRY_RTOL = 1e-10


class ProbeKind(str, Enum):
    """Hutchinson probe distributions."""
    RADEMACHER = "rademacher"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class SymTridiagonal:
    """Symmetric tridiagonal matrix stored by its two bands."""
    diag: np.ndarray
    offdiag: np.ndarray

    def __post_init__(self):
        diag = np.asarray(self.diag, dtype=np.float64).ravel()
        offdiag = np.asarray(self.offdiag, dtype=np.float64).ravel()
        if diag.size < 1:
            raise DimensionMismatch("tridiagonal matrix needs at least one diagonal entry")
        if offdiag.size != diag.size - 1:
            raise DimensionMismatch(f"expected {diag.size - 1} off-diagonal entries, got {offdiag.size}")
        if not (np.all(np.isfinite(diag)) and np.all(np.isfinite(offdiag))):
            raise ValueError("tridiagonal entries must be finite")
        object.__setattr__(self, "diag", diag)
        object.__setattr__(self, "offdiag", offdiag)

    @property
    def size(self) -> int:
        return self.diag.size

    def leading(self, j: int) -> "SymTridiagonal":
        """Leading j×j block."""
        if not 1 <= j <= self.size:
            raise DimensionMismatch(f"block size {j} outside 1..{self.size}")
        return SymTridiagonal(self.diag[:j], self.offdiag[:j - 1])

    def to_dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.offdiag, 1) + np.diag(self.offdiag, -1)


@dataclass(frozen=True)
class ProbeSet:
    """t probe vectors stored as the columns of an N×t matrix."""
    probes: np.ndarray
    kind: ProbeKind
    seed: int

    @property
    def n(self) -> int:
        return self.probes.shape[0]

    @property
    def t(self) -> int:
        return self.probes.shape[1]

    def sq_norms(self) -> np.ndarray:
        return np.einsum("ij,ij->j", self.probes, self.probes)


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator keyed by ``seed`` and a stream path."""
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(sequence))


def child_rngs(rng: np.random.Generator, count: int) -> list:
    """Independent child streams derived from ``rng``."""
    return list(rng.spawn(count))


def _check_square(A: np.ndarray, name: str = "matrix") -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {A.shape}")
    return A


def cholesky_factor(A: np.ndarray, jitter: float = 0.0) -> np.ndarray:
    """
    Lower Cholesky factor of A + jitter·I.

    Raises NotPositiveDefinite when a pivot is not positive; that usually
    means σ² is too small for the inputs or the matrix is corrupt.
    """
    A = _check_square(A)
    if jitter < 0:
        raise ValueError(f"jitter must be non-negative, got {jitter}")
    scale = max(np.max(np.abs(A)), 1.0)
    if np.max(np.abs(A - A.T)) > SYMMETRY_RTOL * scale:
        raise DimensionMismatch("matrix is not symmetric")
    if jitter:
        A = A + jitter * np.eye(A.shape[0])
    try:
        return scipy.linalg.cholesky(A, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NotPositiveDefinite(f"Cholesky factorization failed: {exc}") from exc


def solve_posdef(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve (L·Lᵀ)·X = B by forward and back substitution."""
    L = _check_square(L, "factor")
    B = np.asarray(B, dtype=np.float64)
    if B.shape[0] != L.shape[0]:
        raise DimensionMismatch(f"factor is {L.shape[0]}×{L.shape[0]} but right-hand side has {B.shape[0]} rows")
    return scipy.linalg.cho_solve((L, True), B, check_finite=False)


def logdet_from_chol(L: np.ndarray) -> float:
    """log|L·Lᵀ| = 2·Σ log Lᵢᵢ."""
    diag = np.diagonal(L)
    if np.any(diag <= 0):
        raise NotPositiveDefinite("Cholesky factor has a non-positive diagonal entry")
    return float(2.0 * np.sum(np.log(diag)))


def eig_sym_tridiag(T: SymTridiagonal) -> Tuple[np.ndarray, np.ndarray]:
    """
    Eigenvalues (ascending) and the first component of each unit eigenvector.

    e₁ᵀ f(T) e₁ = Σᵢ first_componentsᵢ² · f(λᵢ).
    """
    if T.size == 1:
        return T.diag.copy(), np.ones(1)
    try:
        evals, evecs = scipy.linalg.eigh_tridiagonal(T.diag, T.offdiag, lapack_driver="stev")
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(f"tridiagonal eigensolve did not converge (J={T.size}): {exc}") from exc
    return evals, evecs[0, :].copy()


def sample_probes(n: int, t: int, kind: ProbeKind = ProbeKind.RADEMACHER, seed: int = 0,
                  rng: np.random.Generator | None = None) -> ProbeSet:
    """
    Draw t Hutchinson probes of length n with E[z] = 0 and E[zzᵀ] = I.

    Rademacher probes satisfy ‖z‖² = n exactly.
    """
    if n < 1 or t < 1:
        raise ValueError(f"need n, t ≥ 1, got n={n}, t={t}")
    kind = ProbeKind(kind)
    rng = rng if rng is not None else make_rng(seed)
    if kind is ProbeKind.RADEMACHER:
        probes = rng.choice(np.array([-1.0, 1.0]), size=(n, t))
    else:
        probes = rng.standard_normal((n, t))
    return ProbeSet(probes=probes, kind=kind, seed=seed)
