"""
Finite-support truncation distributions and randomized-truncation estimators.

A series ψ = Σⱼ Δⱼ (j = 1..H) is estimated from a random truncation J:

* Russian Roulette keeps Δ₁..Δ_J, each divided by P(𝒥 ≥ j);
* Single Sample keeps only Δ_J, divided by P(𝒥 = J).

Terms below the support minimum J_min are always evaluated with weight 1.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Protocol, Sequence, Union

import numpy as np
from scipy.optimize import brentq

from src.errors import EmptySupport, SupplierExhausted, ZeroProbabilitySample

logger = logging.getLogger(__name__)

Term = Union[float, np.ndarray]


@dataclass(frozen=True)
class TruncationDistribution:
    """pmf over {support_min, …, support_max}."""
    support_min: int
    support_max: int
    pmf: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        if self.support_min < 1 or self.support_max < self.support_min:
            raise EmptySupport(f"empty support {{{self.support_min}..{self.support_max}}}")
        pmf = np.asarray(self.pmf, dtype=np.float64).ravel()
        if pmf.size != self.support_max - self.support_min + 1:
            raise EmptySupport(f"pmf has {pmf.size} entries for a support of {self.support_max - self.support_min + 1}")
        if np.any(pmf < 0) or not np.all(np.isfinite(pmf)):
            raise ValueError("pmf entries must be finite and non-negative")
        total = pmf.sum()
        if total <= 0:
            raise EmptySupport("pmf has no mass")
        object.__setattr__(self, "pmf", pmf / total)

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.support_min, self.support_max + 1)

    @property
    def cdf(self) -> np.ndarray:
        return np.cumsum(self.pmf)

    @property
    def survival(self) -> np.ndarray:
        """P(𝒥 ≥ j) on the support; the first entry is 1."""
        tail = np.cumsum(self.pmf[::-1])[::-1]
        tail[0] = 1.0
        return tail

    def pmf_at(self, j: int) -> float:
        if self.support_min <= j <= self.support_max:
            return float(self.pmf[j - self.support_min])
        return 0.0

    def survival_at(self, j: int) -> float:
        if j <= self.support_min:
            return 1.0
        if j > self.support_max:
            return 0.0
        return float(self.survival[j - self.support_min])

    def rr_weights(self, upto: Optional[int] = None) -> np.ndarray:
        """1/P(𝒥 ≥ j) for j = 1..upto (default support_max)."""
        upto = self.support_max if upto is None else upto
        weights = np.ones(upto)
        inner = np.arange(self.support_min + 1, min(upto, self.support_max) + 1)
        if inner.size:
            weights[inner - 1] = 1.0 / self.survival[inner - self.support_min]
        if upto > self.support_max:
            weights[self.support_max:] = 0.0
        return weights

    def mean(self) -> float:
        return float(self.pmf @ self.support)

    def std(self) -> float:
        centred = self.support - self.mean()
        return float(math.sqrt(self.pmf @ centred ** 2))

    def describe(self) -> dict:
        """Mean and standard deviation, the knobs used to tune λ."""
        return {
            "name": self.name,
            "support_min": self.support_min,
            "support_max": self.support_max,
            "mean": self.mean(),
            "std": self.std(),
        }

    def sample(self, rng: np.random.Generator, size: Optional[int] = None):
        draws = rng.choice(self.support, size=size, p=self.pmf)
        return int(draws) if size is None else draws.astype(int)


def make_exponential(lam: float, j_min: int, h: int) -> TruncationDistribution:
    """P(J) ∝ e^{−λJ} on {J_min..H}."""
    if lam < 0:
        raise ValueError(f"λ must be non-negative, got {lam}")
    if h < j_min:
        raise EmptySupport(f"J_min={j_min} exceeds H={h}")
    offsets = np.arange(h - j_min + 1)
    return TruncationDistribution(j_min, h, np.exp(-lam * offsets), name=f"exponential(λ={lam:g})")


def make_harmonic(j_min: int, h: int) -> TruncationDistribution:
    """P(J) ∝ 1/J, the variance-minimizing choice for single-sample RFF."""
    if h < j_min:
        raise EmptySupport(f"J_min={j_min} exceeds H={h}")
    return TruncationDistribution(j_min, h, 1.0 / np.arange(j_min, h + 1), name="harmonic")


def make_uniform(j_min: int, h: int) -> TruncationDistribution:
    if h < j_min:
        raise EmptySupport(f"J_min={j_min} exceeds H={h}")
    return TruncationDistribution(j_min, h, np.ones(h - j_min + 1), name="uniform")


def make_point_mass(j: int) -> TruncationDistribution:
    return TruncationDistribution(j, j, np.ones(1), name=f"point({j})")


def make_from_weights(weights: Sequence[float], j_min: int = 1) -> TruncationDistribution:
    """pmf ∝ weights over {j_min, …, j_min + len(weights) − 1}."""
    weights = np.abs(np.asarray(weights, dtype=np.float64))
    if weights.size == 0:
        raise EmptySupport("no weights given")
    return TruncationDistribution(j_min, j_min + weights.size - 1, weights, name="weighted")


def exponential_with_mean(target: float, j_min: int, h: int) -> TruncationDistribution:
    """Exponential distribution on {J_min..H} whose mean equals ``target``."""
    uniform_mean = 0.5 * (j_min + h)
    if not j_min <= target <= uniform_mean:
        raise ValueError(f"target mean {target} outside [{j_min}, {uniform_mean}]")
    if target == j_min:
        return make_point_mass(j_min)
    if math.isclose(target, uniform_mean):
        return make_exponential(0.0, j_min, h)
    lam = brentq(lambda x: make_exponential(x, j_min, h).mean() - target, 1e-12, 50.0, xtol=1e-12)
    return make_exponential(lam, j_min, h)


def sample_truncation(dist: TruncationDistribution, rng: np.random.Generator) -> int:
    """Draw one truncation index J."""
    return dist.sample(rng)


@dataclass
class CostLedger:
    """Work counters shared by suppliers and estimators."""
    terms: int = 0
    matvecs: int = 0
    flops: float = 0.0
    closing_blocks: int = 0
    notes: list = field(default_factory=list)

    def charge(self, terms: int = 0, matvecs: int = 0, flops: float = 0.0) -> None:
        self.terms += terms
        self.matvecs += matvecs
        self.flops += flops


class SeriesSupplier(Protocol):
    """Yields Δ₁, Δ₂, … in order; ``None`` marks exact termination (all later Δ are zero)."""
    ledger: Optional[CostLedger]

    def next_term(self) -> Optional[Term]:
        ...


class SequenceSupplier:
    """Supplier over a precomputed (or lazily generated) finite sequence."""

    def __init__(self, terms: Iterable[Term], ledger: Optional[CostLedger] = None, exact_end: bool = False):
        self._terms = iter(terms)
        self.ledger = ledger
        self.exact_end = exact_end
        self.consumed = 0

    def next_term(self) -> Optional[Term]:
        try:
            term = next(self._terms)
        except StopIteration:
            if self.exact_end:
                return None
            raise SupplierExhausted(f"series ended after {self.consumed} terms") from None
        self.consumed += 1
        if self.ledger is not None:
            self.ledger.charge(terms=1)
        return term


class CallableSupplier:
    """Supplier computing Δⱼ = fn(j) on demand for j = 1..length."""

    def __init__(self, fn: Callable[[int], Term], length: int, ledger: Optional[CostLedger] = None):
        self._fn = fn
        self.length = length
        self.ledger = ledger
        self.consumed = 0

    def next_term(self) -> Optional[Term]:
        if self.consumed >= self.length:
            raise SupplierExhausted(f"series has only {self.length} terms")
        self.consumed += 1
        if self.ledger is not None:
            self.ledger.charge(terms=1)
        return self._fn(self.consumed)

    def skip_to(self, j: int) -> None:
        """Advance so the next call yields Δⱼ without evaluating the skipped terms."""
        if j - 1 > self.length:
            raise SupplierExhausted(f"series has only {self.length} terms")
        self.consumed = max(self.consumed, j - 1)


def _check_index(dist: TruncationDistribution, J: int) -> None:
    if not dist.support_min <= J <= dist.support_max:
        raise ValueError(f"J={J} outside support {{{dist.support_min}..{dist.support_max}}}")


def rr_combine(supplier: SeriesSupplier, dist: TruncationDistribution, J: int) -> Term:
    """Σ_{j≤J} Δⱼ / P(𝒥 ≥ j), elementwise for array terms."""
    _check_index(dist, J)
    total: Term = 0.0
    for j in range(1, J + 1):
        term = supplier.next_term()
        if term is None:
            break
        total = total + term / dist.survival_at(j)
    return total


def ss_combine(supplier: SeriesSupplier, dist: TruncationDistribution, J: int) -> Term:
    """Σ_{j<J_min} Δⱼ + Δ_J / P(𝒥 = J)."""
    _check_index(dist, J)
    prob = dist.pmf_at(J)
    if prob <= 0:
        raise ZeroProbabilitySample(f"P(J={J}) = 0")
    total: Term = 0.0
    for _ in range(1, dist.support_min):
        term = supplier.next_term()
        if term is None:
            return total
        total = total + term
    skip_to = getattr(supplier, "skip_to", None)
    if skip_to is not None:
        skip_to(J)
        term = supplier.next_term()
    else:
        term = None
        for _ in range(dist.support_min, J + 1):
            term = supplier.next_term()
            if term is None:
                return total
    return total + term / prob
