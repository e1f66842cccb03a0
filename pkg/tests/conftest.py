"""
Shared fixtures: seeded generators, SPD matrices and small GP instances.
"""
import numpy as np
import pytest

from src.models.gp import Dataset, Hyperparams
from src.services.datasets import gen_gp_dataset
from src.services.numerics import make_rng


def random_spd(n: int, rng: np.random.Generator, cond: float = 100.0) -> np.ndarray:
    """Random SPD matrix with eigenvalues log-spaced over [1, cond]."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    A = (Q * np.logspace(0.0, np.log10(cond), n)) @ Q.T
    return 0.5 * (A + A.T)


def gp_instance(n: int, seed: int, d: int = 1, lengthscale: float = 0.3, outputscale_sq: float = 1.0,
                noise_sq: float = 0.1):
    theta = Hyperparams(outputscale_sq=outputscale_sq, lengthscales=[lengthscale], noise_sq=noise_sq)
    return gen_gp_dataset(n, d, theta, make_rng(seed)), theta


def central_difference(fn, theta: Hyperparams, rel_step: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function over the raw parameter vector."""
    vector = theta.to_vector()
    grad = np.empty(vector.size)
    for p in range(vector.size):
        h = rel_step * vector[p]
        up, down = vector.copy(), vector.copy()
        up[p] += h
        down[p] -= h
        grad[p] = (fn(Hyperparams.from_vector(up)) - fn(Hyperparams.from_vector(down))) / (2 * h)
    return grad


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def spd(rng):
    return random_spd(30, rng)


@pytest.fixture
def theta():
    return Hyperparams(outputscale_sq=1.3, lengthscales=[0.4], noise_sq=0.2)


@pytest.fixture
def small_gp():
    return gp_instance(40, seed=7)


@pytest.fixture
def ard_data():
    rng = make_rng(99)
    X = rng.uniform(0.0, 1.0, size=(25, 3))
    y = np.sin(3 * X[:, 0]) + X[:, 1] ** 2 + 0.1 * rng.standard_normal(25)
    return Dataset(X=X, y=y), Hyperparams(outputscale_sq=0.8, lengthscales=[0.5, 0.9, 1.4], noise_sq=0.05)
