import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.errors import DimensionMismatch, NotPositiveDefinite
from src.services.numerics import (
    ProbeKind,
    SymTridiagonal,
    cholesky_factor,
    eig_sym_tridiag,
    logdet_from_chol,
    make_rng,
    sample_probes,
    solve_posdef,
)
from tests.conftest import random_spd


class TestCholesky:
    def test_reconstructs_matrix(self, spd):
        L = cholesky_factor(spd)
        assert_allclose(L @ L.T, spd, rtol=1e-12, atol=1e-10)
        assert np.allclose(L, np.tril(L))

    def test_identity(self):
        assert_allclose(cholesky_factor(np.eye(4)), np.eye(4))

    def test_indefinite_raises(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_jitter_rescues_singular(self):
        A = np.ones((3, 3))
        L = cholesky_factor(A, jitter=1e-8)
        assert_allclose(L @ L.T, A + 1e-8 * np.eye(3), atol=1e-12)

    def test_non_square_raises(self):
        with pytest.raises(DimensionMismatch):
            cholesky_factor(np.ones((2, 3)))


class TestSolveAndLogdet:
    def test_solve_matches_dense(self, spd, rng):
        L = cholesky_factor(spd)
        B = rng.standard_normal((spd.shape[0], 3))
        assert_allclose(spd @ solve_posdef(L, B), B, atol=1e-9)

    def test_logdet_matches_slogdet(self, spd):
        sign, expected = np.linalg.slogdet(spd)
        assert sign > 0
        assert_allclose(logdet_from_chol(cholesky_factor(spd)), expected, rtol=1e-12)

    def test_logdet_diagonal(self):
        L = cholesky_factor(np.diag([2.0, 3.0, 5.0]))
        assert_allclose(logdet_from_chol(L), np.log(30.0), rtol=1e-14)

    def test_row_mismatch_raises(self, spd):
        with pytest.raises(DimensionMismatch):
            solve_posdef(cholesky_factor(spd), np.ones(spd.shape[0] + 1))


class TestTridiagonalEigen:
    def test_matches_dense_eigh(self, rng):
        T = SymTridiagonal(rng.uniform(2.0, 4.0, 12), rng.uniform(-0.5, 0.5, 11))
        evals, first = eig_sym_tridiag(T)
        dense_vals, dense_vecs = np.linalg.eigh(T.to_dense())
        assert_allclose(evals, dense_vals, rtol=1e-12)
        assert_allclose(first ** 2, dense_vecs[0] ** 2, atol=1e-12)
        assert_allclose(np.sum(first ** 2), 1.0, rtol=1e-12)

    def test_single_entry(self):
        evals, first = eig_sym_tridiag(SymTridiagonal(np.array([3.5]), np.array([])))
        assert_allclose(evals, [3.5])
        assert_allclose(first, [1.0])

    def test_quadrature_of_log_matches_logm(self, rng):
        T = SymTridiagonal(rng.uniform(2.0, 4.0, 6), rng.uniform(-0.5, 0.5, 5))
        evals, first = eig_sym_tridiag(T)
        dense_vals, dense_vecs = np.linalg.eigh(T.to_dense())
        expected = (dense_vecs @ np.diag(np.log(dense_vals)) @ dense_vecs.T)[0, 0]
        assert_allclose(np.sum(first ** 2 * np.log(evals)), expected, rtol=1e-12)

    def test_band_length_mismatch(self):
        with pytest.raises(DimensionMismatch):
            SymTridiagonal(np.ones(3), np.ones(3))

    def test_leading_block(self):
        T = SymTridiagonal(np.arange(1.0, 5.0), np.full(3, 0.1))
        block = T.leading(2)
        assert_allclose(block.to_dense(), T.to_dense()[:2, :2])


class TestProbes:
    def test_rademacher_entries_and_norm(self):
        probes = sample_probes(50, 7, seed=3)
        assert set(np.unique(probes.probes)) <= {-1.0, 1.0}
        assert_allclose(probes.sq_norms(), 50.0)

    def test_seed_determinism(self):
        a = sample_probes(20, 4, ProbeKind.GAUSSIAN, seed=11)
        b = sample_probes(20, 4, ProbeKind.GAUSSIAN, seed=11)
        assert_allclose(a.probes, b.probes)

    def test_second_moment_is_identity(self):
        probes = sample_probes(4, 40000, seed=5).probes
        second = probes @ probes.T / probes.shape[1]
        assert_allclose(second, np.eye(4), atol=0.03)

    def test_hutchinson_trace(self, rng):
        A = random_spd(10, rng)
        probes = sample_probes(10, 20000, seed=8).probes
        samples = np.einsum("ij,ij->j", probes, A @ probes)
        se = samples.std(ddof=1) / np.sqrt(samples.size)
        assert abs(samples.mean() - np.trace(A)) < 3 * se

    def test_streams_are_independent_and_reproducible(self):
        assert_allclose(make_rng(1, 2).standard_normal(5), make_rng(1, 2).standard_normal(5))
        assert not np.allclose(make_rng(1, 2).standard_normal(5), make_rng(1, 3).standard_normal(5))

    def test_invalid_sizes(self):
        with pytest.raises(ValueError):
            sample_probes(0, 3)
