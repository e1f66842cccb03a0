import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.errors import EmptySupport, SupplierExhausted, ZeroProbabilitySample
from src.services.numerics import make_rng
from src.services.truncation import (
    CallableSupplier,
    CostLedger,
    SequenceSupplier,
    TruncationDistribution,
    exponential_with_mean,
    make_exponential,
    make_from_weights,
    make_harmonic,
    make_point_mass,
    make_uniform,
    rr_combine,
    sample_truncation,
    ss_combine,
)


def families(h: int, j_min: int = 1):
    return [
        make_exponential(0.3, j_min, h),
        make_exponential(0.0, j_min, h),
        make_harmonic(j_min, h),
        make_uniform(j_min, h),
        make_from_weights(np.arange(1.0, h - j_min + 2) ** -2, j_min),
    ]


def expectation(combine, deltas, dist):
    values = [combine(SequenceSupplier(deltas), dist, int(J)) for J in dist.support]
    return float(dist.pmf @ np.asarray(values))


class TestDistributions:
    @pytest.mark.parametrize("dist", families(12, 3), ids=lambda d: d.name)
    def test_normalized_with_unit_first_survival(self, dist):
        assert_allclose(dist.pmf.sum(), 1.0, rtol=1e-15)
        assert dist.survival[0] == pytest.approx(1.0)
        assert np.all(np.diff(dist.survival) <= 0)

    def test_exponential_shape(self):
        dist = make_exponential(0.5, 2, 6)
        assert_allclose(dist.pmf[1:] / dist.pmf[:-1], np.exp(-0.5), rtol=1e-12)

    def test_rr_weights(self):
        dist = make_uniform(3, 6)
        assert_allclose(dist.rr_weights(), [1.0, 1.0, 1.0, 4 / 3, 2.0, 4.0])
        assert_allclose(dist.rr_weights(8)[6:], 0.0)

    def test_empty_support(self):
        with pytest.raises(EmptySupport):
            make_exponential(0.1, 5, 4)
        with pytest.raises(EmptySupport):
            make_from_weights([])

    @pytest.mark.parametrize("target", [5.0, 12.5, 20.0, 40.0])
    def test_exponential_with_mean(self, target):
        dist = exponential_with_mean(target, 5, 100)
        assert dist.mean() == pytest.approx(target, rel=1e-8)
        assert dist.describe()["std"] >= 0

    def test_exponential_with_mean_out_of_range(self):
        with pytest.raises(ValueError):
            exponential_with_mean(80.0, 5, 100)

    def test_sampling_matches_pmf(self):
        dist = make_harmonic(1, 6)
        draws = dist.sample(make_rng(3), size=60000)
        freq = np.bincount(draws, minlength=7)[1:] / draws.size
        se = np.sqrt(dist.pmf * (1 - dist.pmf) / draws.size)
        assert np.all(np.abs(freq - dist.pmf) < 4 * se)
        assert dist.support_min <= sample_truncation(dist, make_rng(4)) <= dist.support_max


class TestEnumerationIdentity:
    @pytest.mark.parametrize("seed", range(50))
    def test_rr_and_ss_are_unbiased(self, seed):
        rng = make_rng(seed, 5)
        h = int(rng.integers(1, 13))
        deltas = rng.standard_normal(h) * 0.7 ** np.arange(h)
        total = deltas.sum()
        for j_min in sorted({1, max(1, h // 2)}):
            for dist in families(h, j_min):
                assert abs(expectation(rr_combine, deltas, dist) - total) <= 1e-12
                assert abs(expectation(ss_combine, deltas, dist) - total) <= 1e-12

    def test_point_mass_returns_full_sum(self):
        deltas = np.array([1.0, -0.5, 0.25, 0.125])
        dist = make_point_mass(4)
        assert rr_combine(SequenceSupplier(deltas), dist, 4) == pytest.approx(0.875)
        assert ss_combine(SequenceSupplier(deltas), dist, 4) == pytest.approx(0.875)

    def test_ss_keeps_mandatory_prefix(self):
        deltas = np.array([1.0, 2.0, 3.0, 4.0])
        dist = make_uniform(3, 4)
        assert ss_combine(SequenceSupplier(deltas), dist, 4) == pytest.approx(1.0 + 2.0 + 4.0 / 0.5)

    def test_vector_terms(self):
        deltas = [np.array([1.0, 2.0]), np.array([0.5, -1.0])]
        dist = make_uniform(1, 2)
        assert_allclose(rr_combine(SequenceSupplier(deltas), dist, 2), [1.0 + 1.0, 2.0 - 2.0])


class TestVariance:
    @staticmethod
    def variance(combine, deltas, dist):
        values = np.array([combine(SequenceSupplier(deltas), dist, int(J)) for J in dist.support])
        mean = dist.pmf @ values
        return float(dist.pmf @ (values - mean) ** 2)

    @pytest.mark.parametrize("seed", range(20))
    def test_ss_weights_proportional_to_terms_minimize_variance(self, seed):
        rng = make_rng(seed, 8)
        h = int(rng.integers(2, 15))
        deltas = rng.standard_normal(h) * 0.8 ** np.arange(h)
        best = self.variance(ss_combine, deltas, make_from_weights(np.abs(deltas)))
        assert best <= self.variance(ss_combine, deltas, make_uniform(1, h)) * (1 + 1e-12) + 1e-15
        for dist in families(h):
            assert best <= self.variance(ss_combine, deltas, dist) * (1 + 1e-12) + 1e-15

    @pytest.mark.parametrize("seed", range(10))
    def test_ss_weights_proportional_to_positive_terms_have_no_variance(self, seed):
        rng = make_rng(seed, 9)
        deltas = rng.uniform(0.1, 2.0, size=8)
        assert self.variance(ss_combine, deltas, make_from_weights(deltas)) <= 1e-24 * deltas.sum() ** 2

    @pytest.mark.parametrize("combine", [rr_combine, ss_combine], ids=["rr", "ss"])
    def test_monte_carlo_random_series(self, combine):
        h = 10
        means = 0.6 ** np.arange(1, h + 1)
        dist = make_exponential(0.3, 2, h)
        replicas = 4000
        values = np.empty(replicas)
        for r in range(replicas):
            rng = make_rng(17, r)
            deltas = means + 0.5 * means * rng.standard_normal(h)
            supplier = CallableSupplier(lambda j, deltas=deltas: float(deltas[j - 1]), h)
            values[r] = combine(supplier, dist, dist.sample(rng))
        se = values.std(ddof=1) / np.sqrt(replicas)
        assert abs(values.mean() - means.sum()) < 3 * se


class TestSuppliers:
    def test_exhausted_series_raises(self):
        with pytest.raises(SupplierExhausted):
            rr_combine(SequenceSupplier([1.0, 2.0]), make_uniform(1, 4), 3)

    def test_exact_end_stops_early(self):
        supplier = SequenceSupplier([1.0, 2.0], exact_end=True)
        assert rr_combine(supplier, make_uniform(1, 4), 4) == pytest.approx(1.0 + 2.0 / 0.75)

    def test_zero_probability_sample(self):
        dist = make_from_weights([1.0, 0.0, 1.0])
        with pytest.raises(ZeroProbabilitySample):
            ss_combine(SequenceSupplier([1.0, 1.0, 1.0]), dist, 2)

    def test_out_of_support(self):
        with pytest.raises(ValueError):
            rr_combine(SequenceSupplier([1.0] * 5), make_uniform(2, 4), 5)

    def test_callable_supplier_skips_unneeded_terms(self):
        calls = []
        ledger = CostLedger()

        def term(j):
            calls.append(j)
            return float(j)

        dist = make_uniform(1, 10)
        value = ss_combine(CallableSupplier(term, 10, ledger), dist, 7)
        assert value == pytest.approx(7.0 * 10)
        assert calls == [7]
        assert ledger.terms == 1

    def test_ledger_counts_consumed_terms(self):
        ledger = CostLedger()
        rr_combine(SequenceSupplier([1.0] * 6, ledger), make_uniform(1, 6), 4)
        assert ledger.terms == 4

    def test_custom_distribution_normalizes(self):
        dist = TruncationDistribution(2, 4, np.array([2.0, 1.0, 1.0]))
        assert_allclose(dist.pmf, [0.5, 0.25, 0.25])
        assert dist.pmf_at(1) == 0.0
        assert dist.survival_at(5) == 0.0
