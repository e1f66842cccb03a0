import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.errors import ConfigError
from src.models.lab import EstimatorCheckConfig, InstanceSpec, LengthscaleStudyConfig, TruncationSpec
from src.services import experiments
from src.services.datasets import read_csv_rows
from src.services.experiments import (
    bias_sweep,
    build_truncation,
    estimator_check,
    mean_se,
    median_log_ratios,
    run_estimator_check,
    run_lengthscale_study,
    run_replicas,
    write_bias_sweep_csv,
    write_lengthscale_csv,
)
from src.services.numerics import make_rng
from tests.conftest import gp_instance


@pytest.fixture
def sweep_instance():
    return gp_instance(30, seed=11)


class TestReplicaPlumbing:
    @staticmethod
    def work(chunk, count):
        return make_rng(9, chunk).standard_normal(count)

    def test_thread_count_does_not_change_results(self):
        serial = run_replicas(self.work, 1050, threads=1, chunk_size=100)
        pooled = run_replicas(self.work, 1050, threads=4, chunk_size=100)
        assert serial.shape == (1050,)
        assert_allclose(serial, pooled, rtol=0)

    def test_last_chunk_is_partial(self):
        counts = []
        run_replicas(lambda chunk, count: counts.append(count) or np.zeros(count), 230, chunk_size=100)
        assert counts == [100, 100, 30]

    def test_no_replicas(self):
        with pytest.raises(ConfigError):
            run_replicas(self.work, 0)

    def test_mean_se(self):
        mean, se = mean_se(np.array([[1.0, 2.0], [3.0, 2.0], [5.0, 2.0]]))
        assert_allclose(mean, [3.0, 2.0])
        assert_allclose(se, [2.0 / np.sqrt(3), 0.0])


class TestBuildTruncation:
    def test_families(self):
        assert build_truncation(TruncationSpec(family="point"), 12).support_min == 12
        assert build_truncation(TruncationSpec(family="harmonic", j_min=3), 12).support_min == 3
        assert build_truncation(TruncationSpec(family="uniform", h=7), 12).support_max == 7
        dist = build_truncation(TruncationSpec(family="mean_exponential", target_mean=6.0), 40)
        assert dist.mean() == pytest.approx(6.0)

    def test_mean_exponential_needs_target(self):
        with pytest.raises(ConfigError):
            build_truncation(TruncationSpec(family="mean_exponential"), 40)

    def test_unreachable_mean(self):
        with pytest.raises(ConfigError):
            build_truncation(TruncationSpec(family="mean_exponential", target_mean=35.0), 40)


class TestBiasSweep:
    def test_cg_at_full_iterations(self, sweep_instance):
        data, theta = sweep_instance
        report = bias_sweep(data, theta, [data.n], replicas=400, methods=["cg"], seed=1)
        row = report.row("cg", data.n)
        assert row.invquad_mean == pytest.approx(report.exact_invquad, rel=1e-6)
        assert row.invquad_se == 0.0
        assert abs(row.logdet_mean - report.exact_logdet) <= 3 * row.logdet_se

    def test_cg_is_monotone_in_iterations(self, sweep_instance):
        data, theta = sweep_instance
        grid = [1, 2, 4, 8, 16]
        report = bias_sweep(data, theta, grid, replicas=50, methods=["cg"], seed=2)
        invquads = [report.row("cg", j).invquad_mean for j in grid]
        logdets = [report.row("cg", j).logdet_mean for j in grid]
        assert all(b >= a - 1e-10 * abs(a) for a, b in zip(invquads, invquads[1:]))
        assert all(b <= a + 1e-10 * abs(a) for a, b in zip(logdets, logdets[1:]))
        assert invquads[-1] <= report.exact_invquad * (1 + 1e-10)

    def test_unknown_method(self, sweep_instance):
        data, theta = sweep_instance
        with pytest.raises(ConfigError):
            bias_sweep(data, theta, [4], replicas=10, methods=["lanczos"])

    def test_per_method_grid(self, sweep_instance):
        data, theta = sweep_instance
        report = bias_sweep(data, theta, [4], replicas=10, methods=["cg", "rff"], grids={"rff": [6, 10]})
        assert [(r.method, r.j) for r in report.rows] == [("cg", 4.0), ("rff", 6.0), ("rff", 10.0)]

    def test_thread_count_does_not_change_report(self, sweep_instance):
        data, theta = sweep_instance
        kwargs = dict(replicas=30, methods=["rr_cg", "rff"], seed=3, chunk_size=8)
        serial = bias_sweep(data, theta, [6], threads=1, **kwargs)
        pooled = bias_sweep(data, theta, [6], threads=3, **kwargs)
        assert serial == pooled

    def test_csv_columns(self, sweep_instance, tmp_path):
        data, theta = sweep_instance
        report = bias_sweep(data, theta, [2, 4], replicas=10, methods=["cg"])
        header, rows = read_csv_rows(write_bias_sweep_csv(tmp_path / "sweep.csv", report))
        assert header[:2] == ["method", "j"] and header[-2:] == ["exact_logdet", "exact_invquad"]
        assert len(rows) == 2
        assert float(rows[0][-2]) == report.exact_logdet


@pytest.mark.slow
class TestBiasDirections:
    def test_rff_underestimates_logdet_and_overestimates_invquad(self, sweep_instance):
        data, theta = sweep_instance
        report = bias_sweep(data, theta, [10], replicas=1000, methods=["rff"], seed=4)
        row = report.rows[0]
        assert row.logdet_mean < report.exact_logdet - 3 * row.logdet_se
        assert row.invquad_mean > report.exact_invquad + 3 * row.invquad_se

    @pytest.mark.parametrize("method,grid", [("rr_cg", 8.0), ("ss_rff", 4.0)])
    def test_debiased_methods_within_three_se(self, sweep_instance, method, grid):
        data, theta = sweep_instance
        report = bias_sweep(data, theta, [grid], replicas=4000, methods=[method], seed=5, rr_j_min=2)
        row = report.rows[0]
        assert abs(row.logdet_mean - report.exact_logdet) <= 3 * row.logdet_se
        assert abs(row.invquad_mean - report.exact_invquad) <= 3 * row.invquad_se


class TestEstimatorCheck:
    @pytest.mark.parametrize("kind", ["rr", "ss"])
    def test_series_enumeration(self, kind):
        report = estimator_check(kind)
        assert report.mode == "enumeration"
        assert report.passed

    @pytest.mark.parametrize("kind", ["rr", "ss"])
    def test_series_monte_carlo(self, kind):
        report = estimator_check(kind, replicas=4000, enumeration=False, seed=1)
        assert report.mode == "monte_carlo"
        assert report.replicas == 4000
        assert report.passed

    def test_series_harmonic(self):
        assert estimator_check("ss", dist=TruncationSpec(family="harmonic", j_min=3)).passed

    def test_rr_cg_solve_enumeration(self):
        report = estimator_check("rr_cg_solve")
        assert report.mode == "enumeration"
        assert report.outputs[0].name == "invquad"
        assert report.passed

    def test_rr_cg_solve_monte_carlo(self):
        report = estimator_check("rr_cg_solve", replicas=2000, enumeration=False, seed=2)
        assert report.passed

    def test_ss_rff_enumeration(self):
        report = estimator_check("ss_rff_mll", instance=InstanceSpec(n=16))
        assert [o.name for o in report.outputs] == ["logdet", "invquad"]
        assert report.passed

    def test_grad_cannot_enumerate(self):
        with pytest.raises(ConfigError):
            estimator_check("rr_cg_grad", enumeration=True)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            estimator_check("rff_grad")

    def test_zero_se_with_a_miss_fails(self):
        output = experiments._monte_carlo_output("x", np.full(5, 2.0), 1.0)
        assert output.se == 0.0
        assert output.z == 1e300

    def test_config_entry_point(self):
        report = run_estimator_check(EstimatorCheckConfig(kind="rr", seed=3))
        assert report.kind == "rr" and report.passed

    @pytest.mark.slow
    def test_rr_cg_grad_monte_carlo(self):
        report = estimator_check("rr_cg_grad", replicas=4000, instance=InstanceSpec(n=30), seed=4)
        assert [o.name for o in report.outputs] == ["outputscale_sq", "lengthscale_0", "noise_sq"]
        assert report.passed


@pytest.mark.slow
class TestLengthscaleStudy:
    def test_cg_overestimates_and_rff_underestimates(self, tmp_path):
        config = LengthscaleStudyConfig()
        rows = run_lengthscale_study(config)
        medians = median_log_ratios(rows)
        assert medians[("cholesky", None)] == 0.0
        references = [r.reference_lengthscale for r in rows if r.method == "cholesky"]
        assert max(references) <= 1.02 * min(references)
        assert medians[("cg", 5)] > 0
        assert medians[("rff", 20)] < 0

        def shrinking_seeds(method, grid):
            ratios = {(r.seed, r.j): abs(r.log_ratio) for r in rows if r.method == method}
            return sum(all(ratios[(s, a)] > ratios[(s, b)] for a, b in zip(grid, grid[1:])) for s in config.seeds)

        assert shrinking_seeds("cg", config.cg_grid) >= 2
        assert shrinking_seeds("rff", config.rff_grid) >= 2
        header, written = read_csv_rows(write_lengthscale_csv(tmp_path / "ls.csv", rows))
        assert len(written) == 21
        assert header[-1] == "log_ratio"
