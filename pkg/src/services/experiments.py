"""
Desk-scale experiments: bias sweeps, the lengthscale study and estimator checks.

Replica loops are split into fixed-size chunks. Chunk ``c`` of a cell draws from
its own stream ``(seed, method, cell, c)``, so results do not depend on how
many worker threads evaluate the chunks.
"""
import logging
import math
import statistics
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import ConfigError
from src.models.gp import LENGTHSCALE, Dataset, Hyperparams
from src.models.lab import (
    BiasSweepReport,
    BiasSweepRow,
    EstimatorCheckConfig,
    EstimatorCheckReport,
    EstimatorOutput,
    InstanceSpec,
    LengthscaleRow,
    LengthscaleStudyConfig,
    TruncationSpec,
)
from src.models.training import Method, TrainConfig
from src.services.datasets import gen_gp_dataset, gen_toy_sine, write_csv
from src.services.exact_gp import grad_exact, mll_exact
from src.services.kernels import kernel_matrix
from src.services.krylov import invquad_cg, mbcg, slq_logdet_samples
from src.services.numerics import make_rng, sample_probes
from src.services.rff import feature_map, mll_rff, sample_features
from src.services.training import train
from src.services.truncation import (
    CallableSupplier,
    SequenceSupplier,
    TruncationDistribution,
    exponential_with_mean,
    make_exponential,
    make_harmonic,
    make_point_mass,
    make_uniform,
    rr_combine,
    ss_combine,
)
from src.services.unbiased import (
    SSRFFConfig,
    make_ssrff_config,
    rrcg_grad_replicas,
    rrcg_logdet_replicas,
    rrcg_solve_batch,
    ssrff_mll,
)

logger = logging.getLogger(__name__)

SWEEP_METHODS = ("cg", "rr_cg", "rff", "ss_rff")
CHECK_KINDS = ("rr", "ss", "rr_cg_solve", "rr_cg_grad", "ss_rff_mll")

CHUNK_SIZE = 500
CG_TOL = 1e-10
Z_THRESHOLD = 3.0
SERIES_LENGTH = 12
ENUMERATION_RTOL = {"rr": 1e-12, "ss": 1e-12, "rr_cg_solve": 1e-6, "ss_rff_mll": 1e-9}

_STREAM = {"cg": 1, "rr_cg": 2, "rff": 3, "ss_rff": 4, "check": 5}


# ==================== Replica plumbing ====================

def run_replicas(work: Callable[[int, int], np.ndarray], replicas: int, threads: int = 1,
                 chunk_size: int = CHUNK_SIZE) -> np.ndarray:
    """Evaluate ``work(chunk, count)`` over replica chunks and stack the rows in chunk order."""
    if replicas < 1:
        raise ConfigError(f"replicas must be ≥ 1, got {replicas}")
    counts = [min(chunk_size, replicas - start) for start in range(0, replicas, chunk_size)]
    if threads <= 1 or len(counts) == 1:
        parts = [work(chunk, count) for chunk, count in enumerate(counts)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, range(len(counts)), counts))
    return np.concatenate([np.asarray(part, dtype=np.float64) for part in parts], axis=0)


def mean_se(samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Column means and standard errors (sample SD / √replicas)."""
    samples = np.asarray(samples, dtype=np.float64)
    count = samples.shape[0]
    se = samples.std(axis=0, ddof=1) / math.sqrt(count) if count > 1 else np.zeros(samples.shape[1:])
    return samples.mean(axis=0), se


def build_truncation(spec: TruncationSpec, h: int) -> TruncationDistribution:
    """Materialize a truncation spec; ``h`` is the instance's natural support maximum."""
    h = spec.h or h
    j_min = min(spec.j_min, h)
    if spec.family == "exponential":
        return make_exponential(spec.lam, j_min, h)
    if spec.family == "mean_exponential":
        if spec.target_mean is None:
            raise ConfigError("mean_exponential needs target_mean")
        try:
            return exponential_with_mean(spec.target_mean, j_min, h)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if spec.family == "harmonic":
        return make_harmonic(j_min, h)
    if spec.family == "uniform":
        return make_uniform(j_min, h)
    return make_point_mass(h)


def make_instance(instance: InstanceSpec) -> Tuple[Dataset, Hyperparams]:
    """GP-prior data on [0, 1]^d together with the θ that generated it."""
    theta = instance.theta()
    return gen_gp_dataset(instance.n, instance.d, theta, make_rng(instance.seed)), theta


# ==================== Bias sweep ====================

def _sweep_cg(data: Dataset, K: np.ndarray, grid: Sequence[float], replicas: int, seed: int,
              threads: int, chunk_size: int) -> List[BiasSweepRow]:
    Js = [int(j) for j in grid]
    if min(Js) < 1:
        raise ConfigError(f"cg grid must be ≥ 1, got {Js}")
    J_max = max(Js)
    _, (trace,) = mbcg(K, data.y[:, None], max_iter=J_max, tol=CG_TOL)
    u = invquad_cg(trace, data.y)

    def work(chunk: int, count: int) -> np.ndarray:
        probes = sample_probes(data.n, count, rng=make_rng(seed, _STREAM["cg"], chunk))
        _, traces = mbcg(K, probes.probes, max_iter=J_max, tol=CG_TOL, store_increments=False)
        return slq_logdet_samples(traces, probes, steps=Js)

    logdets = run_replicas(work, replicas, threads, chunk_size)
    means, ses = mean_se(logdets)
    rows = []
    for k, J in enumerate(Js):
        rows.append(BiasSweepRow(method="cg", j=float(J), logdet_mean=float(means[k]), logdet_se=float(ses[k]),
                                 invquad_mean=float(u[min(J, u.size) - 1]), invquad_se=0.0, replicas=replicas))
        logger.info("bias sweep cg J=%d done", J)
    return rows


def _sweep_rr_cg(data: Dataset, theta: Hyperparams, K: np.ndarray, grid: Sequence[float], replicas: int,
                 seed: int, threads: int, chunk_size: int, j_min: int) -> List[BiasSweepRow]:
    rows = []
    for cell, target in enumerate(grid):
        try:
            dist = exponential_with_mean(float(target), min(j_min, int(target)), data.n)
        except ValueError as exc:
            raise ConfigError(f"rr_cg grid value {target}: {exc}") from exc

        def work(chunk: int, count: int, dist=dist, cell=cell) -> np.ndarray:
            rng = make_rng(seed, _STREAM["rr_cg"], cell, chunk)
            probes = sample_probes(data.n, count, rng=rng)
            logdets, _ = rrcg_logdet_replicas(data, theta, dist, probes, rng)
            solves, _ = rrcg_solve_batch(K, np.repeat(data.y[:, None], count, axis=1), dist, rng)
            return np.column_stack([logdets, data.y @ solves])

        means, ses = mean_se(run_replicas(work, replicas, threads, chunk_size))
        rows.append(BiasSweepRow(method="rr_cg", j=float(target), logdet_mean=float(means[0]),
                                 logdet_se=float(ses[0]), invquad_mean=float(means[1]),
                                 invquad_se=float(ses[1]), replicas=replicas))
        logger.info("bias sweep rr_cg E[J]=%g (λ from %s) done", target, dist.name)
    return rows


def _sweep_rff(data: Dataset, theta: Hyperparams, grid: Sequence[float], replicas: int, seed: int,
               threads: int, chunk_size: int) -> List[BiasSweepRow]:
    rows = []
    for cell, j in enumerate(grid):
        J = int(j)

        def work(chunk: int, count: int, J=J, cell=cell) -> np.ndarray:
            rng = make_rng(seed, _STREAM["rff"], cell, chunk)
            out = np.empty((count, 2))
            for r in range(count):
                features = sample_features(theta, data.d, J, rng)
                terms = mll_rff(feature_map(data.X, features, J // 2, theta), data.y, theta.noise_sq)
                out[r] = terms.logdet, terms.invquad
            return out

        means, ses = mean_se(run_replicas(work, replicas, threads, chunk_size))
        rows.append(BiasSweepRow(method="rff", j=float(J), logdet_mean=float(means[0]), logdet_se=float(ses[0]),
                                 invquad_mean=float(means[1]), invquad_se=float(ses[1]), replicas=replicas))
        logger.info("bias sweep rff J=%d done", J)
    return rows


def _sweep_ss_rff(data: Dataset, theta: Hyperparams, grid: Sequence[float], replicas: int, seed: int,
                  threads: int, chunk_size: int) -> List[BiasSweepRow]:
    rows = []
    for cell, j in enumerate(grid):
        cfg = make_ssrff_config(data.n, max(1, int(j) // 2))

        def work(chunk: int, count: int, cfg=cfg, cell=cell) -> np.ndarray:
            rng = make_rng(seed, _STREAM["ss_rff"], cell, chunk)
            out = np.empty((count, 2))
            for r in range(count):
                terms, _ = ssrff_mll(data, theta, cfg, rng)
                out[r] = terms.logdet, terms.invquad
            return out

        means, ses = mean_se(run_replicas(work, replicas, threads, chunk_size))
        rows.append(BiasSweepRow(method="ss_rff", j=float(j), logdet_mean=float(means[0]), logdet_se=float(ses[0]),
                                 invquad_mean=float(means[1]), invquad_se=float(ses[1]), replicas=replicas))
        logger.info("bias sweep ss_rff base J=%d done", int(j))
    return rows


def bias_sweep(
    data: Dataset,
    theta: Hyperparams,
    j_grid: Sequence[float],
    replicas: int,
    methods: Sequence[str] = SWEEP_METHODS,
    seed: int = 0,
    threads: int = 1,
    grids: Optional[Dict[str, Sequence[float]]] = None,
    rr_j_min: int = 1,
    chunk_size: int = CHUNK_SIZE,
) -> BiasSweepReport:
    """
    Replica means and SEs of the log-det and inverse-quadratic estimates.

    Grid values are CG iterations for ``cg``, targets for E[J] for
    ``rr_cg``, basis-function counts for ``rff`` and base basis-function
    counts for ``ss_rff``. CG probes are shared across the grid, and the CG
    inverse quadratic is deterministic.
    """
    unknown = set(methods) - set(SWEEP_METHODS)
    if unknown:
        raise ConfigError(f"unknown sweep methods: {sorted(unknown)}")
    exact = mll_exact(data, theta)
    K = kernel_matrix(data.X, theta)
    grids = grids or {}
    rows: List[BiasSweepRow] = []
    for method in methods:
        grid = list(grids.get(method, j_grid))
        if method == "cg":
            rows.extend(_sweep_cg(data, K, grid, replicas, seed, threads, chunk_size))
        elif method == "rr_cg":
            rows.extend(_sweep_rr_cg(data, theta, K, grid, replicas, seed, threads, chunk_size, rr_j_min))
        elif method == "rff":
            rows.extend(_sweep_rff(data, theta, grid, replicas, seed, threads, chunk_size))
        else:
            rows.extend(_sweep_ss_rff(data, theta, grid, replicas, seed, threads, chunk_size))
    return BiasSweepReport(n=data.n, exact_logdet=exact.logdet, exact_invquad=exact.invquad,
                           replicas=replicas, rows=rows)


def write_bias_sweep_csv(path: Union[str, Path], report: BiasSweepReport) -> Path:
    header = ["method", "j", "logdet_mean", "logdet_se", "invquad_mean", "invquad_se", "replicas",
              "exact_logdet", "exact_invquad"]
    rows = ([r.method, r.j, r.logdet_mean, r.logdet_se, r.invquad_mean, r.invquad_se, r.replicas,
             report.exact_logdet, report.exact_invquad] for r in report.rows)
    return write_csv(path, header, rows)


# ==================== Lengthscale study ====================

def _learned_lengthscale(data: Dataset, start: Hyperparams, cfg: TrainConfig) -> float:
    return train(data, start, cfg).final_theta.lengthscales[0]


def lengthscale_bias_experiment(
    cg_grid: Sequence[int],
    rff_grid: Sequence[int],
    seeds: Sequence[int],
    n: int = 100,
    noise_sd: float = 0.1,
    data_seed: int = 0,
    iters: int = 200,
    lr: float = 0.05,
    probes: int = 8,
    perturbation: float = 1.5,
    threads: int = 1,
) -> List[LengthscaleRow]:
    """
    Learned ℓ per method, J and seed on the toy sine data.

    θ* is the full Cholesky fit. Every run, including the per-seed Cholesky
    reference, starts from ℓ = perturbation·ℓ* with o² and σ² frozen at θ*.
    """
    if not seeds:
        raise ConfigError("lengthscale study needs at least one seed")
    data = gen_toy_sine(n, noise_sd, make_rng(data_seed))
    init = Hyperparams(outputscale_sq=0.5, lengthscales=[0.2], noise_sq=max(noise_sd ** 2, 1e-4))
    fit = train(data, init, TrainConfig(method=Method.CHOLESKY, iters=2 * iters, lr=lr, exact_telemetry=False))
    theta_star = fit.final_theta
    start = theta_star.replace(lengthscales=[theta_star.lengthscales[0] * perturbation])
    logger.info("lengthscale study: θ*=%s, start ℓ=%.4f", theta_star.to_vector().tolist(), start.lengthscales[0])

    common = dict(iters=iters, lr=lr, trainable=[LENGTHSCALE], exact_telemetry=False, probes=probes)
    tasks: List[Tuple[str, Optional[int], int, TrainConfig]] = []
    for seed in seeds:
        tasks.append(("cholesky", None, seed, TrainConfig(method=Method.CHOLESKY, seed=seed, **common)))
        tasks.extend(("cg", J, seed, TrainConfig(method=Method.CG, seed=seed, cg_iters=J, **common))
                     for J in cg_grid)
        tasks.extend(("rff", J, seed, TrainConfig(method=Method.RFF, seed=seed, rff_features=J, **common))
                     for J in rff_grid)

    def run(task) -> float:
        return _learned_lengthscale(data, start, task[3])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            learned = list(pool.map(run, tasks))
    else:
        learned = [run(task) for task in tasks]

    reference = {seed: ls for (method, _, seed, _), ls in zip(tasks, learned) if method == "cholesky"}
    rows = []
    for (method, J, seed, _), ls in zip(tasks, learned):
        rows.append(LengthscaleRow(method=method, j=J, seed=seed, lengthscale=ls,
                                   reference_lengthscale=reference[seed],
                                   log_ratio=math.log(ls / reference[seed])))
    return rows


def median_log_ratios(rows: Sequence[LengthscaleRow]) -> Dict[Tuple[str, Optional[int]], float]:
    """Median log(ℓ_method/ℓ_chol) across seeds for every (method, J)."""
    grouped = defaultdict(list)
    for row in rows:
        grouped[(row.method, row.j)].append(row.log_ratio)
    return {key: statistics.median(values) for key, values in grouped.items()}


def run_lengthscale_study(config: LengthscaleStudyConfig, threads: int = 1) -> List[LengthscaleRow]:
    return lengthscale_bias_experiment(
        config.cg_grid, config.rff_grid, config.seeds, n=config.n, noise_sd=config.noise_sd,
        data_seed=config.data_seed, iters=config.iters, lr=config.lr, probes=config.probes,
        perturbation=config.perturbation, threads=threads,
    )


def write_lengthscale_csv(path: Union[str, Path], rows: Sequence[LengthscaleRow]) -> Path:
    header = ["method", "j", "seed", "lengthscale", "reference_lengthscale", "log_ratio"]
    return write_csv(path, header, ([r.method, "" if r.j is None else r.j, r.seed, r.lengthscale,
                                     r.reference_lengthscale, r.log_ratio] for r in rows))


# ==================== Estimator checks ====================

def _monte_carlo_output(name: str, samples: np.ndarray, exact: float) -> EstimatorOutput:
    mean, se = mean_se(samples)
    mean, se = float(mean), float(se)
    diff = mean - exact
    if se > 0:
        z = diff / se
    else:
        z = 0.0 if diff == 0 else math.copysign(1e300, diff)
    return EstimatorOutput(name=name, mean=mean, se=se, exact=exact, z=z)


def _enumeration_output(name: str, mean: float, exact: float, rtol: float) -> EstimatorOutput:
    # z is measured in units of the enumeration tolerance
    tolerance = rtol * max(1.0, abs(exact))
    return EstimatorOutput(name=name, mean=mean, se=0.0, exact=exact, z=(mean - exact) / tolerance)


def _report(kind: str, mode: str, replicas: int, outputs: List[EstimatorOutput]) -> EstimatorCheckReport:
    limit = 1.0 if mode == "enumeration" else Z_THRESHOLD
    passed = all(abs(o.z) <= limit for o in outputs)
    logger.info("estimator check %s (%s): %s", kind, mode, "PASS" if passed else "FAIL")
    return EstimatorCheckReport(kind=kind, mode=mode, replicas=replicas, outputs=outputs, passed=passed)


def _check_series(kind: str, replicas: int, dist: TruncationDistribution, seed: int,
                  enumeration: bool) -> EstimatorCheckReport:
    rng = make_rng(seed, _STREAM["check"])
    length = dist.support_max
    deltas = rng.standard_normal(length) * 0.8 ** np.arange(length)
    exact = float(deltas.sum())
    combine = rr_combine if kind == "rr" else ss_combine

    def estimate(J: int) -> float:
        return float(combine(CallableSupplier(lambda j: deltas[j - 1], length), dist, int(J)))

    if enumeration:
        values = np.array([estimate(J) for J in dist.support])
        mean = float(dist.pmf @ values)
        return _report(kind, "enumeration", 0, [_enumeration_output("series", mean, exact, ENUMERATION_RTOL[kind])])
    samples = np.array([estimate(J) for J in dist.sample(rng, size=replicas)])
    return _report(kind, "monte_carlo", replicas, [_monte_carlo_output("series", samples, exact)])


def _check_rr_cg_solve(data: Dataset, theta: Hyperparams, dist: TruncationDistribution, replicas: int,
                       seed: int, enumeration: bool, threads: int, chunk_size: int) -> EstimatorCheckReport:
    K = kernel_matrix(data.X, theta)
    exact = mll_exact(data, theta).invquad
    y = data.y
    if enumeration:
        _, (trace,) = mbcg(K, y[:, None], max_iter=dist.support_max, tol=0.0)
        deltas = trace.increments[:trace.iterations] @ y
        exact_end = trace.converged_at is not None
        values = np.array([
            float(rr_combine(SequenceSupplier(deltas, exact_end=exact_end), dist, int(J)))
            for J in dist.support
        ])
        mean = float(dist.pmf @ values)
        output = _enumeration_output("invquad", mean, exact, ENUMERATION_RTOL["rr_cg_solve"])
        return _report("rr_cg_solve", "enumeration", 0, [output])

    def work(chunk: int, count: int) -> np.ndarray:
        rng = make_rng(seed, _STREAM["check"], chunk)
        solves, _ = rrcg_solve_batch(K, np.repeat(y[:, None], count, axis=1), dist, rng)
        return y @ solves

    samples = run_replicas(work, replicas, threads, chunk_size)
    return _report("rr_cg_solve", "monte_carlo", replicas, [_monte_carlo_output("invquad", samples, exact)])


def _check_rr_cg_grad(data: Dataset, theta: Hyperparams, dist: TruncationDistribution, replicas: int,
                      seed: int, shared_solve: bool, threads: int, chunk_size: int) -> EstimatorCheckReport:
    exact = grad_exact(data, theta)

    def work(chunk: int, count: int) -> np.ndarray:
        rng = make_rng(seed, _STREAM["check"], chunk)
        probes = sample_probes(data.n, count, rng=rng)
        return rrcg_grad_replicas(data, theta, dist, probes, rng, shared_solve=shared_solve)

    samples = run_replicas(work, replicas, threads, chunk_size)
    outputs = [_monte_carlo_output(name, samples[:, p], float(exact[p]))
               for p, name in enumerate(theta.param_names())]
    return _report("rr_cg_grad", "monte_carlo", replicas, outputs)


def _check_ss_rff(data: Dataset, theta: Hyperparams, cfg: SSRFFConfig, replicas: int, seed: int,
                  enumeration: bool, threads: int, chunk_size: int) -> EstimatorCheckReport:
    exact = mll_exact(data, theta)
    if enumeration:
        rng = make_rng(seed, _STREAM["check"])
        features = sample_features(theta, data.d, 2 * cfg.max_pairs, rng)
        values = np.array([
            [terms.logdet, terms.invquad]
            for terms, _ in (ssrff_mll(data, theta, cfg, rng, features=features, J=int(J))
                             for J in cfg.dist.support)
        ])
        mean = cfg.dist.pmf @ values
        rtol = ENUMERATION_RTOL["ss_rff_mll"]
        outputs = [_enumeration_output("logdet", float(mean[0]), exact.logdet, rtol),
                   _enumeration_output("invquad", float(mean[1]), exact.invquad, rtol)]
        return _report("ss_rff_mll", "enumeration", 0, outputs)

    def work(chunk: int, count: int) -> np.ndarray:
        rng = make_rng(seed, _STREAM["check"], chunk)
        out = np.empty((count, 2))
        for r in range(count):
            terms, _ = ssrff_mll(data, theta, cfg, rng)
            out[r] = terms.logdet, terms.invquad
        return out

    samples = run_replicas(work, replicas, threads, chunk_size)
    outputs = [_monte_carlo_output("logdet", samples[:, 0], exact.logdet),
               _monte_carlo_output("invquad", samples[:, 1], exact.invquad)]
    return _report("ss_rff_mll", "monte_carlo", replicas, outputs)


def estimator_check(
    kind: str,
    replicas: int = 2000,
    dist: Optional[TruncationSpec] = None,
    instance: Optional[InstanceSpec] = None,
    seed: int = 0,
    enumeration: Optional[bool] = None,
    shared_solve: bool = False,
    ss_base_features: int = 1,
    threads: int = 1,
    chunk_size: int = CHUNK_SIZE,
) -> EstimatorCheckReport:
    """
    Compare an unbiased estimator's mean with its exact target.

    Enumeration mode takes the exact expectation over the truncation support
    (conditional on the frequencies for ``ss_rff_mll``) and passes when it
    matches to numerical tolerance. Monte-Carlo mode passes when every
    output lies within three standard errors. ``rr_cg_grad`` is always
    Monte Carlo because its probes are random.
    """
    if kind not in CHECK_KINDS:
        raise ConfigError(f"unknown estimator check kind: {kind}")
    instance = instance or InstanceSpec()
    if kind == "rr_cg_grad" and enumeration:
        raise ConfigError("rr_cg_grad cannot be enumerated: its probes are random")
    enumerate_support = (kind != "rr_cg_grad") if enumeration is None else enumeration

    if kind in ("rr", "ss"):
        truncation = build_truncation(dist or TruncationSpec(family="exponential", lam=0.3), SERIES_LENGTH)
        return _check_series(kind, replicas, truncation, seed, enumerate_support)

    data, theta = make_instance(instance)
    if kind == "ss_rff_mll":
        cfg = make_ssrff_config(data.n, ss_base_features)
        if dist is not None:
            cfg = SSRFFConfig(cfg.base_features, cfg.step, build_truncation(dist, cfg.closing_block))
        return _check_ss_rff(data, theta, cfg, replicas, seed, enumerate_support, threads, chunk_size)

    truncation = build_truncation(dist or TruncationSpec(family="exponential", lam=0.1, j_min=5), data.n)
    if kind == "rr_cg_solve":
        return _check_rr_cg_solve(data, theta, truncation, replicas, seed, enumerate_support, threads, chunk_size)
    return _check_rr_cg_grad(data, theta, truncation, replicas, seed, shared_solve, threads, chunk_size)


def run_estimator_check(config: EstimatorCheckConfig, threads: int = 1) -> EstimatorCheckReport:
    return estimator_check(
        config.kind, config.replicas, config.dist, config.instance, config.seed,
        enumeration=config.enumeration, shared_solve=config.shared_solve,
        ss_base_features=config.ss_base_features, threads=threads,
    )
