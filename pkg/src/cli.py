"""
Command-line interface for the GP lab.

Every subcommand writes its outputs plus a ``manifest.json`` holding the
validated configuration, the seed and the library versions used.
"""
import argparse
import json
import logging
import platform
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy
from pydantic import BaseModel, ValidationError

from src import __version__
from src.config import configure_logging, get_settings
from src.errors import ConfigError, GPLabError
from src.models.gp import Hyperparams
from src.models.lab import (
    BiasSweepConfig,
    CsvSource,
    EstimatorCheckConfig,
    GPPriorSource,
    LengthscaleStudyConfig,
    RunConfig,
    ToySineSource,
)
from src.models.training import TrainRecord
from src.services.datasets import (
    load_csv,
    load_source,
    read_numeric_csv,
    write_csv,
    write_dataset_csv,
)
from src.services.exact_gp import posterior_predict
from src.services.experiments import (
    bias_sweep,
    median_log_ratios,
    run_estimator_check,
    run_lengthscale_study,
    write_bias_sweep_csv,
    write_lengthscale_csv,
)
from src.services.training import train

logger = logging.getLogger("src.cli")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


def _load_config(path: Optional[str], model: type, default: Optional[BaseModel] = None):
    if path is None:
        if default is None:
            raise ConfigError(f"--config is required for {model.__name__}")
        return default
    with open(path, encoding="utf-8") as handle:
        return model.model_validate_json(handle.read())


def write_manifest(out_dir: Path, command: str, config: BaseModel, seed: int, extra: Optional[dict] = None) -> Path:
    """Record everything needed to rerun a command bit for bit."""
    manifest = {
        "command": command,
        "seed": seed,
        "config": config.model_dump(mode="json"),
        "versions": {
            "package": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return path


def write_train_record_csv(path: Path, record: TrainRecord) -> Path:
    names = record.final_theta.param_names()
    header = ["step", "lr"] + names + ["objective", "exact_nll", "grad_norm", "sampled_j", "wall_time"]
    rows = (
        [s.step, s.lr, *s.theta,
         "" if s.objective is None else s.objective,
         "" if s.exact_nll is None else s.exact_nll,
         s.grad_norm, ";".join(str(j) for j in s.sampled_j), s.wall_time]
        for s in record.steps
    )
    return write_csv(path, header, rows)


# ==================== Subcommands ====================

def cmd_gen_data(args: argparse.Namespace) -> int:
    if args.config:
        config = _load_config(args.config, RunConfig)
        source = config.data
    elif args.source == "gp_prior":
        source = GPPriorSource(n=args.n or 300)
    else:
        source = ToySineSource(n=args.n or 100)
    if args.seed is not None and not isinstance(source, CsvSource):
        source = source.model_copy(update={"seed": args.seed})
    data = load_source(source, standardize_data=False if args.no_standardize else None)
    out_dir = Path(args.out or "runs/data")
    out_dir.mkdir(parents=True, exist_ok=True)
    path = write_dataset_csv(out_dir / "data.csv", data)
    write_manifest(out_dir, "gen-data", source, getattr(source, "seed", 0))
    logger.info("wrote %d rows to %s", data.n, path)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args.config, RunConfig)
    if args.seed is not None:
        config = config.model_copy(update={"train": config.train.model_copy(update={"seed": args.seed})})
    if args.out:
        config = config.model_copy(update={"output_dir": args.out})
    data = load_source(config.data, standardize_data=False if args.no_standardize else None)
    theta0 = config.theta0 or Hyperparams(outputscale_sq=1.0, lengthscales=[1.0] * data.d, noise_sq=0.1)
    record = train(data, theta0, config.train)

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_train_record_csv(out_dir / config.record_csv, record)
    (out_dir / config.theta_json).write_text(record.final_theta.model_dump_json(indent=2), encoding="utf-8")
    write_manifest(out_dir, "train", config, config.train.seed,
                   {"final_exact_nll": record.final_exact_nll})
    logger.info("final θ=%s exact NLL=%s", record.final_theta.to_vector().tolist(), record.final_exact_nll)
    return EXIT_OK


def cmd_bias_sweep(args: argparse.Namespace) -> int:
    config = _load_config(args.config, BiasSweepConfig, BiasSweepConfig())
    if args.seed is not None:
        config = config.model_copy(update={"seed": args.seed})
    data = load_source(config.data, standardize_data=False if args.no_standardize else None)
    theta = config.theta
    if theta is None:
        if not isinstance(config.data, GPPriorSource):
            raise ConfigError("bias-sweep needs theta unless the data is a GP prior draw")
        theta = config.data.theta
    report = bias_sweep(data, theta, config.j_grid, config.replicas, config.methods, seed=config.seed,
                        threads=args.threads, grids=config.grids, rr_j_min=config.rr_j_min)
    out_dir = Path(args.out or "runs/bias_sweep")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_bias_sweep_csv(out_dir / "bias_sweep.csv", report)
    (out_dir / "bias_sweep.json").write_text(report.model_dump_json(indent=2), encoding="utf-8")
    write_manifest(out_dir, "bias-sweep", config, config.seed)
    return EXIT_OK


def cmd_lengthscale_bias(args: argparse.Namespace) -> int:
    config = _load_config(args.config, LengthscaleStudyConfig, LengthscaleStudyConfig())
    if args.seed is not None:
        config = config.model_copy(update={"data_seed": args.seed})
    rows = run_lengthscale_study(config, threads=args.threads)
    out_dir = Path(args.out or "runs/lengthscale_bias")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_lengthscale_csv(out_dir / "lengthscale_bias.csv", rows)
    for (method, j), ratio in sorted(median_log_ratios(rows).items(), key=lambda item: (item[0][0], item[0][1] or 0)):
        logger.info("%s J=%s median log-ratio %+.4f", method, j, ratio)
    write_manifest(out_dir, "lengthscale-bias", config, config.data_seed)
    return EXIT_OK


def cmd_estimator_check(args: argparse.Namespace) -> int:
    if args.config:
        config = _load_config(args.config, EstimatorCheckConfig)
    elif args.kind:
        config = EstimatorCheckConfig(kind=args.kind)
    else:
        raise ConfigError("estimator-check needs --config or --kind")
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.replicas is not None:
        updates["replicas"] = args.replicas
    config = EstimatorCheckConfig.model_validate({**config.model_dump(), **updates})
    report = run_estimator_check(config, threads=args.threads)
    out_dir = Path(args.out or "runs/estimator_check")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "estimator_check.json").write_text(report.model_dump_json(indent=2), encoding="utf-8")
    write_manifest(out_dir, "estimator-check", config, config.seed, {"passed": report.passed})
    for output in report.outputs:
        logger.info("%s: mean=%.6g se=%.3g exact=%.6g z=%+.2f", output.name, output.mean, output.se,
                    output.exact, output.z)
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_predict(args: argparse.Namespace) -> int:
    standardize = not args.no_standardize
    data = load_csv(args.data, args.target, standardize_data=standardize)
    theta = Hyperparams.model_validate_json(Path(args.theta).read_text(encoding="utf-8"))
    header, table = read_numeric_csv(args.inputs)
    if args.target in header:
        table = np.delete(table, header.index(args.target), axis=1)
    record = data.standardization
    Xstar = record.standardize_x(table) if record is not None else table
    mean, variance = posterior_predict(data, theta, Xstar)
    if record is not None:
        mean = record.unstandardize_y(mean)
        variance = record.unstandardize_variance(variance)
    out_dir = Path(args.out or "runs/predict")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "predictions.csv", ["mean", "variance"], zip(mean.tolist(), variance.tolist()))
    source = CsvSource(path=str(args.data), target_column=args.target, standardize=standardize)
    write_manifest(out_dir, "predict", source, 0, {"theta": theta.model_dump(), "inputs": str(args.inputs)})
    return EXIT_OK


# ==================== Entry point ====================

def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, default=settings.threads, help="worker threads for replica loops")
    common.add_argument("--no-standardize", action="store_true", help="do not z-score CSV data")
    common.add_argument("--log-level", default=None)

    parser = argparse.ArgumentParser(prog="gp-lab", description="Debiased GP hyperparameter learning lab")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", parents=[common], help="synthetic data to CSV")
    gen.add_argument("--source", choices=["toy_sine", "gp_prior"], default="toy_sine")
    gen.add_argument("--n", type=int)
    gen.set_defaults(handler=cmd_gen_data)

    sub.add_parser("train", parents=[common], help="train θ from a RunConfig").set_defaults(handler=cmd_train)
    sub.add_parser("bias-sweep", parents=[common], help="estimator bias against J").set_defaults(handler=cmd_bias_sweep)
    sub.add_parser("lengthscale-bias", parents=[common],
                   help="learned lengthscale under biased gradients").set_defaults(handler=cmd_lengthscale_bias)

    check = sub.add_parser("estimator-check", parents=[common], help="unbiasedness check of one estimator")
    check.add_argument("--kind", choices=["rr", "ss", "rr_cg_solve", "rr_cg_grad", "ss_rff_mll"])
    check.add_argument("--replicas", type=int)
    check.set_defaults(handler=cmd_estimator_check)

    predict = sub.add_parser("predict", parents=[common], help="posterior predictions from a trained θ")
    predict.add_argument("--data", required=True, help="training CSV")
    predict.add_argument("--target", default="y", help="target column of the training CSV")
    predict.add_argument("--theta", required=True, help="θ JSON written by train")
    predict.add_argument("--inputs", required=True, help="CSV of test inputs")
    predict.set_defaults(handler=cmd_predict)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except (GPLabError, ValidationError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}".splitlines()[0], file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
