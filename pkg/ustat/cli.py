"""Command line entry point: ``python -m ustat <command>``."""
from typing import Any, Dict, List, Optional
import argparse
import json
import logging
import os
import sys
import numpy as np
import pandas as pd
from pydantic import ValidationError

from ustat import __version__
from ustat.config import settings
from ustat.schemas.bounds import BoundInputs
from ustat.schemas.estimates import SamplingScheme
from ustat.schemas.learning import GradientMode, MetricModel, ProjectionPolicy, SgdConfig
from ustat.services.bounds_service import BoundsService
from ustat.services.dataset_service import DatasetService
from ustat.services.estimator_service import EstimatorService
from ustat.services.experiment_service import ExperimentService
from ustat.services.index_space_service import IndexSpaceService
from ustat.services.learning_service import KERNEL_NAMES, LearningService
from ustat.services.sampling_service import SamplingService
from ustat.storage import get_storage_backend
from ustat.utils.errors import EXIT_CONFIG, EXIT_OK, EXIT_UNEXPECTED, ConfigError, exit_code_for

logger = logging.getLogger("ustat-cli")

BOUND_KINDS = ["complete", "incomplete", "total", "ht-bernoulli", "ht-without-replacement"]
EXPERIMENTS = ["one-time-sampling", "sgd-compare", "model-select", "ranking"]


def _write_text(path: str, text: str) -> str:
    directory, name = os.path.split(os.path.abspath(path))
    get_storage_backend(directory).put_text(name, text)
    return path


def _emit(frame: pd.DataFrame, out: Optional[str] = None) -> None:
    text = frame.to_csv(index=False, float_format="%.10g", lineterminator="\n")
    if out:
        _write_text(out, text)
        logger.info("Wrote %s", out)
    else:
        sys.stdout.write(text)


def _parse_override(item: str) -> tuple:
    key, sep, raw = item.partition("=")
    if not sep:
        raise ConfigError(f"--set expects section.key=value, got '{item}'")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def cmd_gen_data(args) -> int:
    samples = DatasetService.generate_gaussian_mixture(
        dim=args.dim, n_classes=args.n_classes, subspace_dim=args.subspace_dim,
        variance=args.variance, n=args.n, seed=args.seed, mean_scale=args.mean_scale,
    )
    text = DatasetService.dataset_to_csv(samples)
    if args.out:
        _write_text(args.out, text)
        logger.info("Wrote %d observations to %s", args.n, args.out)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_estimate(args) -> int:
    samples = DatasetService.load_csv_dataset(args.data.split(","))
    partition = None
    if args.partitions:
        nested = DatasetService.load_partitions_csv(args.partitions, n=samples.sizes[0])
        partition = nested.get(args.model_index)
    kernel = LearningService.named_kernel(args.kernel, samples, partition=partition, distance=args.distance)
    space = IndexSpaceService.build_index_space(samples.sizes, kernel.degrees)

    if args.estimator == "complete":
        result = EstimatorService.complete_u(kernel, samples, space, cap=args.cap)
    else:
        if args.budget is None:
            raise ConfigError("--budget is required for sampled estimators")
        termset = SamplingService.sample(space, SamplingScheme(args.scheme), args.budget, args.seed)
        if args.termset_out:
            _write_text(args.termset_out, SamplingService.termset_to_csv(termset))
        if args.estimator == "ht":
            result = EstimatorService.horvitz_thompson(kernel, samples, termset)
        else:
            result = EstimatorService.incomplete_u(kernel, samples, termset)
    _emit(pd.DataFrame([{
        "estimator": result.estimator,
        "scheme": result.scheme,
        "value": result.value,
        "terms_used": result.terms_used,
        "cardinality": str(space.cardinality),
        "seed": "" if result.seed is None else result.seed,
    }]))
    return EXIT_OK


def cmd_bounds(args) -> int:
    N, log_lambda = args.N, args.log_lambda
    if args.sizes:
        sizes = [int(v) for v in args.sizes.split(",")]
        degrees = [int(v) for v in args.degrees.split(",")] if args.degrees else [2] * len(sizes)
        space = IndexSpaceService.build_index_space(sizes, degrees)
        N, log_lambda = space.N, space.log1p_cardinality
    inputs = BoundInputs(M=args.M, V=args.V, N=N, log_lambda=log_lambda, B=args.B, delta=args.delta, n=args.n)
    row = inputs.model_dump()
    row.update({"kind": args.kind, "value": BoundsService.evaluate(args.kind, inputs)})
    _emit(pd.DataFrame([row]))
    return EXIT_OK


def cmd_select_model(args) -> int:
    models = DatasetService.load_model_specs_csv(args.models)
    criteria = BoundsService.selection_criteria(models, args.B, args.n, args.N, args.log_lambda, args.envelope_M)
    selected = BoundsService.select_by_criterion(criteria)
    _emit(pd.DataFrame([
        {"model_index": m, "criterion": value, "selected": int(m == selected)} for m, value in sorted(criteria.items())
    ]))
    return EXIT_OK


def cmd_sgd(args) -> int:
    samples = DatasetService.load_csv_dataset(args.data)
    mode = GradientMode(args.mode.replace("-", "_"))
    config = SgdConfig(
        steps=args.steps,
        eta0=args.eta0,
        gradient_mode=mode,
        B=args.budget if mode == GradientMode.INCOMPLETE else None,
        subsample_sizes=[args.subsample] if mode == GradientMode.COMPLETE_SUBSAMPLE else None,
        projection=ProjectionPolicy(args.projection.replace("-", "_")),
        seed=args.seed,
        record_every=args.record_every,
    )
    space = IndexSpaceService.build_index_space(samples.sizes, (2,))
    eval_terms = SamplingService.sample_with_replacement(space, args.eval_pairs, args.seed + 1)

    def evaluate(theta):
        kernel = LearningService.metric_hinge_kernel(MetricModel(LearningService.project_psd(theta), args.threshold))
        return {"train_risk": EstimatorService.incomplete_u(kernel, samples, eval_terms).value}

    result = LearningService.sgd(
        LearningService.metric_objective(args.threshold), samples, config, np.eye(samples.dim(0)), evaluate=evaluate
    )
    model = MetricModel(result.theta, args.threshold)
    if args.out:
        _write_text(args.out, DatasetService.metric_model_to_csv(model))
        logger.info("Saved metric checkpoint to %s (min eigenvalue %.3g)", args.out, model.min_eigenvalue())
    _emit(DatasetService.trajectory_frame(result), args.trajectory)
    return EXIT_OK


def cmd_experiment(args) -> int:
    overrides: Dict[str, Any] = dict(_parse_override(item) for item in args.set or [])
    if args.trials is not None:
        overrides["experiment.trials"] = args.trials
    if args.seed is not None:
        overrides["experiment.seed"] = args.seed
    if args.output_dir is not None:
        overrides["experiment.output_dir"] = args.output_dir
    config = ExperimentService.load_config(args.config, overrides, experiment_id=args.id)
    ExperimentService.run_experiment(config, plot_data=args.plot_data)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ustat", description="Complete and incomplete U-statistics toolkit")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL, help="Logging level (default: %(default)s)")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="Write a synthetic Gaussian mixture as CSV")
    p.add_argument("--dim", type=int, default=40)
    p.add_argument("--n-classes", type=int, default=10)
    p.add_argument("--subspace-dim", type=int, default=15)
    p.add_argument("--variance", type=float, default=1.0)
    p.add_argument("--mean-scale", type=float, default=1.0)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
    p.add_argument("--out", help="Output CSV (default: stdout)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("estimate", help="Complete, incomplete or Horvitz-Thompson estimate on CSV data")
    p.add_argument("--data", required=True, help="Comma-separated CSV paths, one per sample")
    p.add_argument("--kernel", required=True, choices=KERNEL_NAMES)
    p.add_argument("--partitions", help="Nested partitions CSV (clustering kernel)")
    p.add_argument("--model-index", type=int, default=1)
    p.add_argument("--distance", default="sqeuclidean")
    p.add_argument("--estimator", choices=["complete", "incomplete", "ht"], default="complete")
    p.add_argument("--scheme", choices=[s.value for s in SamplingScheme], default=SamplingScheme.WITH_REPLACEMENT.value)
    p.add_argument("--budget", type=float)
    p.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
    p.add_argument("--cap", type=int, help="Enumeration cap for the complete statistic")
    p.add_argument("--termset-out", help="Also write the sampled term set as CSV")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bounds", help="Evaluate a deviation bound")
    p.add_argument("--kind", required=True, choices=BOUND_KINDS)
    p.add_argument("--M", type=float, required=True)
    p.add_argument("--V", type=float, default=1.0)
    p.add_argument("--N", type=int, default=1)
    p.add_argument("--log-lambda", type=float, default=0.0)
    p.add_argument("--sizes", help="Comma-separated sample sizes; sets N and log-lambda")
    p.add_argument("--degrees", help="Comma-separated degrees (default: 2 per sample)")
    p.add_argument("--B", type=int, default=1)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--n", type=int, default=1)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("select-model", help="Penalised model selection from a CSV of models")
    p.add_argument("--models", required=True, help="CSV with model_index,vc_dimension,kernel_bound,risk")
    p.add_argument("--B", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--log-lambda", type=float, required=True)
    p.add_argument("--envelope-M", type=float)
    p.set_defaults(func=cmd_select_model)

    p = sub.add_parser("sgd", help="Metric learning by (stochastic) projected gradient descent")
    p.add_argument("--data", required=True, help="Labelled CSV")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--eta0", type=float, default=10.0)
    p.add_argument("--mode", choices=["incomplete", "complete-subsample", "full"], default="incomplete")
    p.add_argument("--budget", type=int, default=10)
    p.add_argument("--subsample", type=int, default=5)
    p.add_argument("--projection", choices=["every-step", "final-only"], default="final-only")
    p.add_argument("--threshold", type=float, default=2.0)
    p.add_argument("--eval-pairs", type=int, default=10000)
    p.add_argument("--record-every", type=int, default=50)
    p.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
    p.add_argument("--out", help="Metric checkpoint CSV")
    p.add_argument("--trajectory", help="Trajectory CSV (default: stdout)")
    p.set_defaults(func=cmd_sgd)

    p = sub.add_parser("experiment", help="Run an experiment pipeline and write CSV reports")
    p.add_argument("id", choices=EXPERIMENTS)
    p.add_argument("--config", help="JSON config file with sections")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="Override a config value")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--plot-data", action="store_true", help="Also write tidy long-format CSV")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO))
    try:
        return args.func(args)
    except ValidationError as e:
        logger.error("Invalid input: %s", e)
        return EXIT_CONFIG
    except ValueError as e:
        code = exit_code_for(e)
        if code == EXIT_UNEXPECTED:
            logger.exception("Unexpected error")
        else:
            logger.error("%s", e)
        return code
    except Exception:
        logger.exception("Unexpected error")
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
