from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple
import json
import logging
import math
import time
import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import ValidationError

from ustat.config import settings
from ustat.kernels import CountingKernel
from ustat.schemas.bounds import BoundInputs
from ustat.schemas.data import SampleSet
from ustat.schemas.estimates import SamplingScheme, TermSet
from ustat.schemas.experiments import ExperimentConfig
from ustat.schemas.learning import GradientMode, MetricModel, Partition, ProjectionPolicy, SgdConfig
from ustat.services.bounds_service import BoundsService
from ustat.services.dataset_service import DatasetService
from ustat.services.estimator_service import EstimatorService
from ustat.services.index_space_service import IndexSpaceService
from ustat.services.learning_service import LearningService, MetricHingeKernel, get_distance
from ustat.services.sampling_service import SamplingService
from ustat.storage import StorageBackend, get_storage_backend
from ustat.utils.errors import ConfigError, DomainError
from ustat.utils.rng import make_rng

logger = logging.getLogger("ustat-experiments")

Rows = List[Dict[str, Any]]


def largest_subsample(budget: int) -> int:
    """Largest n' with n'(n' - 1)/2 <= budget (at least 2)"""
    n_sub = int((1 + math.isqrt(1 + 8 * int(budget))) // 2)
    while n_sub * (n_sub - 1) // 2 > budget:
        n_sub -= 1
    return max(n_sub, 2)


def _hinge_risk(theta: np.ndarray, threshold: float, samples: SampleSet, termset: TermSet) -> float:
    return EstimatorService.incomplete_u(MetricHingeKernel(MetricModel(theta, threshold)), samples, termset).value


def _fit_metric(samples: SampleSet, termset: Optional[TermSet], steps: int, eta0: float, threshold: float) -> np.ndarray:
    """
    Projected gradient descent on the (fixed) empirical hinge risk, started from the identity
    scaled so that the mean training pair distance equals the threshold
    """
    # one cluster: the clustering kernel is the plain squared distance
    spread = LearningService.clustering_kernel("sqeuclidean", Partition(np.zeros(samples.sizes[0], dtype=np.int64), 1))
    if termset is None:
        mean_distance = EstimatorService.complete_u(spread, samples).value
    else:
        mean_distance = EstimatorService.incomplete_u(spread, samples, termset).value
    scale = threshold / mean_distance if mean_distance > 0 else 1.0
    config = SgdConfig(
        steps=steps,
        eta0=eta0,
        gradient_mode=GradientMode.FULL,
        projection=ProjectionPolicy.EVERY_STEP,
        record_every=max(steps, 1),
    )
    theta0 = scale * np.eye(samples.dim(0))
    return LearningService.sgd(LearningService.metric_objective(threshold), samples, config, theta0, termset=termset).theta


def _fit_arm(
    train: SampleSet,
    scheme: str,
    p: int,
    seed: int,
    eta0: float,
    steps: int,
    threshold: float
) -> Tuple[SampleSet, Optional[TermSet], np.ndarray, float]:
    """Draw the arm's p(p-1)/2 training pairs and fit on them"""
    budget = p * (p - 1) // 2
    rng = make_rng(seed)
    if scheme == "complete_subsample":
        picks = np.sort(rng.choice(train.sizes[0], size=p, replace=False))
        samples, termset = train.subset([picks]), None
    else:
        space = IndexSpaceService.build_index_space(train.sizes, (2,))
        samples, termset = train, SamplingService.sample_with_replacement(space, budget, rng)
    started = time.perf_counter()
    theta = _fit_metric(samples, termset, steps, eta0, threshold)
    return samples, termset, theta, time.perf_counter() - started


def _tuning_risk(train: SampleSet, train_terms: TermSet, scheme: str, p: int, seed: int, eta0: float,
                 steps: int, threshold: float) -> float:
    """Risk on the whole training sample (estimated on fixed pairs) of the arm's fit"""
    _, _, theta, _ = _fit_arm(train, scheme, p, seed, eta0, steps, threshold)
    return _hinge_risk(theta, threshold, train, train_terms)


def _one_time_arm(
    train: SampleSet,
    test: SampleSet,
    test_terms: TermSet,
    scheme: str,
    p: int,
    seed: int,
    eta0: float,
    steps: int,
    threshold: float
) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    budget = p * (p - 1) // 2
    samples, termset, theta, seconds = _fit_arm(train, scheme, p, seed, eta0, steps, threshold)

    counter = CountingKernel(MetricHingeKernel(MetricModel(theta, threshold)))
    if termset is None:
        train_risk = EstimatorService.complete_u(counter, samples).value
    else:
        train_risk = EstimatorService.incomplete_u(counter, samples, termset).value
    if counter.terms != budget:
        raise RuntimeError(f"{scheme} arm averaged {counter.terms} terms, expected {budget}")
    row = {
        "scheme": scheme,
        "p": p,
        "seed": seed,
        "eta0": eta0,
        "terms": budget,
        "train_risk": train_risk,
        "test_risk": _hinge_risk(theta, threshold, test, test_terms),
    }
    return row, {"scheme": scheme, "p": p, "seed": seed, "seconds": seconds}


def _sgd_compare_run(
    train: SampleSet,
    test: SampleSet,
    train_terms: TermSet,
    test_terms: TermSet,
    strategy: str,
    m: int,
    seed: int,
    eta0: float,
    steps: int,
    threshold: float,
    record_every: int
) -> Tuple[Rows, Dict[str, Any]]:
    if strategy == GradientMode.INCOMPLETE.value:
        config = SgdConfig(steps=steps, eta0=eta0, gradient_mode=GradientMode.INCOMPLETE, B=m,
                           projection=ProjectionPolicy.FINAL_ONLY, seed=seed, record_every=record_every)
        n_sub, budget = None, m
    else:
        n_sub = largest_subsample(m)
        budget = n_sub * (n_sub - 1) // 2
        config = SgdConfig(steps=steps, eta0=eta0, gradient_mode=GradientMode.COMPLETE_SUBSAMPLE, subsample_sizes=[n_sub],
                           projection=ProjectionPolicy.FINAL_ONLY, seed=seed, record_every=record_every)

    def evaluate(theta):
        # risks of the model the run would return if stopped here
        projected = LearningService.project_psd(theta)
        return {
            "train_risk": _hinge_risk(projected, threshold, train, train_terms),
            "test_risk": _hinge_risk(projected, threshold, test, test_terms),
        }

    started = time.perf_counter()
    result = LearningService.sgd(LearningService.metric_objective(threshold), train, config, np.eye(train.dim(0)), evaluate=evaluate)
    seconds = time.perf_counter() - started
    rows = [
        {
            "strategy": strategy,
            "m": m,
            "budget": budget,
            "n_sub": "" if n_sub is None else n_sub,
            "eta0": eta0,
            "seed": seed,
            "t": step.t,
            "train_risk": step.risks["train_risk"],
            "test_risk": step.risks["test_risk"],
        }
        for step in result.trajectory
    ]
    return rows, {"strategy": strategy, "m": m, "seed": seed, "seconds": seconds}


def _model_select_trial(
    samples: SampleSet,
    partitions: Sequence[Partition],
    distance_name: str,
    scheme: str,
    B: int,
    c: float,
    seed: int,
    complete_selected: int
) -> Rows:
    distance = get_distance(distance_name)
    space = IndexSpaceService.build_index_space(samples.sizes, (2,))
    rng = make_rng(seed)
    term_rng, sub_rng = rng.spawn(2)

    # 1. Incomplete risks on one shared draw
    termset = SamplingService.sample(space, SamplingScheme(scheme), B, term_rng)
    criteria = {}
    for m, part in enumerate(partitions, start=1):
        risk = EstimatorService.incomplete_u(LearningService.clustering_kernel(distance, part), samples, termset).value
        criteria[m] = risk + c * math.log(m)
    incomplete_selected = BoundsService.select_by_criterion(criteria)

    # 2. Complete risks on a subsample with a matched number of pairs
    n_sub = min(largest_subsample(B), samples.sizes[0])
    picks = np.sort(sub_rng.choice(samples.sizes[0], size=n_sub, replace=False))
    sub = samples.subset([picks])
    criteria = {}
    for m, part in enumerate(partitions, start=1):
        kernel = LearningService.clustering_kernel(distance, Partition(part.labels[picks], part.n_clusters))
        criteria[m] = EstimatorService.complete_u(kernel, sub).value + c * math.log(m)
    subsample_selected = BoundsService.select_by_criterion(criteria)

    return [
        {"arm": "incomplete", "seed": seed, "terms": len(termset), "selected": incomplete_selected,
         "complete_selected": complete_selected, "agree": int(incomplete_selected == complete_selected)},
        {"arm": "complete_subsample", "seed": seed, "terms": n_sub * (n_sub - 1) // 2, "selected": subsample_selected,
         "complete_selected": complete_selected, "agree": int(subsample_selected == complete_selected)},
    ]


def _ranking_trial(n: int, centres: Sequence[float], true_centre: float, B: Optional[int], alpha: float,
                   budget_constant: float, delta: float, seed: int) -> Dict[str, Any]:
    rng = make_rng(seed)
    data_rng, term_rng = rng.spawn(2)

    # P(y = 1 | x) falls from 0.95 at the true centre to 0.05 half a unit away
    x = data_rng.random(n)
    eta = 0.95 - 0.9 * np.minimum(1.0, np.abs(x - true_centre) / 0.5)
    y = (data_rng.random(n) < eta).astype(np.int64)
    samples = SampleSet.single(x, y)

    rules = LearningService.distance_to_centre_rankers(centres)
    kernels = [LearningService.ranking_kernel(rule) for rule in rules]
    space = IndexSpaceService.build_index_space(samples.sizes, (2,))
    budget = B or BoundsService.fast_rate_budget(n, alpha, budget_constant)

    complete_selected, complete_risks = LearningService.erm_finite_class(kernels, samples)
    termset = SamplingService.sample_with_replacement(space, budget, term_rng)
    incomplete_selected, incomplete_risks = LearningService.erm_finite_class(kernels, samples, termset=termset)

    sup_deviation = float(np.max(np.abs(np.asarray(incomplete_risks) - np.asarray(complete_risks))))
    bound = BoundsService.incomplete_vs_complete_bound(BoundInputs(
        M=1.0,
        V=max(1.0, math.log2(len(rules)) + 1.0),
        N=space.N,
        log_lambda=space.log1p_cardinality,
        B=budget,
        delta=delta,
        n=n,
    ))
    reference = int(np.argmin(np.abs(np.asarray(centres) - true_centre)))
    excess = EstimatorService.complete_u(LearningService.excess_kernel(rules[incomplete_selected], rules[reference]), samples).value
    return {
        "seed": seed,
        "B": budget,
        "sup_deviation": sup_deviation,
        "bound": bound,
        "covered": int(sup_deviation <= bound),
        "complete_selected": complete_selected,
        "incomplete_selected": incomplete_selected,
        "agree": int(complete_selected == incomplete_selected),
        "excess_risk": excess,
    }


class ExperimentService:
    @staticmethod
    def load_config(
        path: Optional[str] = None,
        overrides: Optional[Dict[str, Any]] = None,
        experiment_id: Optional[str] = None
    ) -> ExperimentConfig:
        """
        Resolve an experiment configuration: flags > file > defaults
        """
        data: Dict[str, Any] = {}
        if path:
            try:
                with open(path, "r", encoding="utf-8") as f:
                    data = json.load(f)
            except FileNotFoundError:
                raise ConfigError(f"Config file not found: {path}")
            except json.JSONDecodeError as e:
                raise ConfigError(f"Config file {path} is not valid JSON: {e}")
            if not isinstance(data, dict):
                raise ConfigError("The config file must hold a JSON object of sections")
        for dotted, value in (overrides or {}).items():
            section, _, key = dotted.partition(".")
            if not key:
                raise ConfigError(f"Override '{dotted}' must look like section.key")
            if not isinstance(data.setdefault(section, {}), dict):
                raise ConfigError(f"Section '{section}' must be an object")
            data[section][key] = value
        if experiment_id:
            data.setdefault("experiment", {})["id"] = experiment_id
        try:
            return ExperimentConfig.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"Invalid experiment configuration: {e}")

    @staticmethod
    def trial_seeds(config: ExperimentConfig) -> List[int]:
        return [config.experiment.seed + i for i in range(config.experiment.trials)]

    @staticmethod
    def _parallel(config: ExperimentConfig):
        n_jobs = config.experiment.n_jobs if config.experiment.n_jobs != 1 else settings.N_JOBS
        return Parallel(n_jobs=n_jobs)

    @staticmethod
    def write_report(
        config: ExperimentConfig,
        frame: pd.DataFrame,
        keys: List[str],
        name: str,
        storage: Optional[StorageBackend] = None,
        timing: Optional[pd.DataFrame] = None,
        plot_data: bool = False
    ) -> List[str]:
        """
        CSV report led by '# config=<json>'; rows sorted by ``keys``; timings go to a sidecar file
        """
        storage = storage or get_storage_backend(config.experiment.output_dir)
        frame = frame.sort_values(keys, kind="mergesort").reset_index(drop=True)
        header = "# config=" + json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":")) + "\n"
        written = [storage.put_text(f"{name}.csv", header + frame.to_csv(index=False, float_format="%.10g", lineterminator="\n"))]
        if timing is not None:
            timing = timing.sort_values([k for k in keys if k in timing.columns], kind="mergesort")
            written.append(storage.put_text(f"{name}_timing.csv", timing.to_csv(index=False, float_format="%.6f", lineterminator="\n")))
        if plot_data:
            value_columns = [c for c in frame.columns if c not in keys]
            long = pd.melt(frame, id_vars=keys, value_vars=value_columns, var_name="metric", value_name="value")
            written.append(storage.put_text(f"{name}_long.csv", long.to_csv(index=False, float_format="%.10g", lineterminator="\n")))
        logger.info("Wrote %s", ", ".join(written))
        return written

    @staticmethod
    def _train_test(config: ExperimentConfig) -> Tuple[SampleSet, SampleSet]:
        data = config.data
        if data.source == "csv":
            if not data.paths:
                raise ConfigError("data.paths must name the training CSV")
            train = DatasetService.load_csv_dataset(data.paths[0])
            if data.test_paths:
                return train, DatasetService.load_csv_dataset(data.test_paths[0])
            return DatasetService.split_train_test(train, train.sizes[0] // 2, seed=data.seed)
        full = DatasetService.generate_gaussian_mixture(
            dim=data.dim, n_classes=data.n_classes, subspace_dim=data.subspace_dim,
            variance=data.variance, n=data.n + data.n_test, seed=data.seed, mean_scale=data.mean_scale,
        )
        return DatasetService.split_train_test(full, data.n, seed=data.seed)

    @staticmethod
    def _pair_sample(samples: SampleSet, count: int, seed: int) -> TermSet:
        space = IndexSpaceService.build_index_space(samples.sizes, (2,))
        return SamplingService.sample_with_replacement(space, count, seed)

    @staticmethod
    def experiment_one_time_sampling(
        config: ExperimentConfig,
        storage: Optional[StorageBackend] = None,
        plot_data: bool = False
    ) -> pd.DataFrame:
        """
        Metric learning ERM with p(p-1)/2 pairs: complete on a p-subsample vs sampled from all pairs
        """
        section = config.sampling
        train, test = ExperimentService._train_test(config)
        if max(section.p_grid) > train.sizes[0]:
            raise DomainError(f"p = {max(section.p_grid)} exceeds the {train.sizes[0]} training observations")
        # fixed across arms, p values and seeds
        train_terms = ExperimentService._pair_sample(train, section.train_pairs, config.data.seed + 2)
        test_terms = ExperimentService._pair_sample(test, section.test_pairs, config.data.seed + 1)
        seeds = ExperimentService.trial_seeds(config)
        schemes = ["complete_subsample", "incomplete"]
        args = (section.steps, section.threshold)

        # 1. eta0 per (scheme, p), tuned on the first seed by risk over the whole training sample
        eta0 = {}
        for scheme in schemes:
            for p in section.p_grid:
                tuned = [
                    (_tuning_risk(train, train_terms, scheme, p, seeds[0], eta, *args), eta)
                    for eta in section.eta0_grid
                ]
                eta0[(scheme, p)] = min(tuned)[1]
                logger.info("one-time-sampling: %s p=%d uses eta0=%g", scheme, p, eta0[(scheme, p)])

        # 2. All seeds at the tuned learning rates
        jobs = [(scheme, p, seed) for scheme in schemes for p in section.p_grid for seed in seeds]
        results = ExperimentService._parallel(config)(
            delayed(_one_time_arm)(train, test, test_terms, scheme, p, seed, eta0[(scheme, p)], *args)
            for scheme, p, seed in jobs
        )
        frame = pd.DataFrame([row for row, _ in results])
        timing = pd.DataFrame([t for _, t in results])
        ExperimentService.write_report(
            config, frame, ["scheme", "p", "seed"], config.experiment.report_name, storage, timing, plot_data
        )
        return frame

    @staticmethod
    def experiment_sgd_compare(
        config: ExperimentConfig,
        storage: Optional[StorageBackend] = None,
        plot_data: bool = False
    ) -> pd.DataFrame:
        """
        SGD with incomplete gradients (B = m draws) vs complete gradients on n'-subsamples (n'(n'-1)/2 <= m)
        """
        section = config.sgd
        train, test = ExperimentService._train_test(config)
        train_terms = ExperimentService._pair_sample(train, section.train_pairs, config.data.seed + 2)
        test_terms = ExperimentService._pair_sample(test, section.test_pairs, config.data.seed + 1)
        seeds = ExperimentService.trial_seeds(config)
        strategies = [GradientMode.INCOMPLETE.value, GradientMode.COMPLETE_SUBSAMPLE.value]
        args = (section.steps, section.threshold, section.record_every)

        eta0 = {}
        for strategy in strategies:
            for m in section.batch_sizes:
                finals = []
                for eta in section.eta0_grid:
                    rows, _ = _sgd_compare_run(train, test, train_terms, test_terms, strategy, m, seeds[0], eta, *args)
                    finals.append((rows[-1]["train_risk"], eta))
                eta0[(strategy, m)] = min(finals)[1]
                logger.info("sgd-compare: %s m=%d uses eta0=%g", strategy, m, eta0[(strategy, m)])

        jobs = [(strategy, m, seed) for strategy in strategies for m in section.batch_sizes for seed in seeds]
        results = ExperimentService._parallel(config)(
            delayed(_sgd_compare_run)(train, test, train_terms, test_terms, strategy, m, seed, eta0[(strategy, m)], *args)
            for strategy, m, seed in jobs
        )
        frame = pd.DataFrame([row for rows, _ in results for row in rows])
        timing = pd.DataFrame([t for _, t in results])
        name = config.experiment.report_name
        ExperimentService.write_report(config, frame, ["strategy", "m", "seed", "t"], name, storage, timing, plot_data)

        final = frame[frame["t"] == section.steps]
        summary = final.groupby(["strategy", "m", "budget"], as_index=False).agg(
            mean_test_risk=("test_risk", "mean"),
            std_test_risk=("test_risk", "std"),
            mean_train_risk=("train_risk", "mean"),
        )
        ExperimentService.write_report(config, summary, ["strategy", "m"], f"{name}_summary", storage)
        return frame

    @staticmethod
    def experiment_model_select(
        config: ExperimentConfig,
        storage: Optional[StorageBackend] = None,
        plot_data: bool = False
    ) -> pd.DataFrame:
        """
        Select the number of clusters by risk + c log m: complete criterion vs incomplete and subsample estimates
        """
        section = config.selection
        data = config.data
        if data.source == "csv":
            if not data.paths:
                raise ConfigError("data.paths must name the dataset CSV")
            samples = DatasetService.load_csv_dataset(data.paths[0])
        else:
            samples = DatasetService.generate_gaussian_mixture(
                dim=data.dim, n_classes=data.n_classes, subspace_dim=data.subspace_dim,
                variance=data.variance, n=data.n, seed=data.seed, mean_scale=data.mean_scale,
            )
        n = samples.sizes[0]
        if data.partitions_path:
            nested = DatasetService.load_partitions_csv(data.partitions_path, n=n)
        else:
            nested = DatasetService.agglomerative_ward(samples, max_clusters=section.max_models)
        partitions = nested.partitions[: section.max_models]
        space = IndexSpaceService.build_index_space(samples.sizes, (2,))
        if section.scheme == SamplingScheme.WITHOUT_REPLACEMENT.value and section.B > space.cardinality:
            raise DomainError(f"B = {section.B} exceeds the {space.cardinality} pairs available without replacement")

        distance = get_distance(section.distance)
        risk_rows = []
        criteria = {}
        for m, part in enumerate(partitions, start=1):
            risk = EstimatorService.complete_u(LearningService.clustering_kernel(distance, part), samples, space).value
            criteria[m] = risk + section.c * math.log(m)
            risk_rows.append({"m": m, "complete_risk": risk, "criterion": criteria[m]})
        complete_selected = BoundsService.select_by_criterion(criteria)
        logger.info("model-select: complete criterion picks m=%d", complete_selected)

        results = ExperimentService._parallel(config)(
            delayed(_model_select_trial)(samples, partitions, section.distance, section.scheme, section.B,
                                         section.c, seed, complete_selected)
            for seed in ExperimentService.trial_seeds(config)
        )
        frame = pd.DataFrame([row for rows in results for row in rows])
        name = config.experiment.report_name
        ExperimentService.write_report(config, frame, ["arm", "seed"], name, storage, plot_data=plot_data)

        summary = frame.groupby("arm", as_index=False).agg(agreement_rate=("agree", "mean"), terms=("terms", "first"))
        summary["complete_selected"] = complete_selected
        # unordered pairs averaged by the complete risk; ordered-pair bookkeeping counts twice as many
        summary["complete_terms"] = space.cardinality
        summary["complete_terms_ordered"] = 2 * space.cardinality
        ExperimentService.write_report(config, summary, ["arm"], f"{name}_summary", storage)
        ExperimentService.write_report(config, pd.DataFrame(risk_rows), ["m"], f"{name}_risks", storage)
        return frame

    @staticmethod
    def experiment_ranking(
        config: ExperimentConfig,
        storage: Optional[StorageBackend] = None,
        plot_data: bool = False
    ) -> pd.DataFrame:
        """
        Finite class of distance-to-centre rankers: incomplete vs complete ERM and deviation-bound coverage
        """
        section = config.ranking
        offsets = np.arange(section.n_rules) - section.n_rules // 2
        centres = (section.centre + section.spacing * offsets).tolist()
        results = ExperimentService._parallel(config)(
            delayed(_ranking_trial)(section.n, centres, section.centre, section.B, section.alpha,
                                    section.budget_constant, section.delta, seed)
            for seed in ExperimentService.trial_seeds(config)
        )
        frame = pd.DataFrame(results)
        name = config.experiment.report_name
        ExperimentService.write_report(config, frame, ["seed"], name, storage, plot_data=plot_data)
        summary = pd.DataFrame([{
            "trials": len(frame),
            "B": int(frame["B"].iloc[0]),
            "coverage_rate": float(frame["covered"].mean()),
            "agreement_rate": float(frame["agree"].mean()),
            "mean_excess_risk": float(frame["excess_risk"].mean()),
        }])
        ExperimentService.write_report(config, summary, ["trials"], f"{name}_summary", storage)
        return frame

    @staticmethod
    def run_experiment(config: ExperimentConfig, storage: Optional[StorageBackend] = None, plot_data: bool = False) -> pd.DataFrame:
        runners: Dict[str, Callable[..., pd.DataFrame]] = {
            "one-time-sampling": ExperimentService.experiment_one_time_sampling,
            "sgd-compare": ExperimentService.experiment_sgd_compare,
            "model-select": ExperimentService.experiment_model_select,
            "ranking": ExperimentService.experiment_ranking,
        }
        logger.info("Running experiment %s with %d trials", config.experiment.id, config.experiment.trials)
        return runners[config.experiment.id](config, storage=storage, plot_data=plot_data)
