from typing import Callable, Dict, List, Optional, Sequence, Tuple
import logging
import math
import numpy as np

from ustat.kernels import AbsoluteDifferenceKernel, Kernel, ProductSumKernel
from ustat.schemas.data import IndexSpace, SampleSet
from ustat.schemas.estimates import EstimatorConfig, TermSet
from ustat.schemas.learning import (
    GradientMode,
    MetricModel,
    Objective,
    Partition,
    ProjectionPolicy,
    RankingRule,
    SgdConfig,
    SgdResult,
    SgdStep,
)
from ustat.services.estimator_service import EstimatorService
from ustat.services.index_space_service import IndexSpaceService
from ustat.services.sampling_service import SamplingService
from ustat.utils.errors import ConfigError, DomainError, InvalidDegreesError
from ustat.utils.rng import SeedLike, make_rng, spawn_seeds

logger = logging.getLogger("ustat-learning")

Distance = Callable[[np.ndarray, np.ndarray], np.ndarray]

DISTANCES: Dict[str, Distance] = {
    "euclidean": lambda a, b: np.sqrt(np.sum((a - b) ** 2, axis=-1)),
    "sqeuclidean": lambda a, b: np.sum((a - b) ** 2, axis=-1),
    "manhattan": lambda a, b: np.sum(np.abs(a - b), axis=-1),
}


def get_distance(name: str) -> Distance:
    if name not in DISTANCES:
        raise ConfigError(f"Unknown distance '{name}'. Available: {', '.join(sorted(DISTANCES))}")
    return DISTANCES[name]


def _pair_rows(index_blocks: Sequence[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    idx = np.asarray(index_blocks[0], dtype=np.int64)
    return idx[:, 0], idx[:, 1]


class ClusteringKernel(Kernel):
    """H_P(x, x') = D(x, x') * 1{x and x' share a cluster of P}"""

    degrees = (2,)

    def __init__(self, distance: Distance, partition: Partition):
        self.distance = distance
        self.partition = partition
        self.bound = None

    def evaluate_batch(self, samples, index_blocks):
        x = samples.features(0)
        if len(self.partition) != x.shape[0]:
            raise DomainError(f"Partition has {len(self.partition)} labels but the sample has {x.shape[0]} observations")
        i, j = _pair_rows(index_blocks)
        same = self.partition.labels[i] == self.partition.labels[j]
        values = np.zeros(i.shape[0])
        if np.any(same):
            values[same] = self.distance(x[i[same]], x[j[same]])
        return values


class MetricHingeKernel(Kernel):
    """H = max(0, 1 - y_pair (b - D_M(x, x'))), y_pair = +1 for equal labels and -1 otherwise"""

    degrees = (2,)

    def __init__(self, model: MetricModel):
        self.model = model
        self.bound = None

    def evaluate_batch(self, samples, index_blocks):
        x = samples.features(0)
        y = samples.labels_of(0)
        i, j = _pair_rows(index_blocks)
        dist = self.model.distances(x[i] - x[j])
        y_pair = np.where(y[i] == y[j], 1.0, -1.0)
        return np.maximum(0.0, 1.0 - y_pair * (self.model.threshold - dist))


class VusKernel(Kernel):
    """1{s(x_1) < ... < s(x_K)} with strict inequalities, one observation per sample"""

    def __init__(self, score: Callable[[np.ndarray], np.ndarray], K: int):
        if K < 2:
            raise InvalidDegreesError("VUS needs at least two ordered samples")
        self.score = score
        self.degrees = (1,) * K
        self.bound = 1.0

    def evaluate_batch(self, samples, index_blocks):
        scores = [
            np.asarray(self.score(samples.features(k)[np.asarray(idx, dtype=np.int64)[:, 0]]), dtype=float).reshape(-1)
            for k, idx in enumerate(index_blocks)
        ]
        ordered = np.ones(scores[0].shape[0], dtype=bool)
        for lower, upper in zip(scores, scores[1:]):
            ordered &= lower < upper
        return ordered.astype(float)


class RankingKernel(Kernel):
    """H_r((x, y), (x', y')) = 1{(y - y') r(x, x') < 0}"""

    degrees = (2,)

    def __init__(self, rule: RankingRule):
        self.rule = rule
        self.bound = 1.0

    def evaluate_batch(self, samples, index_blocks):
        x = samples.features(0)
        y = samples.labels_of(0).astype(float)
        i, j = _pair_rows(index_blocks)
        return ((y[i] - y[j]) * self.rule(x[i], x[j]) < 0).astype(float)


class ExcessKernel(Kernel):
    """q_r = H_r - H_ref"""

    def __init__(self, kernel: Kernel, reference: Kernel):
        if tuple(kernel.degrees) != tuple(reference.degrees):
            raise InvalidDegreesError("Excess kernels need matching degrees")
        self.kernel = kernel
        self.reference = reference
        self.degrees = tuple(kernel.degrees)
        bounds = (kernel.bound, reference.bound)
        self.bound = None if None in bounds else bounds[0] + bounds[1]

    def evaluate_batch(self, samples, index_blocks):
        return self.kernel.evaluate_batch(samples, index_blocks) - self.reference.evaluate_batch(samples, index_blocks)


KERNEL_NAMES = ["abs-diff", "product-sum", "clustering", "metric-hinge", "ranking", "vus"]


class LearningService:
    @staticmethod
    def named_kernel(
        name: str,
        samples: SampleSet,
        partition: Optional[Partition] = None,
        distance: str = "sqeuclidean",
        threshold: float = 2.0
    ) -> Kernel:
        """
        Kernels reachable by name from the command line and the HTTP API
        """
        if name == "abs-diff":
            return AbsoluteDifferenceKernel()
        if name == "product-sum":
            return ProductSumKernel()
        if name == "clustering":
            if partition is None:
                raise ConfigError("The clustering kernel needs a partition")
            return LearningService.clustering_kernel(distance, partition)
        if name == "metric-hinge":
            return MetricHingeKernel(MetricModel.identity(samples.dim(0), threshold))
        if name == "ranking":
            # r(x, x') = sign(x_0 - x'_0)
            return RankingKernel(RankingRule.from_score(lambda z: z[:, 0], name="first-feature"))
        if name == "vus":
            return VusKernel(lambda z: z[:, 0], samples.K)
        raise ConfigError(f"Unknown kernel '{name}'. Available: {', '.join(KERNEL_NAMES)}")

    @staticmethod
    def clustering_kernel(distance: Distance, partition: Partition) -> Kernel:
        """Kernel whose complete U-statistic is the within-cluster point scatter of the partition"""
        if isinstance(distance, str):
            distance = get_distance(distance)
        return ClusteringKernel(distance, partition)

    @staticmethod
    def metric_hinge_kernel(model: MetricModel) -> Kernel:
        return MetricHingeKernel(model)

    @staticmethod
    def metric_hinge_gradient(model: MetricModel, x, y_label: int, x_prime, y_prime: int) -> np.ndarray:
        """
        Subgradient of the hinge loss in M: y_pair (x - x')(x - x')^T when active, zero otherwise
        """
        diff = np.asarray(x, dtype=float).reshape(-1) - np.asarray(x_prime, dtype=float).reshape(-1)
        if diff.shape[0] != model.dim:
            raise DomainError(f"Observations have dimension {diff.shape[0]}, the model {model.dim}")
        y_pair = 1.0 if y_label == y_prime else -1.0
        dist = float(diff @ model.matrix @ diff)
        # the kink counts as inactive
        if 1.0 - y_pair * (model.threshold - dist) <= 0:
            return np.zeros((model.dim, model.dim))
        return y_pair * np.outer(diff, diff)

    @staticmethod
    def metric_hinge_gradient_sum(
        matrix: np.ndarray,
        threshold: float,
        samples: SampleSet,
        index_blocks: Sequence[np.ndarray]
    ) -> np.ndarray:
        """Sum of hinge subgradients over a batch of pairs"""
        x = samples.features(0)
        y = samples.labels_of(0)
        i, j = _pair_rows(index_blocks)
        diffs = x[i] - x[j]
        dist = np.einsum("bi,ij,bj->b", diffs, matrix, diffs)
        y_pair = np.where(y[i] == y[j], 1.0, -1.0)
        weights = np.where(1.0 - y_pair * (threshold - dist) > 0, y_pair, 0.0)
        return (diffs * weights[:, None]).T @ diffs

    @staticmethod
    def metric_objective(threshold: float = 2.0) -> Objective:
        """theta is the Mahalanobis matrix; b stays fixed"""
        return Objective(
            degrees=(2,),
            kernel=lambda theta: MetricHingeKernel(MetricModel(LearningService.project_psd(theta), threshold)),
            gradient_sum=lambda theta, samples, blocks: LearningService.metric_hinge_gradient_sum(
                theta, threshold, samples, blocks
            ),
            project=LearningService.project_psd,
        )

    @staticmethod
    def vus_kernel(score: Callable[[np.ndarray], np.ndarray], K: int) -> Kernel:
        return VusKernel(score, K)

    @staticmethod
    def ranking_kernel(rule: RankingRule) -> Kernel:
        return RankingKernel(rule)

    @staticmethod
    def excess_kernel(rule: RankingRule, reference: RankingRule) -> Kernel:
        return ExcessKernel(RankingKernel(rule), RankingKernel(reference))

    @staticmethod
    def distance_to_centre_rankers(centres: Sequence[float]) -> List[RankingRule]:
        """r_c(x, x') = sign(|x' - c| - |x - c|) on the first feature: closer to c ranks higher"""
        rules = []
        for c in centres:
            c = float(c)
            rules.append(RankingRule.from_score(lambda z, c=c: -np.abs(z[:, 0] - c), name=f"centre={c:.6g}"))
        return rules

    @staticmethod
    def erm_finite_class(
        kernels: Sequence[Kernel],
        samples: SampleSet,
        estimator_config: Optional[EstimatorConfig] = None,
        termset: Optional[TermSet] = None
    ) -> Tuple[int, List[float]]:
        """
        Empirical risk minimiser over a finite class; every kernel is scored on the same term set
        """
        if len(kernels) == 0:
            raise DomainError("ERM needs a nonempty class of kernels")
        config = estimator_config or EstimatorConfig()
        space = IndexSpaceService.build_index_space(samples.sizes, kernels[0].degrees)
        if config.kind == "complete" and termset is None:
            risks = [EstimatorService.complete_u(kernel, samples, space).value for kernel in kernels]
        else:
            if termset is None:
                if config.B is None:
                    raise DomainError("Incomplete ERM needs a budget B")
                termset = SamplingService.sample(space, config.scheme, config.B, config.seed)
            risks = [EstimatorService.estimate_termset(kernel, samples, termset).value for kernel in kernels]
        best = min(range(len(risks)), key=lambda m: (risks[m], m))
        logger.debug("ERM over %d kernels picked %d (risk %.6g)", len(kernels), best, risks[best])
        return best, risks

    @staticmethod
    def project_psd(matrix: np.ndarray) -> np.ndarray:
        """Frobenius-nearest PSD matrix: symmetrise, then clip negative eigenvalues"""
        mat = np.asarray(matrix, dtype=float)
        sym = (mat + mat.T) / 2.0
        eigenvalues, vectors = np.linalg.eigh(sym)
        clipped = (vectors * np.clip(eigenvalues, 0.0, None)) @ vectors.T
        return (clipped + clipped.T) / 2.0

    @staticmethod
    def _complete_gradient(objective: Objective, theta: np.ndarray, samples: SampleSet, space: IndexSpace) -> np.ndarray:
        total = np.zeros_like(theta, dtype=float)
        for start, stop in IndexSpaceService.rank_chunks(space):
            blocks = IndexSpaceService.unrank_many(space, np.arange(start, stop, dtype=np.int64))
            total += objective.gradient_sum(theta, samples, blocks)
        return total / space.cardinality

    @staticmethod
    def estimate_gradient(
        objective: Objective,
        samples: SampleSet,
        theta: np.ndarray,
        mode: GradientMode,
        B: Optional[int] = None,
        subsample_sizes: Optional[Sequence[int]] = None,
        rng: SeedLike = None,
        termset: Optional[TermSet] = None
    ) -> Tuple[np.ndarray, int]:
        """
        One gradient estimate and the number of terms it averaged
        """
        mode = GradientMode(mode)
        space = IndexSpaceService.build_index_space(samples.sizes, objective.degrees)
        if mode == GradientMode.INCOMPLETE:
            if B is None or B < 1:
                raise DomainError("Incomplete gradients need B >= 1")
            drawn = SamplingService.sample_with_replacement(space, B, make_rng(rng))
            return objective.gradient_sum(theta, samples, drawn.index_blocks) / B, B
        if mode == GradientMode.COMPLETE_SUBSAMPLE:
            if subsample_sizes is None or len(subsample_sizes) != samples.K:
                raise DomainError("Complete-subsample gradients need one subsample size per block")
            for k, (n_sub, d) in enumerate(zip(subsample_sizes, objective.degrees)):
                if n_sub < d:
                    raise InvalidDegreesError(f"Subsample size n'_{k} = {n_sub} is below the degree {d}")
                if n_sub > samples.sizes[k]:
                    raise DomainError(f"Subsample size n'_{k} = {n_sub} exceeds n_{k} = {samples.sizes[k]}")
            gen = make_rng(rng)
            picks = [np.sort(gen.choice(n_k, size=int(n_sub), replace=False))
                     for n_k, n_sub in zip(samples.sizes, subsample_sizes)]
            sub = samples.subset(picks)
            sub_space = IndexSpaceService.build_index_space(sub.sizes, objective.degrees)
            return LearningService._complete_gradient(objective, theta, sub, sub_space), sub_space.cardinality
        if termset is not None:
            return objective.gradient_sum(theta, samples, termset.index_blocks) / len(termset), len(termset)
        return LearningService._complete_gradient(objective, theta, samples, space), space.cardinality

    @staticmethod
    def sgd(
        objective: Objective,
        samples: SampleSet,
        config: SgdConfig,
        theta0: np.ndarray,
        evaluate: Optional[Callable[[np.ndarray], Dict[str, float]]] = None,
        termset: Optional[TermSet] = None
    ) -> SgdResult:
        """
        Projected (stochastic) gradient descent theta_{t+1} = P(theta_t - eta_t g(theta_t))

        Incomplete gradients redraw their B tuples at every step from a fresh child stream.
        With FINAL_ONLY projection the iterate is projected once, after the last step.
        """
        theta = np.array(theta0, dtype=float, copy=True)
        project = objective.project
        if config.projection == ProjectionPolicy.EVERY_STEP and project is not None:
            theta = project(theta)
        trajectory = [SgdStep(t=0, theta=theta.copy(), gradient_norm=0.0, risks=evaluate(theta) if evaluate else {})]
        step_seeds = spawn_seeds(config.seed, config.steps) if config.steps else []
        terms = 0
        for t in range(1, config.steps + 1):
            grad, terms = LearningService.estimate_gradient(
                objective, samples, theta, config.gradient_mode,
                B=config.B, subsample_sizes=config.subsample_sizes,
                rng=step_seeds[t - 1], termset=termset,
            )
            theta = theta - config.learning_rate(t) * grad
            last = t == config.steps
            if project is not None and (config.projection == ProjectionPolicy.EVERY_STEP or last):
                theta = project(theta)
            if t % config.record_every == 0 or last:
                trajectory.append(SgdStep(
                    t=t,
                    theta=theta.copy(),
                    gradient_norm=float(np.linalg.norm(grad)),
                    risks=evaluate(theta) if evaluate else {},
                ))
        if not math.isfinite(float(np.sum(theta))):
            raise DomainError("SGD diverged (non-finite iterate); lower the learning rate by raising eta0")
        logger.info("SGD finished %d steps in %s mode", config.steps, config.gradient_mode.value)
        return SgdResult(theta=theta, trajectory=trajectory, terms_per_step=terms)
