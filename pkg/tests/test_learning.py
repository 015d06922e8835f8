import math
import numpy as np
import pytest
from pydantic import ValidationError

from ustat.kernels import ConstantKernel
from ustat.schemas.data import SampleSet
from ustat.schemas.estimates import EstimatorConfig, SamplingScheme
from ustat.schemas.learning import (
    GradientMode,
    MetricModel,
    Objective,
    Partition,
    ProjectionPolicy,
    RankingRule,
    SgdConfig,
)
from ustat.services.estimator_service import EstimatorService
from ustat.services.index_space_service import IndexSpaceService
from ustat.services.learning_service import LearningService, get_distance
from ustat.utils.errors import ConfigError, DomainError, InvalidDegreesError
from helpers import check_block_symmetry


@pytest.fixture
def line_points():
    return SampleSet.single([[0.0], [1.0], [10.0], [11.0]])


@pytest.fixture
def labelled(rng):
    return SampleSet.single(rng.standard_normal((12, 2)), np.arange(12) % 3)


def _risk(kernel, samples):
    return EstimatorService.complete_u(kernel, samples).value


def test_clustering_singletons(line_points):
    kernel = LearningService.clustering_kernel("euclidean", Partition(np.arange(4), 4))
    assert _risk(kernel, line_points) == 0.0


def test_clustering_single_cluster(line_points):
    kernel = LearningService.clustering_kernel("euclidean", Partition(np.zeros(4), 1))
    x = [0.0, 1.0, 10.0, 11.0]
    mean_distance = sum(abs(a - b) for i, a in enumerate(x) for b in x[i + 1:]) / 6
    assert _risk(kernel, line_points) == pytest.approx(mean_distance)


def test_clustering_two_groups(line_points):
    kernel = LearningService.clustering_kernel("euclidean", Partition([0, 0, 1, 1], 2))
    assert _risk(kernel, line_points) == pytest.approx(1 / 3)


def test_clustering_partition_length_mismatch(line_points):
    kernel = LearningService.clustering_kernel("euclidean", Partition([0, 1, 1], 2))
    with pytest.raises(DomainError):
        _risk(kernel, line_points)


def test_partition_label_out_of_range():
    with pytest.raises(DomainError):
        Partition([0, 2], 2)


def test_unknown_distance():
    with pytest.raises(ConfigError):
        get_distance("cosine")


def test_metric_hinge_examples():
    same = SampleSet.single([[1.0, 2.0], [1.0, 2.0]], [4, 4])
    kernel = LearningService.metric_hinge_kernel(MetricModel.identity(2, threshold=2.0))
    assert kernel.evaluate(same, ((0, 1),)) == 0.0

    different = SampleSet.single([[0.0, 0.0], [1.0, 1.0]], [0, 1])
    assert kernel.evaluate(different, ((0, 1),)) == pytest.approx(1.0)


def test_metric_hinge_zero_model(labelled):
    kernel = LearningService.metric_hinge_kernel(MetricModel(np.zeros((2, 2)), threshold=0.0))
    assert _risk(kernel, labelled) == pytest.approx(1.0)


def test_metric_model_is_symmetrised():
    model = MetricModel(np.array([[1.0, 2.0], [0.0, 1.0]]))
    assert np.array_equal(model.matrix, np.array([[1.0, 1.0], [1.0, 1.0]]))


def test_metric_model_rejects_indefinite_matrix():
    with pytest.raises(DomainError, match="positive semidefinite"):
        MetricModel(np.diag([1.0, -0.5]))
    # rounding-level negative eigenvalues pass
    MetricModel(LearningService.project_psd(np.diag([1.0, -0.5])))


def test_metric_objective_kernel_uses_projected_iterate():
    kernel = LearningService.metric_objective(2.0).kernel(np.diag([1.0, -3.0]))
    assert np.array_equal(kernel.model.matrix, np.diag([1.0, 0.0]))


def test_hinge_gradient_inactive():
    model = MetricModel.identity(2, threshold=2.0)
    grad = LearningService.metric_hinge_gradient(model, [0.0, 0.0], 1, [0.1, 0.0], 1)
    assert np.array_equal(grad, np.zeros((2, 2)))


def test_hinge_gradient_active_same_class():
    model = MetricModel.identity(2, threshold=2.0)
    x, x_prime = np.array([3.0, 0.0]), np.array([0.0, 1.0])
    grad = LearningService.metric_hinge_gradient(model, x, 1, x_prime, 1)
    assert np.allclose(grad, np.outer(x - x_prime, x - x_prime))


def test_hinge_gradient_at_kink_is_zero():
    model = MetricModel.identity(1, threshold=2.0)
    # same class, D = 1: 1 - (2 - 1) = 0
    grad = LearningService.metric_hinge_gradient(model, [1.0], 0, [0.0], 0)
    assert np.array_equal(grad, np.zeros((1, 1)))


def test_hinge_gradient_finite_differences():
    rng = np.random.default_rng(31)
    h = 1e-5
    checked = 0
    while checked < 100:
        a = rng.standard_normal((3, 3))
        matrix = a @ a.T / 3 + 0.1 * np.eye(3)
        x, x_prime = rng.standard_normal(3), rng.standard_normal(3)
        y, y_prime = rng.integers(0, 2, size=2)
        diff = x - x_prime
        y_pair = 1.0 if y == y_prime else -1.0
        if abs(1.0 - y_pair * (2.0 - diff @ matrix @ diff)) < 1e-3:
            continue
        samples = SampleSet.single(np.vstack([x, x_prime]), [y, y_prime])
        loss = lambda m: LearningService.metric_hinge_kernel(MetricModel(m, 2.0)).evaluate(samples, ((0, 1),))
        numeric = np.zeros((3, 3))
        for i in range(3):
            for j in range(3):
                step = np.zeros((3, 3))
                step[i, j] = h
                numeric[i, j] = (loss(matrix + step) - loss(matrix - step)) / (2 * h)
        analytic = LearningService.metric_hinge_gradient(MetricModel(matrix, 2.0), x, y, x_prime, y_prime)
        assert np.linalg.norm(numeric - analytic) <= 1e-4 * max(np.linalg.norm(analytic), 1.0)
        checked += 1


def test_hinge_gradient_sum_matches_pairs(labelled):
    model = MetricModel(np.diag([0.5, 1.5]), threshold=2.0)
    space = IndexSpaceService.build_index_space([12], [2])
    blocks = IndexSpaceService.unrank_many(space, np.arange(space.cardinality))
    total = LearningService.metric_hinge_gradient_sum(model.matrix, 2.0, labelled, blocks)
    x, y = labelled.features(0), labelled.labels_of(0)
    expected = sum(
        LearningService.metric_hinge_gradient(model, x[i], y[i], x[j], y[j]) for i, j in blocks[0].tolist()
    )
    assert np.allclose(total, expected)


def test_vus_ordered_classes():
    samples = SampleSet(blocks=([[0.0], [1.0]], [[5.0], [6.0], [7.0]], [[10.0], [12.0]]))
    kernel = LearningService.vus_kernel(lambda z: z[:, 0], 3)
    assert _risk(kernel, samples) == 1.0


def test_vus_constant_score():
    samples = SampleSet(blocks=([[0.0], [1.0]], [[5.0], [6.0]]))
    kernel = LearningService.vus_kernel(lambda z: np.zeros(z.shape[0]), 2)
    assert _risk(kernel, samples) == 0.0


def test_vus_broken_chain():
    samples = SampleSet(blocks=([[0.1]], [[0.5]], [[0.3]]))
    kernel = LearningService.vus_kernel(lambda z: z[:, 0], 3)
    assert _risk(kernel, samples) == 0.0


def test_vus_needs_two_samples():
    with pytest.raises(InvalidDegreesError):
        LearningService.vus_kernel(lambda z: z[:, 0], 1)


def test_ranking_perfect_and_reversed():
    samples = SampleSet.single([[0.0], [1.0], [2.0], [3.0], [4.0]], [0, 0, 1, 1, 2])
    perfect = RankingRule.from_score(lambda z: z[:, 0])
    reversed_rule = RankingRule.from_score(lambda z: -z[:, 0])
    assert _risk(LearningService.ranking_kernel(perfect), samples) == 0.0
    assert _risk(LearningService.ranking_kernel(reversed_rule), samples) == pytest.approx(0.8)


def test_excess_of_reference_is_zero(labelled):
    rule = RankingRule.from_score(lambda z: z[:, 1])
    assert _risk(LearningService.excess_kernel(rule, rule), labelled) == 0.0


def test_centre_rankers_are_antisymmetric(rng):
    rules = LearningService.distance_to_centre_rankers(np.linspace(0, 1, 8))
    a, b = rng.random((50, 1)), rng.random((50, 1))
    for rule in rules:
        assert np.array_equal(rule(a, b), -rule(b, a))


def test_pairwise_kernels_are_symmetric(labelled, rng):
    kernels = [
        LearningService.clustering_kernel("sqeuclidean", Partition(np.arange(12) % 4, 4)),
        LearningService.metric_hinge_kernel(MetricModel(np.diag([1.0, 0.2]), 1.0)),
        LearningService.ranking_kernel(RankingRule.from_score(lambda z: z[:, 0] + z[:, 1])),
    ]
    for kernel in kernels:
        assert check_block_symmetry(kernel, labelled, 20, rng)


def test_risk_ranges(rng):
    samples = SampleSet.single(rng.standard_normal((15, 2)), rng.integers(0, 3, size=15))
    rule = RankingRule.from_score(lambda z: z[:, 0])
    assert 0.0 <= _risk(LearningService.ranking_kernel(rule), samples) <= 1.0
    assert _risk(LearningService.clustering_kernel("euclidean", Partition(rng.integers(0, 3, size=15), 3)), samples) >= 0.0
    assert _risk(LearningService.metric_hinge_kernel(MetricModel.identity(2)), samples) >= 0.0
    blocks = SampleSet(blocks=(rng.standard_normal((4, 1)), rng.standard_normal((5, 1))))
    assert 0.0 <= _risk(LearningService.vus_kernel(lambda z: z[:, 0], 2), blocks) <= 1.0


def test_named_kernels(labelled):
    assert LearningService.named_kernel("product-sum", labelled).degrees == (2,)
    with pytest.raises(ConfigError):
        LearningService.named_kernel("clustering", labelled)
    with pytest.raises(ConfigError):
        LearningService.named_kernel("gaussian", labelled)


def test_erm_constant_class(labelled):
    kernels = [ConstantKernel(0.1), ConstantKernel(0.2)]
    assert LearningService.erm_finite_class(kernels, labelled)[0] == 0
    config = EstimatorConfig(kind="incomplete", B=5, seed=1)
    assert LearningService.erm_finite_class(kernels, labelled, config)[0] == 0


def test_erm_ties_go_to_first(labelled):
    assert LearningService.erm_finite_class([ConstantKernel(0.3)] * 3, labelled)[0] == 0


def test_erm_full_without_replacement_is_complete(labelled):
    rules = [RankingRule.from_score(lambda z, w=w: z[:, 0] + w * z[:, 1]) for w in (-1.0, 0.0, 0.5, 2.0)]
    kernels = [LearningService.ranking_kernel(rule) for rule in rules]
    complete_best, complete_risks = LearningService.erm_finite_class(kernels, labelled)
    config = EstimatorConfig(kind="incomplete", scheme=SamplingScheme.WITHOUT_REPLACEMENT, B=66, seed=3)
    best, risks = LearningService.erm_finite_class(kernels, labelled, config)
    assert best == complete_best
    assert np.allclose(risks, complete_risks, rtol=1e-12, atol=0)


def test_erm_empty_class(labelled):
    with pytest.raises(DomainError):
        LearningService.erm_finite_class([], labelled)


def test_project_psd_examples():
    assert np.allclose(LearningService.project_psd(np.eye(3)), np.eye(3))
    assert np.allclose(LearningService.project_psd(np.diag([1.0, -2.0])), np.diag([1.0, 0.0]))


def test_project_psd_keeps_gram_matrix(rng):
    a = rng.standard_normal((4, 6))
    gram = a @ a.T
    assert np.allclose(LearningService.project_psd(gram), gram, atol=1e-10, rtol=0)


def test_project_psd_idempotent(rng):
    matrix = rng.standard_normal((5, 5))
    once = LearningService.project_psd(matrix)
    assert np.allclose(once, once.T, atol=0, rtol=0)
    assert np.linalg.eigvalsh(once)[0] >= -1e-10
    assert np.allclose(LearningService.project_psd(once), once, atol=1e-12, rtol=0)


def test_sgd_config_validation():
    with pytest.raises(ValidationError):
        SgdConfig(steps=10, eta0=1.0, gradient_mode=GradientMode.INCOMPLETE)
    with pytest.raises(ValidationError):
        SgdConfig(steps=10, eta0=1.0, gradient_mode=GradientMode.COMPLETE_SUBSAMPLE, B=10, subsample_sizes=[5])
    assert SgdConfig(steps=10, eta0=4.0, B=3).learning_rate(2) == pytest.approx(1 / 8)


def test_subsample_below_degree(labelled):
    objective = LearningService.metric_objective()
    with pytest.raises(InvalidDegreesError):
        LearningService.estimate_gradient(objective, labelled, np.eye(2), GradientMode.COMPLETE_SUBSAMPLE, subsample_sizes=[1])


def test_sgd_zero_gradient_keeps_theta(labelled):
    objective = Objective(degrees=(2,), kernel=lambda theta: ConstantKernel(0.0),
                          gradient_sum=lambda theta, samples, blocks: np.zeros_like(theta))
    config = SgdConfig(steps=25, eta0=1.0, B=4, seed=2, record_every=5)
    theta0 = np.array([[1.0, 0.5], [0.5, 2.0]])
    result = LearningService.sgd(objective, labelled, config, theta0)
    assert np.array_equal(result.theta, theta0)
    assert [step.t for step in result.trajectory] == [0, 5, 10, 15, 20, 25]
    assert result.terms_per_step == 4


def test_sgd_zero_steps(labelled):
    config = SgdConfig(steps=0, eta0=1.0, B=4)
    result = LearningService.sgd(LearningService.metric_objective(), labelled, config, np.eye(2),
                                 evaluate=lambda theta: {"risk": 1.0})
    assert len(result.trajectory) == 1
    assert result.trajectory[0].risks == {"risk": 1.0}


def test_sgd_is_deterministic(labelled):
    config = SgdConfig(steps=30, eta0=5.0, B=6, seed=9)
    first = LearningService.sgd(LearningService.metric_objective(), labelled, config, np.eye(2))
    second = LearningService.sgd(LearningService.metric_objective(), labelled, config, np.eye(2))
    assert np.array_equal(first.theta, second.theta)


@pytest.mark.parametrize("policy", list(ProjectionPolicy))
def test_sgd_ends_in_psd_cone(labelled, policy):
    config = SgdConfig(steps=40, eta0=2.0, B=8, seed=1, projection=policy)
    result = LearningService.sgd(LearningService.metric_objective(threshold=0.5), labelled, config, np.eye(2))
    assert MetricModel(result.theta).min_eigenvalue() >= -1e-10
    if policy == ProjectionPolicy.EVERY_STEP:
        for step in result.trajectory:
            assert MetricModel(step.theta).min_eigenvalue() >= -1e-10


def test_full_gradient_descent_on_quadratic(rng):
    samples = SampleSet.single(rng.standard_normal((10, 2)))
    space = IndexSpaceService.build_index_space([10], [2])
    blocks = IndexSpaceService.unrank_many(space, np.arange(space.cardinality))
    x = samples.features(0)
    midpoints = (x[blocks[0][:, 0]] + x[blocks[0][:, 1]]) / 2

    def gradient_sum(theta, data, index_blocks):
        z = data.features(0)
        idx = index_blocks[0]
        return np.sum(theta[None, :] - (z[idx[:, 0]] + z[idx[:, 1]]) / 2, axis=0)

    objective = Objective(degrees=(2,), kernel=lambda theta: ConstantKernel(0.0), gradient_sum=gradient_sum)
    config = SgdConfig(steps=30, eta0=2.0, gradient_mode=GradientMode.FULL)
    evaluate = lambda theta: {"risk": float(np.mean(np.sum((theta - midpoints) ** 2, axis=1)) / 2)}
    result = LearningService.sgd(objective, samples, config, np.array([5.0, -5.0]), evaluate=evaluate)
    risks = [step.risks["risk"] for step in result.trajectory]
    assert all(b <= a for a, b in zip(risks, risks[1:]))
    assert risks[-1] < risks[0]


@pytest.mark.parametrize("mode,kwargs", [
    (GradientMode.INCOMPLETE, {"B": 5}),
    (GradientMode.COMPLETE_SUBSAMPLE, {"subsample_sizes": [6]}),
])
def test_gradient_estimates_are_unbiased(labelled, mode, kwargs):
    objective = LearningService.metric_objective(threshold=2.0)
    theta = np.diag([0.7, 1.3])
    full, _ = LearningService.estimate_gradient(objective, labelled, theta, GradientMode.FULL)
    rng = np.random.default_rng(8)
    draws = np.array([
        LearningService.estimate_gradient(objective, labelled, theta, mode, rng=rng, **kwargs)[0]
        for _ in range(10_000)
    ])
    mean = draws.mean(axis=0)
    se = draws.std(axis=0, ddof=1) / math.sqrt(draws.shape[0])
    assert np.all(np.abs(mean - full) <= 4 * se + 1e-12)


def test_matched_budget_metric_gradient_variance_rates():
    # one class and b = 0: every pair is active and the gradient is (x - x')(x - x')^T
    x = np.random.default_rng(123).standard_normal((4000, 2))
    samples = SampleSet.single(x, np.zeros(4000, dtype=np.int64))
    objective = LearningService.metric_objective(threshold=0.0)
    theta = np.eye(2)
    rng = np.random.default_rng(77)
    sizes = [8, 16, 32, 64]
    incomplete_var, subsample_var = [], []
    for n_sub in sizes:
        B = n_sub * (n_sub - 1) // 2
        inc = np.array([
            LearningService.estimate_gradient(objective, samples, theta, GradientMode.INCOMPLETE, B=B, rng=rng)[0]
            for _ in range(10000)
        ])
        sub = np.array([
            LearningService.estimate_gradient(objective, samples, theta, GradientMode.COMPLETE_SUBSAMPLE,
                                              subsample_sizes=[n_sub], rng=rng)[0]
            for _ in range(10000)
        ])
        incomplete_var.append(inc.var(axis=0).sum())
        subsample_var.append(sub.var(axis=0).sum())
    assert all(a < b for a, b in zip(incomplete_var, subsample_var))
    log_sizes = np.log(sizes)
    assert np.polyfit(log_sizes, np.log(incomplete_var), 1)[0] == pytest.approx(-2.0, abs=0.3)
    assert np.polyfit(log_sizes, np.log(subsample_var), 1)[0] == pytest.approx(-1.0, abs=0.3)
