import io
import numpy as np
import pytest

from ustat.schemas.data import SampleSet
from ustat.schemas.learning import MetricModel, Partition
from ustat.services.dataset_service import DatasetService
from ustat.services.estimator_service import EstimatorService
from ustat.services.learning_service import LearningService
from ustat.utils.errors import DataParseError, DomainError


def test_mixture_is_balanced():
    samples = DatasetService.generate_gaussian_mixture(n=100, seed=3)
    assert samples.sizes == (100,)
    assert samples.dim(0) == 40
    assert np.array_equal(np.bincount(samples.labels_of(0)), np.full(10, 10))


def test_mixture_without_noise_sits_on_means():
    samples = DatasetService.generate_gaussian_mixture(dim=12, n_classes=6, subspace_dim=4, variance=0.0, n=60, seed=2)
    x, y = samples.features(0), samples.labels_of(0)
    means = np.vstack([x[y == c][0] for c in range(6)])
    for c in range(6):
        assert np.allclose(x[y == c], means[c], atol=0, rtol=0)
    singular = np.linalg.svd(means, compute_uv=False)
    assert singular[4] <= 1e-8


def test_mixture_is_deterministic():
    first = DatasetService.generate_gaussian_mixture(dim=5, subspace_dim=3, n=50, seed=11)
    second = DatasetService.generate_gaussian_mixture(dim=5, subspace_dim=3, n=50, seed=11)
    assert np.array_equal(first.features(0), second.features(0))
    assert np.array_equal(first.labels_of(0), second.labels_of(0))


def test_mixture_subspace_above_dim():
    with pytest.raises(DomainError):
        DatasetService.generate_gaussian_mixture(dim=5, subspace_dim=6)


def test_split_train_test(small_samples):
    train, test = DatasetService.split_train_test(small_samples, 4, seed=1)
    assert train.sizes == (4,) and test.sizes == (3,)
    rows = {tuple(r) for r in np.vstack([train.features(0), test.features(0)]).tolist()}
    assert rows == {tuple(r) for r in small_samples.features(0).tolist()}


def test_csv_round_trip(tmp_path):
    samples = DatasetService.generate_gaussian_mixture(dim=3, n_classes=2, subspace_dim=2, n=25, seed=5)
    path = tmp_path / "data.csv"
    path.write_text(DatasetService.dataset_to_csv(samples))
    loaded = DatasetService.load_csv_dataset(str(path))
    assert np.array_equal(loaded.features(0), samples.features(0))
    assert np.array_equal(loaded.labels_of(0), samples.labels_of(0))


def test_csv_parses_shortest_repr_exactly(rng):
    values = rng.standard_normal(2000) * 10.0 ** rng.integers(-8, 8, size=2000)
    text = "x\n" + "".join(f"{v!r}\n" for v in values.tolist())
    loaded = DatasetService.load_csv_dataset(io.StringIO(text))
    assert np.array_equal(loaded.features(0)[:, 0], values)


def test_small_csv_shape():
    loaded = DatasetService.load_csv_dataset(io.StringIO("a,b\n1,2\n3,4\n5,6\n"))
    assert loaded.sizes == (3,)
    assert loaded.dim(0) == 2
    assert not loaded.has_labels(0)


def test_csv_one_file_per_block(tmp_path):
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    first.write_text("x0\n1\n2\n")
    second.write_text("x0,label\n3,1\n4,0\n5,1\n")
    loaded = DatasetService.load_csv_dataset([str(first), str(second)])
    assert loaded.sizes == (2, 3)
    assert loaded.labels_of(1).tolist() == [1, 0, 1]


def test_csv_non_numeric_cell():
    with pytest.raises(DataParseError) as excinfo:
        DatasetService.load_csv_dataset(io.StringIO("x0,x1\n1,2\n3,abc\n"))
    assert excinfo.value.row == 3
    assert excinfo.value.column == "x1"


def test_csv_missing_cell():
    with pytest.raises(DataParseError) as excinfo:
        DatasetService.load_csv_dataset(io.StringIO("x0,x1\n1,2\n,4\n"))
    assert excinfo.value.row == 3
    assert excinfo.value.column == "x0"


def test_csv_ragged_row():
    with pytest.raises(DataParseError) as excinfo:
        DatasetService.load_csv_dataset(io.StringIO("x0,x1\n1,2\n3,4,5\n"))
    assert excinfo.value.row == 3


def test_csv_fractional_label():
    with pytest.raises(DataParseError) as excinfo:
        DatasetService.load_csv_dataset(io.StringIO("x0,label\n1,0\n2,1.5\n"))
    assert excinfo.value.row == 3
    assert excinfo.value.column == "label"


def test_csv_missing_file(tmp_path):
    with pytest.raises(DataParseError):
        DatasetService.load_csv_dataset(str(tmp_path / "nothing.csv"))


def test_partitions_round_trip():
    text = "0,0,0,0\n0,0,1,1\n0,1,2,2\n"
    nested = DatasetService.load_partitions_csv(io.StringIO(text), n=4)
    assert len(nested) == 3
    assert nested.get(2).labels.tolist() == [0, 0, 1, 1]
    assert DatasetService.partitions_to_csv(nested) == text


def test_partitions_label_out_of_range():
    with pytest.raises(DataParseError) as excinfo:
        DatasetService.load_partitions_csv(io.StringIO("0,0,0\n0,2,1\n"))
    assert excinfo.value.row == 2
    assert excinfo.value.column == "1"


def test_partitions_length_mismatch():
    with pytest.raises(DataParseError):
        DatasetService.load_partitions_csv(io.StringIO("0,0,0\n0,1,1\n"), n=4)


def test_ward_two_clouds(rng):
    left = rng.normal(0.0, 0.1, size=(10, 2))
    right = rng.normal(5.0, 0.1, size=(8, 2))
    nested = DatasetService.agglomerative_ward(SampleSet.single(np.vstack([left, right])))
    labels = nested.get(2).labels
    assert len(set(labels[:10].tolist())) == 1
    assert len(set(labels[10:].tolist())) == 1
    assert labels[0] != labels[10]


def test_ward_two_points():
    nested = DatasetService.agglomerative_ward(SampleSet.single([[0.0], [1.0]]))
    assert nested.get(1).labels.tolist() == [0, 0]
    assert nested.get(2).labels.tolist() == [0, 1]


def test_ward_needs_two_points():
    with pytest.raises(DomainError):
        DatasetService.agglomerative_ward(SampleSet.single([[0.0]]))


def test_ward_partitions_are_nested(rng):
    samples = SampleSet.single(rng.standard_normal((30, 3)))
    nested = DatasetService.agglomerative_ward(samples)
    assert len(nested) == 30
    for m in range(1, 30):
        finer, coarser = nested.get(m + 1), nested.get(m)
        assert len(set(finer.labels.tolist())) == m + 1
        assert finer.refines(coarser)
    scatter = [
        EstimatorService.complete_u(LearningService.clustering_kernel("sqeuclidean", nested.get(m)), samples).value
        for m in range(1, 31)
    ]
    assert all(b <= a + 1e-12 for a, b in zip(scatter, scatter[1:]))
    assert scatter[-1] == 0.0


def test_refines():
    assert Partition([0, 0, 1, 2], 3).refines(Partition([0, 0, 1, 1], 2))
    assert not Partition([0, 1, 1, 2], 3).refines(Partition([0, 0, 1, 1], 2))


def test_metric_checkpoint_round_trip():
    model = MetricModel(np.array([[2.0, 0.25], [0.25, 1.0 / 3.0]]), threshold=1.5)
    restored = DatasetService.metric_model_from_csv(DatasetService.metric_model_to_csv(model))
    assert np.array_equal(restored.matrix, model.matrix)
    assert restored.threshold == 1.5


def test_metric_checkpoint_needs_threshold():
    with pytest.raises(DataParseError):
        DatasetService.metric_model_from_csv("1,0\n0,1\n")


def test_model_specs(tmp_path):
    path = tmp_path / "models.csv"
    path.write_text("model_index,vc_dimension,kernel_bound,risk\n1,1,1,0.5\n2,2,1,0.3\n")
    models = DatasetService.load_model_specs_csv(str(path))
    assert [m.model_index for m in models] == [1, 2]
    assert models[1].risk == 0.3


def test_model_specs_missing_column():
    with pytest.raises(DataParseError):
        DatasetService.load_model_specs_csv(io.StringIO("model_index,risk\n1,0.5\n"))


def test_ward_capped_and_full_grids_agree(rng):
    samples = SampleSet.single(rng.standard_normal((12, 2)))
    full = DatasetService.agglomerative_ward(samples)
    capped = DatasetService.agglomerative_ward(samples, max_clusters=5)
    assert len(capped) == 5
    for m in range(1, 6):
        assert capped.get(m).labels.tolist() == full.get(m).labels.tolist()
    assert sorted(full.get(12).labels.tolist()) == list(range(12))
