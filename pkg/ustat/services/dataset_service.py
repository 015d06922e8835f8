from typing import IO, List, Optional, Sequence, Union
import io
import logging
import os
import re
import numpy as np
import pandas as pd
from scipy.cluster.hierarchy import cut_tree, linkage

from ustat.schemas.bounds import ModelSpec
from ustat.schemas.data import SampleSet
from ustat.schemas.learning import MetricModel, NestedPartitions, Partition, SgdResult
from ustat.utils.errors import DataParseError, DomainError
from ustat.utils.rng import SeedLike, make_rng

logger = logging.getLogger("ustat-datasets")

LABEL_COLUMN = "label"
PathOrBuffer = Union[str, IO[str]]


def _path_name(source: PathOrBuffer) -> Optional[str]:
    return source if isinstance(source, str) else getattr(source, "name", None)


def _canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Relabel clusters 0, 1, ... in order of first occurrence"""
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    order = np.empty(first.shape[0], dtype=np.int64)
    order[np.argsort(first)] = np.arange(first.shape[0])
    return order[inverse.reshape(-1)]


class DatasetService:
    @staticmethod
    def _get_file_extension(filename: Optional[str]) -> str:
        """Get file extension from filename"""
        if filename is None:
            return '.csv'
        return os.path.splitext(filename)[1].lower()

    @staticmethod
    def _read_dataframe_from_file(source: PathOrBuffer, header: Optional[str] = "infer") -> pd.DataFrame:
        """Read every cell as text so malformed values can be located"""
        name = _path_name(source)
        ext = DatasetService._get_file_extension(name)
        try:
            if ext == '.json':
                return pd.read_json(source, dtype=False).astype(str)
            return pd.read_csv(source, header=header, dtype=str, keep_default_na=False, comment='#', skip_blank_lines=True)
        except FileNotFoundError:
            raise DataParseError("File not found", path=name)
        except pd.errors.EmptyDataError:
            raise DataParseError("File is empty", path=name)
        except pd.errors.ParserError as e:
            # pandas reports ragged rows as "Expected a fields in line b, saw c"
            match = re.search(r"line (\d+)", str(e))
            raise DataParseError(f"Ragged row: {e}", row=int(match.group(1)) if match else None, path=name)

    @staticmethod
    def _numeric_frame(frame: pd.DataFrame, path: Optional[str], first_row: int) -> pd.DataFrame:
        raw = frame.fillna("").apply(lambda col: col.str.strip())
        # to_numeric only locates bad cells; its fast parser can be 1 ulp off
        bad = raw.apply(lambda col: pd.to_numeric(col, errors="coerce")).isna() | (raw == "")
        if bad.to_numpy().any():
            row, col = np.argwhere(bad.to_numpy())[0]
            value = raw.iat[row, col]
            reason = "Missing value" if value == "" else f"Non-numeric value '{value}'"
            raise DataParseError(reason, row=int(row) + first_row, column=str(frame.columns[col]), path=path)
        return raw.astype(np.float64)

    @staticmethod
    def generate_gaussian_mixture(
        dim: int = 40,
        n_classes: int = 10,
        subspace_dim: int = 15,
        variance: float = 1.0,
        n: int = 2000,
        seed: SeedLike = 0,
        mean_scale: float = 1.0
    ) -> SampleSet:
        """
        Balanced isotropic Gaussian classes whose means lie in a random subspace_dim-dimensional subspace
        """
        if subspace_dim > dim:
            raise DomainError(f"subspace_dim = {subspace_dim} exceeds dim = {dim}")
        if dim < 1 or subspace_dim < 1 or n_classes < 1 or n < 1:
            raise DomainError("dim, subspace_dim, n_classes and n must be positive")
        if variance < 0:
            raise DomainError("variance must be nonnegative")
        rng = make_rng(seed)

        # 1. Orthonormal basis of the mean subspace
        basis, _ = np.linalg.qr(rng.standard_normal((dim, subspace_dim)))
        # 2. Class means inside it
        means = mean_scale * rng.standard_normal((n_classes, subspace_dim)) @ basis.T
        # 3. Balanced labels in random order
        labels = rng.permutation(np.arange(n) % n_classes)
        # 4. Shared isotropic noise
        features = means[labels] + np.sqrt(variance) * rng.standard_normal((n, dim))
        logger.debug("Generated %d points in R^%d from %d classes", n, dim, n_classes)
        return SampleSet.single(features, labels)

    @staticmethod
    def split_train_test(samples: SampleSet, n_train: int, seed: SeedLike = 0):
        """Random split of a single labelled block"""
        n = samples.sizes[0]
        if not 0 < n_train < n:
            raise DomainError(f"n_train must lie in (0, {n})")
        order = make_rng(seed).permutation(n)
        return samples.subset([np.sort(order[:n_train])]), samples.subset([np.sort(order[n_train:])])

    @staticmethod
    def dataset_frame(samples: SampleSet, k: int = 0) -> pd.DataFrame:
        features = samples.features(k)
        frame = pd.DataFrame(features, columns=[f"x{j}" for j in range(features.shape[1])])
        if samples.has_labels(k):
            frame[LABEL_COLUMN] = samples.labels_of(k)
        return frame

    @staticmethod
    def dataset_to_csv(samples: SampleSet, k: int = 0) -> str:
        return DatasetService.dataset_frame(samples, k).to_csv(index=False, float_format="%.17g", lineterminator="\n")

    @staticmethod
    def load_csv_dataset(paths: Union[PathOrBuffer, Sequence[PathOrBuffer]]) -> SampleSet:
        """
        One CSV per sample block: a header row, numeric feature columns and an optional integer 'label' column
        """
        if isinstance(paths, (str, io.IOBase)):
            paths = [paths]
        blocks: List[np.ndarray] = []
        labels: List[Optional[np.ndarray]] = []
        for source in paths:
            name = _path_name(source)
            frame = DatasetService._read_dataframe_from_file(source)
            if frame.shape[0] == 0:
                raise DataParseError("No observations", path=name)
            # header is line 1
            numeric = DatasetService._numeric_frame(frame, name, first_row=2)
            feature_columns = [c for c in numeric.columns if c != LABEL_COLUMN]
            if not feature_columns:
                raise DataParseError("No feature columns", row=1, path=name)
            block_labels = None
            if LABEL_COLUMN in numeric.columns:
                values = numeric[LABEL_COLUMN].to_numpy(dtype=float)
                fractional = np.flatnonzero(np.mod(values, 1) != 0)
                if fractional.size:
                    raise DataParseError("Labels must be integers", row=int(fractional[0]) + 2, column=LABEL_COLUMN, path=name)
                block_labels = values.astype(np.int64)
            blocks.append(numeric[feature_columns].to_numpy(dtype=float))
            labels.append(block_labels)
            logger.info("Loaded %d observations with %d features from %s", frame.shape[0], len(feature_columns), name)
        return SampleSet(blocks=tuple(blocks), labels=tuple(labels))

    @staticmethod
    def load_partitions_csv(source: PathOrBuffer, n: Optional[int] = None) -> NestedPartitions:
        """
        Row m (1-based, no header) holds the n labels of the m-cluster partition, each in [0, m)
        """
        name = _path_name(source)
        frame = DatasetService._read_dataframe_from_file(source, header=None)
        numeric = DatasetService._numeric_frame(frame, name, first_row=1)
        values = numeric.to_numpy(dtype=float)
        if n is not None and values.shape[1] != n:
            raise DataParseError(f"Partitions have {values.shape[1]} labels per row, the dataset has {n} observations", row=1, path=name)
        partitions = []
        for m, row in enumerate(values, start=1):
            bad = np.flatnonzero((np.mod(row, 1) != 0) | (row < 0) | (row >= m))
            if bad.size:
                raise DataParseError(f"Label {row[bad[0]]:g} is not an integer in [0, {m})", row=m, column=str(int(bad[0])), path=name)
            partitions.append(Partition(row.astype(np.int64), m))
        return NestedPartitions(tuple(partitions))

    @staticmethod
    def partitions_to_csv(partitions: NestedPartitions) -> str:
        return "".join(",".join(str(v) for v in part.labels.tolist()) + "\n" for part in partitions.partitions)

    @staticmethod
    def agglomerative_ward(samples: SampleSet, max_clusters: Optional[int] = None) -> NestedPartitions:
        """
        Nested partitions P_1, ..., P_max from Ward agglomeration; P_m merges two clusters of P_{m+1}
        """
        x = samples.features(0)
        n = x.shape[0]
        if n < 2:
            raise DomainError("Ward agglomeration needs at least two observations")
        max_clusters = n if max_clusters is None else min(int(max_clusters), n)
        if max_clusters < 1:
            raise DomainError("max_clusters must be at least 1")
        tree = linkage(x, method="ward")
        # cut_tree mislabels the all-singletons column when it is requested together with coarser cuts
        coarse = list(range(1, min(max_clusters, n - 1) + 1))
        cuts = cut_tree(tree, n_clusters=coarse)
        labels = [cuts[:, m - 1] for m in coarse]
        if max_clusters == n:
            labels.append(np.arange(n))
        partitions = tuple(Partition(_canonical_labels(cut), m) for m, cut in enumerate(labels, start=1))
        return NestedPartitions(partitions)

    @staticmethod
    def metric_model_to_csv(model: MetricModel) -> str:
        body = pd.DataFrame(model.matrix).to_csv(header=False, index=False, float_format="%.17g", lineterminator="\n")
        return f"# b={model.threshold!r}\n{body}"

    @staticmethod
    def metric_model_from_csv(text: str, path: Optional[str] = None) -> MetricModel:
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# b="):
            raise DataParseError("Checkpoint must start with a '# b=<threshold>' line", row=1, path=path)
        try:
            threshold = float(lines[0][len("# b="):])
        except ValueError:
            raise DataParseError("Malformed threshold", row=1, path=path)
        frame = DatasetService._read_dataframe_from_file(io.StringIO("\n".join(lines[1:])), header=None)
        matrix = DatasetService._numeric_frame(frame, path, first_row=2).to_numpy(dtype=float)
        return MetricModel(matrix, threshold)

    @staticmethod
    def trajectory_frame(result: SgdResult) -> pd.DataFrame:
        rows = []
        for step in result.trajectory:
            row = {"t": step.t, "gradient_norm": step.gradient_norm}
            row.update(step.risks)
            rows.append(row)
        return pd.DataFrame(rows)

    @staticmethod
    def load_model_specs_csv(source: PathOrBuffer) -> List[ModelSpec]:
        """Columns model_index, vc_dimension, kernel_bound, risk; one model per row"""
        name = _path_name(source)
        frame = DatasetService._read_dataframe_from_file(source)
        required = ["model_index", "vc_dimension", "kernel_bound", "risk"]
        missing = [c for c in required if c not in frame.columns]
        if missing:
            raise DataParseError(f"Missing columns {', '.join(missing)}", row=1, path=name)
        numeric = DatasetService._numeric_frame(frame[required], name, first_row=2)
        models = []
        for row, record in enumerate(numeric.itertuples(index=False), start=2):
            try:
                models.append(ModelSpec(
                    model_index=int(record.model_index),
                    vc_dimension=record.vc_dimension,
                    kernel_bound=record.kernel_bound,
                    risk=record.risk,
                ))
            except ValueError as e:
                raise DataParseError(f"Invalid model: {e}", row=row, path=name)
        return models
