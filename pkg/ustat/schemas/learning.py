from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple
from pydantic import BaseModel, ConfigDict, Field, model_validator
import numpy as np

from ustat.kernels import Kernel
from ustat.schemas.data import SampleSet
from ustat.utils.errors import DomainError

# relative to the largest eigenvalue; absorbs rounding from projection
PSD_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class Partition:
    """Cluster id in [0, n_clusters) for every observation; empty ids are allowed"""

    labels: np.ndarray
    n_clusters: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.n_clusters < 1:
            raise DomainError("A partition needs at least one cluster id")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_clusters):
            raise DomainError(f"Partition labels must lie in [0, {self.n_clusters})")
        labels = labels.copy()
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def refines(self, coarser: "Partition") -> bool:
        """True when every cluster of self sits inside one cluster of ``coarser``"""
        if len(coarser) != len(self):
            return False
        mapping = {}
        for fine, coarse in zip(self.labels.tolist(), coarser.labels.tolist()):
            if mapping.setdefault(fine, coarse) != coarse:
                return False
        return True


@dataclass(frozen=True)
class NestedPartitions:
    """P_1, ..., P_max where P_m has m cluster ids"""

    partitions: Tuple[Partition, ...]

    def __post_init__(self):
        if len(self.partitions) == 0:
            raise DomainError("Need at least one partition")
        n = len(self.partitions[0])
        for m, part in enumerate(self.partitions, start=1):
            if len(part) != n:
                raise DomainError(f"Partition {m} has {len(part)} labels, expected {n}")
            if part.n_clusters != m:
                raise DomainError(f"Partition {m} must have {m} cluster ids, got {part.n_clusters}")

    def __len__(self) -> int:
        return len(self.partitions)

    def get(self, m: int) -> Partition:
        """The m-cluster partition (1-based)"""
        if m < 1 or m > len(self.partitions):
            raise DomainError(f"No partition with m = {m} (have 1..{len(self.partitions)})")
        return self.partitions[m - 1]

    @property
    def n(self) -> int:
        return len(self.partitions[0])


@dataclass(frozen=True, eq=False)
class MetricModel:
    """Mahalanobis model D_M(x, x') = (x - x')^T M (x - x') with threshold b"""

    matrix: np.ndarray
    threshold: float = 2.0

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise DomainError(f"Metric matrix must be square, got shape {mat.shape}")
        if self.threshold < 0:
            raise DomainError("Threshold b must be nonnegative")
        mat = (mat + mat.T) / 2.0
        if mat.size:
            eigenvalues = np.linalg.eigvalsh(mat)
            if eigenvalues[0] < -PSD_TOLERANCE * max(1.0, abs(eigenvalues[-1])):
                raise DomainError(f"Metric matrix must be positive semidefinite, smallest eigenvalue is {eigenvalues[0]:.3g}")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "threshold", float(self.threshold))

    @classmethod
    def identity(cls, dim: int, threshold: float = 2.0) -> "MetricModel":
        return cls(np.eye(dim), threshold)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[0])

    def distances(self, diffs: np.ndarray) -> np.ndarray:
        """D_M for each row of an (B, p) array of differences"""
        return np.einsum("bi,ij,bj->b", diffs, self.matrix, diffs)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])


@dataclass(frozen=True)
class RankingRule:
    """Antisymmetric decision r(x, x') in {-1, +1} (0 on exact ties), vectorised over pairs"""

    decide: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str = "rule"

    @classmethod
    def from_score(cls, score: Callable[[np.ndarray], np.ndarray], name: str = "score") -> "RankingRule":
        """r(x, x') = sign(s(x) - s(x'))"""
        return cls(lambda a, b: np.sign(score(a) - score(b)), name)

    def __call__(self, x: np.ndarray, x_prime: np.ndarray) -> np.ndarray:
        return np.asarray(self.decide(np.atleast_2d(x), np.atleast_2d(x_prime)), dtype=float).reshape(-1)


class GradientMode(str, Enum):
    INCOMPLETE = "incomplete"
    COMPLETE_SUBSAMPLE = "complete_subsample"
    FULL = "full"  # deterministic complete gradient


class ProjectionPolicy(str, Enum):
    EVERY_STEP = "every_step"
    FINAL_ONLY = "final_only"


class SgdConfig(BaseModel):
    """Step count, learning-rate schedule eta_t = 1 / (eta0 t), gradient estimate and projection policy"""
    model_config = ConfigDict(frozen=True)

    steps: int = Field(ge=0)
    eta0: float = Field(gt=0)
    gradient_mode: GradientMode = GradientMode.INCOMPLETE
    B: Optional[int] = Field(default=None, ge=1)
    subsample_sizes: Optional[List[int]] = None
    projection: ProjectionPolicy = ProjectionPolicy.FINAL_ONLY
    seed: int = 0
    record_every: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _mode_parameters(self):
        if self.gradient_mode == GradientMode.INCOMPLETE:
            if self.B is None:
                raise ValueError("Incomplete gradients need a budget B")
            if self.subsample_sizes is not None:
                raise ValueError("subsample_sizes only applies to complete_subsample gradients")
        elif self.gradient_mode == GradientMode.COMPLETE_SUBSAMPLE:
            if not self.subsample_sizes:
                raise ValueError("Complete-subsample gradients need subsample_sizes")
            if self.B is not None:
                raise ValueError("A budget B does not apply to complete_subsample gradients")
        return self

    def learning_rate(self, t: int) -> float:
        return 1.0 / (self.eta0 * t)


@dataclass(frozen=True, eq=False)
class SgdStep:
    t: int
    theta: np.ndarray
    gradient_norm: float
    risks: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class SgdResult:
    theta: np.ndarray
    trajectory: List[SgdStep]
    terms_per_step: int


@dataclass
class Objective:
    """A parametrised pairwise risk: theta -> kernel, and the summed kernel gradient over a batch of tuples"""

    degrees: Tuple[int, ...]
    kernel: Callable[[np.ndarray], Kernel]
    gradient_sum: Callable[[np.ndarray, SampleSet, Sequence[np.ndarray]], np.ndarray]
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None
