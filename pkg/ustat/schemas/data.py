from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple
from pydantic import BaseModel, ConfigDict
import numpy as np

from ustat.utils.errors import DomainError, EmptyProblemError

# I = (I_1, ..., I_K); I_k strictly increasing, 0-based indices into block k
IndexTuple = Tuple[Tuple[int, ...], ...]


@dataclass(frozen=True, eq=False)
class SampleSet:
    """K independent samples; block k is an (n_k, p_k) feature matrix with optional integer labels"""

    blocks: Tuple[np.ndarray, ...]
    labels: Tuple[Optional[np.ndarray], ...] = field(default=())

    def __post_init__(self):
        if len(self.blocks) == 0:
            raise EmptyProblemError("A sample set needs at least one block (K >= 1)")
        blocks = []
        for k, block in enumerate(self.blocks):
            arr = np.asarray(block, dtype=float)
            if arr.ndim == 1:
                arr = arr.reshape(-1, 1)
            if arr.ndim != 2:
                raise DomainError(f"Block {k} must be a 2-D array of observations, got {arr.ndim} dimensions")
            if arr.shape[0] < 1:
                raise DomainError(f"Block {k} is empty (n_k must be >= 1)")
            arr = arr.copy()
            arr.setflags(write=False)
            blocks.append(arr)
        labels = list(self.labels) if self.labels else [None] * len(blocks)
        if len(labels) != len(blocks):
            raise DomainError("labels must have one entry (or None) per block")
        for k, lab in enumerate(labels):
            if lab is None:
                continue
            lab_arr = np.asarray(lab)
            if lab_arr.shape != (blocks[k].shape[0],):
                raise DomainError(f"Block {k} has {blocks[k].shape[0]} observations but {lab_arr.size} labels")
            if lab_arr.size and not np.all(np.equal(np.mod(lab_arr, 1), 0)):
                raise DomainError(f"Labels of block {k} must be integers")
            lab_arr = lab_arr.astype(np.int64)
            lab_arr.setflags(write=False)
            labels[k] = lab_arr
        object.__setattr__(self, "blocks", tuple(blocks))
        object.__setattr__(self, "labels", tuple(labels))

    @classmethod
    def single(cls, features, labels=None) -> "SampleSet":
        return cls(blocks=(np.asarray(features, dtype=float),), labels=(labels,))

    @property
    def K(self) -> int:
        return len(self.blocks)

    @property
    def sizes(self) -> Tuple[int, ...]:
        return tuple(int(b.shape[0]) for b in self.blocks)

    @property
    def n(self) -> int:
        return sum(self.sizes)

    def dim(self, k: int = 0) -> int:
        return int(self.blocks[k].shape[1])

    def features(self, k: int = 0) -> np.ndarray:
        return self.blocks[k]

    def labels_of(self, k: int = 0) -> np.ndarray:
        lab = self.labels[k]
        if lab is None:
            raise DomainError(f"Block {k} carries no labels but the kernel needs them")
        return lab

    def has_labels(self, k: int = 0) -> bool:
        return self.labels[k] is not None

    def subset(self, indices: Sequence[np.ndarray]) -> "SampleSet":
        """Sub-sample set keeping rows ``indices[k]`` of block k, in that order"""
        if len(indices) != self.K:
            raise DomainError("subset needs one index array per block")
        blocks = tuple(self.blocks[k][np.asarray(idx, dtype=np.int64)] for k, idx in enumerate(indices))
        labels = tuple(
            None if self.labels[k] is None else self.labels[k][np.asarray(idx, dtype=np.int64)]
            for k, idx in enumerate(indices)
        )
        return SampleSet(blocks=blocks, labels=labels)


class IndexSpace(BaseModel):
    """The set Lambda of index tuples for K samples of sizes n_k and degrees d_k"""
    model_config = ConfigDict(frozen=True)

    sizes: Tuple[int, ...]
    degrees: Tuple[int, ...]
    cardinality: int
    log_cardinality: float
    block_cardinalities: Tuple[int, ...]

    @property
    def K(self) -> int:
        return len(self.sizes)

    @property
    def N(self) -> int:
        return min(n // d for n, d in zip(self.sizes, self.degrees))

    @property
    def log1p_cardinality(self) -> float:
        """ln(1 + #Lambda) from the log-space cardinality (never through the big integer)"""
        lc = self.log_cardinality
        return lc + float(np.log1p(np.exp(-lc)))

    @property
    def pooled_size(self) -> int:
        return sum(self.sizes)

    def strides(self) -> List[int]:
        """Mixed-radix place values: block 1 is the most significant digit"""
        strides = [1] * self.K
        for k in range(self.K - 2, -1, -1):
            strides[k] = strides[k + 1] * self.block_cardinalities[k + 1]
        return strides
