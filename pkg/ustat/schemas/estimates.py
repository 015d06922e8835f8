from dataclasses import dataclass
from enum import Enum
from typing import List, Literal, Optional, Tuple, Union
from pydantic import BaseModel, ConfigDict, Field
import numpy as np

from ustat.schemas.data import IndexSpace, IndexTuple


class SamplingScheme(str, Enum):
    WITH_REPLACEMENT = "with_replacement"
    WITHOUT_REPLACEMENT = "without_replacement"
    BERNOULLI = "bernoulli"


@dataclass(frozen=True, eq=False)
class TermSet:
    """Tuples picked from the index space by one sampling design"""

    scheme: SamplingScheme
    space: IndexSpace
    index_blocks: Tuple[np.ndarray, ...]  # block k: (|terms|, d_k), row i is term i
    requested_B: Union[int, float]
    inclusion_probability: Optional[float] = None  # pi = B / #Lambda; None for with-replacement
    seed: Optional[int] = None

    def __post_init__(self):
        blocks = []
        for k, block in enumerate(self.index_blocks):
            arr = np.asarray(block, dtype=np.int64).reshape(-1, self.space.degrees[k])
            arr.setflags(write=False)
            blocks.append(arr)
        object.__setattr__(self, "index_blocks", tuple(blocks))

    def __len__(self) -> int:
        return int(self.index_blocks[0].shape[0]) if self.index_blocks else 0

    @property
    def size(self) -> int:
        return len(self)

    @property
    def terms(self) -> List[IndexTuple]:
        lists = [b.tolist() for b in self.index_blocks]
        return [tuple(tuple(lst[i]) for lst in lists) for i in range(len(self))]

    def chunk(self, start: int, stop: int) -> List[np.ndarray]:
        return [b[start:stop] for b in self.index_blocks]


class EstimateResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: float
    terms_used: int
    scheme: str  # "complete", a SamplingScheme value, or "hoeffding"
    estimator: Literal["complete", "incomplete", "horvitz_thompson"]
    space: IndexSpace
    seed: Optional[int] = None


class EstimatorConfig(BaseModel):
    """How a risk is estimated: the complete statistic or a sampled one"""
    kind: Literal["complete", "incomplete"] = "complete"
    scheme: SamplingScheme = SamplingScheme.WITH_REPLACEMENT
    B: Optional[float] = Field(default=None, gt=0)
    seed: Optional[int] = None


class EstimateRequest(BaseModel):
    """Inline samples (one list of values per block) and a named kernel"""
    samples: List[List[float]]
    labels: Optional[List[Optional[List[int]]]] = None
    kernel: str
    estimator: Literal["complete", "incomplete", "ht"] = "complete"
    scheme: SamplingScheme = SamplingScheme.WITH_REPLACEMENT
    B: Optional[float] = Field(default=None, gt=0)
    seed: Optional[int] = None
