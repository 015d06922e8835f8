from abc import ABC, abstractmethod
from typing import Callable, List, Optional, Sequence, Tuple
import threading
import numpy as np

from ustat.schemas.data import IndexSpace, IndexTuple, SampleSet
from ustat.utils.errors import InvalidDegreesError


class Kernel(ABC):
    """A function H of index tuples, symmetric within each block of arguments.

    Symmetry is the caller's responsibility; it is not checked at runtime.
    """

    degrees: Tuple[int, ...] = (2,)
    bound: Optional[float] = None  # declared M_H >= sup |H|

    @abstractmethod
    def evaluate_batch(self, samples: SampleSet, index_blocks: Sequence[np.ndarray]) -> np.ndarray:
        """Kernel values for B tuples; ``index_blocks[k]`` is an integer array of shape (B, d_k)"""
        pass

    def evaluate(self, samples: SampleSet, index_tuple: IndexTuple) -> float:
        blocks = [np.asarray(block, dtype=np.int64).reshape(1, -1) for block in index_tuple]
        return float(self.evaluate_batch(samples, blocks)[0])

    def check_compatible(self, space: IndexSpace) -> None:
        if tuple(space.degrees) != tuple(self.degrees):
            raise InvalidDegreesError(
                f"Kernel expects degrees {tuple(self.degrees)} but the index space has {tuple(space.degrees)}"
            )

    @staticmethod
    def gather(samples: SampleSet, index_blocks: Sequence[np.ndarray]) -> List[np.ndarray]:
        """Observations of each block arranged as (B, d_k, p_k)"""
        return [samples.features(k)[np.asarray(idx, dtype=np.int64)] for k, idx in enumerate(index_blocks)]


class FunctionKernel(Kernel):
    """Wraps ``func(gathered)`` where gathered[k] has shape (B, d_k, p_k)"""

    def __init__(self, func: Callable[[List[np.ndarray]], np.ndarray], degrees: Sequence[int], bound: Optional[float] = None):
        self.func = func
        self.degrees = tuple(int(d) for d in degrees)
        self.bound = bound

    def evaluate_batch(self, samples, index_blocks):
        return np.asarray(self.func(self.gather(samples, index_blocks)), dtype=float).reshape(-1)


class ConstantKernel(Kernel):
    def __init__(self, value: float, degrees: Sequence[int] = (2,)):
        self.value = float(value)
        self.degrees = tuple(int(d) for d in degrees)
        self.bound = abs(self.value)

    def evaluate_batch(self, samples, index_blocks):
        return np.full(np.asarray(index_blocks[0]).shape[0], self.value)


class AbsoluteDifferenceKernel(Kernel):
    """H(a, b) = |a - b| on the first feature of a single sample"""

    degrees = (2,)

    def evaluate_batch(self, samples, index_blocks):
        x = samples.features(0)[:, 0]
        idx = np.asarray(index_blocks[0], dtype=np.int64)
        return np.abs(x[idx[:, 0]] - x[idx[:, 1]])


class CountingKernel(Kernel):
    """Counts the terms evaluated by the wrapped kernel"""

    def __init__(self, inner: Kernel):
        self.inner = inner
        self.degrees = inner.degrees
        self.bound = inner.bound
        self.terms = 0
        self.calls = 0
        self._lock = threading.Lock()

    def evaluate_batch(self, samples, index_blocks):
        values = self.inner.evaluate_batch(samples, index_blocks)
        with self._lock:
            self.terms += int(values.shape[0])
            self.calls += 1
        return values

    def reset(self) -> None:
        with self._lock:
            self.terms = 0
            self.calls = 0


class ProductSumKernel(Kernel):
    """H(a, b) = ab + a + b on the first feature; sigma_1^2 = sigma_2^2 = 1 under N(0, 1) data"""

    degrees = (2,)

    def evaluate_batch(self, samples, index_blocks):
        x = samples.features(0)[:, 0]
        idx = np.asarray(index_blocks[0], dtype=np.int64)
        a, b = x[idx[:, 0]], x[idx[:, 1]]
        return a * b + a + b
