"""Compensated summation of kernel terms.

``math.fsum`` returns the correctly rounded sum of its inputs. Chunk boundaries
depend only on the chunk size, never on the worker count, so sequential and
joblib reductions produce the same double.
"""
from typing import Callable, Iterable, List, Sequence, TypeVar
import math
import numpy as np
from joblib import Parallel, delayed

T = TypeVar("T")


def compensated_sum(values: Iterable[float]) -> float:
    if isinstance(values, np.ndarray):
        return math.fsum(values.ravel().tolist())
    return math.fsum(values)


def chunked_sum(
    chunks: Sequence[T],
    evaluate: Callable[[T], np.ndarray],
    n_jobs: int = 1
) -> float:
    """Sum evaluate(chunk) over all chunks, optionally across joblib workers"""
    if n_jobs == 1 or len(chunks) <= 1:
        partials: List[float] = [compensated_sum(evaluate(chunk)) for chunk in chunks]
    else:
        partials = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_partial)(evaluate, chunk) for chunk in chunks
        )
    return math.fsum(partials)


def _partial(evaluate: Callable[[T], np.ndarray], chunk: T) -> float:
    return compensated_sum(evaluate(chunk))
