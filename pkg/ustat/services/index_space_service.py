from typing import Iterator, List, Optional, Sequence, Tuple
from functools import lru_cache
import itertools
import logging
import math
import numpy as np
from scipy.special import betaln

from ustat.config import settings
from ustat.schemas.data import IndexSpace, IndexTuple
from ustat.utils.errors import (
    DomainError,
    EmptyProblemError,
    EnumerationCapError,
    InvalidDegreesError,
    RankOutOfRangeError,
)

logger = logging.getLogger("ustat-core")

INT64_MAX = int(np.iinfo(np.int64).max)


@lru_cache(maxsize=32)
def _block_table(n: int, d: int) -> np.ndarray:
    """All d-subsets of range(n) in lexicographic order, one per row"""
    count = math.comb(n, d)
    if d == 1:
        table = np.arange(n, dtype=np.int64).reshape(-1, 1)
    elif d == 2:
        rows, cols = np.triu_indices(n, k=1)
        table = np.column_stack([rows, cols]).astype(np.int64)
    else:
        flat = np.fromiter(
            itertools.chain.from_iterable(itertools.combinations(range(n), d)),
            dtype=np.int64,
            count=count * d,
        )
        table = flat.reshape(count, d)
    table.setflags(write=False)
    return table


def _colex_rank(subset: Sequence[int]) -> int:
    return sum(math.comb(c, j + 1) for j, c in enumerate(subset))


def _colex_unrank(r: int, n: int, d: int) -> List[int]:
    subset = [0] * d
    k = d
    upper = n - 1
    while k > 0:
        # largest c with comb(c, k) <= r
        lower = k - 1
        while lower < upper:
            mid = (lower + upper + 1) // 2
            if r < math.comb(mid, k):
                upper = mid - 1
            else:
                lower = mid
        r -= math.comb(upper, k)
        k -= 1
        subset[k] = upper
        upper -= 1
    return subset


def lex_rank_subset(subset: Sequence[int], n: int) -> int:
    d = len(subset)
    return math.comb(n, d) - 1 - _colex_rank([n - 1 - c for c in reversed(subset)])


def lex_unrank_subset(r: int, n: int, d: int) -> Tuple[int, ...]:
    colex = _colex_unrank(math.comb(n, d) - 1 - r, n, d)
    return tuple(n - 1 - c for c in reversed(colex))


class IndexSpaceService:
    @staticmethod
    def build_index_space(sizes: Sequence[int], degrees: Sequence[int]) -> IndexSpace:
        """
        Build the index space of K samples with sizes n_k and kernel degrees d_k
        """
        sizes = tuple(int(n) for n in sizes)
        degrees = tuple(int(d) for d in degrees)
        if len(sizes) == 0 or len(degrees) == 0:
            raise EmptyProblemError("At least one sample is required (K >= 1)")
        if len(sizes) != len(degrees):
            raise InvalidDegreesError(f"Got {len(sizes)} sample sizes but {len(degrees)} degrees")
        for k, (n, d) in enumerate(zip(sizes, degrees)):
            if d < 1:
                raise InvalidDegreesError(f"Degree d_{k} = {d} must be at least 1")
            if d > n:
                raise InvalidDegreesError(f"Degree d_{k} = {d} exceeds the sample size n_{k} = {n}")

        block_cardinalities = tuple(math.comb(n, d) for n, d in zip(sizes, degrees))
        cardinality = math.prod(block_cardinalities)
        # ln C(n, d) = -ln(n + 1) - ln B(n - d + 1, d + 1)
        log_cardinality = float(sum(
            -math.log(n + 1) - float(betaln(n - d + 1, d + 1)) for n, d in zip(sizes, degrees)
        ))
        return IndexSpace(
            sizes=sizes,
            degrees=degrees,
            cardinality=cardinality,
            log_cardinality=log_cardinality,
            block_cardinalities=block_cardinalities,
        )

    @staticmethod
    def check_enumerable(space: IndexSpace, cap: Optional[int] = None) -> None:
        cap = settings.ENUMERATION_CAP if cap is None else cap
        if space.cardinality > cap:
            raise EnumerationCapError(
                f"The index space has {space.cardinality} tuples, above the enumeration cap of {cap}. "
                "Use an incomplete estimator (sampling B tuples) or raise the cap explicitly."
            )

    @staticmethod
    def enumerate_tuples(space: IndexSpace, cap: Optional[int] = None) -> Iterator[IndexTuple]:
        """Every tuple of the space once, in lexicographic order of (I_1, ..., I_K)"""
        IndexSpaceService.check_enumerable(space, cap)
        per_block = [itertools.combinations(range(n), d) for n, d in zip(space.sizes, space.degrees)]
        return itertools.product(*per_block)

    @staticmethod
    def rank_tuple(space: IndexSpace, index_tuple: IndexTuple) -> int:
        if len(index_tuple) != space.K:
            raise DomainError(f"Tuple has {len(index_tuple)} blocks, the space has {space.K}")
        rank = 0
        for k, block in enumerate(index_tuple):
            n, d = space.sizes[k], space.degrees[k]
            block = tuple(int(i) for i in block)
            if len(block) != d or any(a >= b for a, b in zip(block, block[1:])) or block[0] < 0 or block[-1] >= n:
                raise DomainError(f"Block {k} of the tuple is not a strictly increasing {d}-subset of [0, {n})")
            rank = rank * space.block_cardinalities[k] + lex_rank_subset(block, n)
        return rank

    @staticmethod
    def unrank_tuple(space: IndexSpace, rank: int) -> IndexTuple:
        rank = int(rank)
        if rank < 0 or rank >= space.cardinality:
            raise RankOutOfRangeError(f"Rank {rank} is outside [0, {space.cardinality})")
        blocks: List[Tuple[int, ...]] = []
        for k in range(space.K - 1, -1, -1):
            rank, block_rank = divmod(rank, space.block_cardinalities[k])
            blocks.append(lex_unrank_subset(block_rank, space.sizes[k], space.degrees[k]))
        return tuple(reversed(blocks))

    @staticmethod
    def unrank_many(space: IndexSpace, ranks: np.ndarray) -> List[np.ndarray]:
        """Vectorised unranking of int64 ranks; returns one (B, d_k) index array per block"""
        if space.cardinality > INT64_MAX:
            raise DomainError("Vectorised unranking needs #Lambda to fit in 64 bits; use unrank_tuple")
        ranks = np.asarray(ranks, dtype=np.int64).reshape(-1)
        if ranks.size and (ranks.min() < 0 or ranks.max() >= space.cardinality):
            raise RankOutOfRangeError(f"Ranks must lie in [0, {space.cardinality})")
        strides = space.strides()
        index_blocks: List[np.ndarray] = []
        for k in range(space.K):
            block_ranks = (ranks // strides[k]) % space.block_cardinalities[k]
            n, d = space.sizes[k], space.degrees[k]
            if space.block_cardinalities[k] <= settings.TABLE_CAP:
                index_blocks.append(_block_table(n, d)[block_ranks])
            else:
                logger.warning("Block %d has %d subsets; unranking element-wise", k, space.block_cardinalities[k])
                rows = [lex_unrank_subset(int(r), n, d) for r in block_ranks]
                index_blocks.append(np.asarray(rows, dtype=np.int64).reshape(-1, d))
        return index_blocks

    @staticmethod
    def tuples_to_blocks(space: IndexSpace, tuples: Sequence[IndexTuple]) -> List[np.ndarray]:
        return [
            np.asarray([t[k] for t in tuples], dtype=np.int64).reshape(len(tuples), space.degrees[k])
            for k in range(space.K)
        ]

    @staticmethod
    def blocks_to_tuples(index_blocks: Sequence[np.ndarray]) -> List[IndexTuple]:
        if len(index_blocks) == 0:
            return []
        lists = [np.asarray(b).tolist() for b in index_blocks]
        return [tuple(tuple(lst[i]) for lst in lists) for i in range(len(lists[0]))]

    @staticmethod
    def rank_chunks(space: IndexSpace, chunk_size: Optional[int] = None, cap: Optional[int] = None) -> List[Tuple[int, int]]:
        """Contiguous [start, stop) rank ranges covering the whole (enumerable) space"""
        IndexSpaceService.check_enumerable(space, cap)
        chunk_size = chunk_size or settings.CHUNK_SIZE
        return [(start, min(start + chunk_size, space.cardinality))
                for start in range(0, space.cardinality, chunk_size)]
