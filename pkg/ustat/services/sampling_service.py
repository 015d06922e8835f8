from typing import List, Optional, Union
import io
import logging
import numpy as np

from ustat.config import settings
from ustat.schemas.data import IndexSpace
from ustat.schemas.estimates import SamplingScheme, TermSet
from ustat.services.index_space_service import INT64_MAX, IndexSpaceService
from ustat.utils.errors import DataParseError, DomainError, EmptyTermSetError
from ustat.utils.rng import SeedLike, make_rng, seed_of, uniform_big_int

logger = logging.getLogger("ustat-sampling")


class SamplingService:
    @staticmethod
    def _blocks_from_ranks(space: IndexSpace, ranks: Union[np.ndarray, List[int]]) -> List[np.ndarray]:
        if space.cardinality <= INT64_MAX:
            return IndexSpaceService.unrank_many(space, np.asarray(ranks, dtype=np.int64))
        tuples = [IndexSpaceService.unrank_tuple(space, r) for r in ranks]
        return IndexSpaceService.tuples_to_blocks(space, tuples)

    @staticmethod
    def _rejection_ranks(cardinality: int, count: int, rng: np.random.Generator) -> list:
        """``count`` distinct uniform ranks, kept in draw order"""
        seen = {}
        if cardinality <= INT64_MAX:
            while len(seen) < count:
                need = count - len(seen)
                for r in rng.integers(0, cardinality, size=need + need // 8 + 8).tolist():
                    if r not in seen:
                        seen[r] = None
                        if len(seen) == count:
                            break
        else:
            while len(seen) < count:
                seen.setdefault(uniform_big_int(cardinality, rng), None)
        return list(seen)

    @staticmethod
    def _distinct_ranks(cardinality: int, count: int, rng: np.random.Generator) -> Union[np.ndarray, list]:
        if cardinality <= settings.MATERIALIZE_CAP:
            return rng.permutation(cardinality)[:count]
        if 2 * count <= cardinality:
            return SamplingService._rejection_ranks(cardinality, count, rng)
        # complement: draw the excluded ranks, keep the rest in random order
        excluded = set(SamplingService._rejection_ranks(cardinality, cardinality - count, rng))
        kept = [r for r in range(cardinality) if r not in excluded]
        order = rng.permutation(len(kept))
        return [kept[i] for i in order]

    @staticmethod
    def sample_with_replacement(space: IndexSpace, B: int, rng: SeedLike = None) -> TermSet:
        """
        B independent uniform draws from the index space; repeated tuples are kept
        """
        B = int(B)
        if B < 1:
            raise EmptyTermSetError("Sampling with replacement needs B >= 1 terms")
        gen = make_rng(rng)
        if space.cardinality <= INT64_MAX:
            ranks = gen.integers(0, space.cardinality, size=B)
        else:
            ranks = [uniform_big_int(space.cardinality, gen) for _ in range(B)]
        logger.debug("Drew %d tuples with replacement from a space of %d", B, space.cardinality)
        return TermSet(
            scheme=SamplingScheme.WITH_REPLACEMENT,
            space=space,
            index_blocks=tuple(SamplingService._blocks_from_ranks(space, ranks)),
            requested_B=B,
            inclusion_probability=None,
            seed=seed_of(rng),
        )

    @staticmethod
    def sample_without_replacement(space: IndexSpace, B: int, rng: SeedLike = None) -> TermSet:
        """
        A uniformly random B-subset of the index space, each tuple included with pi = B / #Lambda
        """
        B = int(B)
        if B < 1:
            raise EmptyTermSetError("Sampling without replacement needs B >= 1 terms")
        if B > space.cardinality:
            raise DomainError(f"Cannot draw B = {B} distinct tuples from a space of {space.cardinality}")
        gen = make_rng(rng)
        ranks = SamplingService._distinct_ranks(space.cardinality, B, gen)
        return TermSet(
            scheme=SamplingScheme.WITHOUT_REPLACEMENT,
            space=space,
            index_blocks=tuple(SamplingService._blocks_from_ranks(space, ranks)),
            requested_B=B,
            inclusion_probability=B / space.cardinality,
            seed=seed_of(rng),
        )

    @staticmethod
    def sample_bernoulli(space: IndexSpace, expected_B: float, rng: SeedLike = None) -> TermSet:
        """
        Poisson sampling with equal inclusion probability pi = expected_B / #Lambda
        """
        expected_B = float(expected_B)
        if expected_B <= 0:
            raise DomainError("Bernoulli sampling needs a positive expected number of terms")
        pi = expected_B / space.cardinality
        if pi > 1:
            raise DomainError(
                f"Inclusion probability {pi:.6g} exceeds 1 (expected_B = {expected_B} > #Lambda = {space.cardinality})"
            )
        gen = make_rng(rng)
        if space.cardinality <= settings.MATERIALIZE_CAP:
            ranks = np.flatnonzero(gen.random(space.cardinality) < pi)
        else:
            if space.cardinality <= INT64_MAX:
                size = int(gen.binomial(space.cardinality, pi))
            else:
                # Binomial(#Lambda, pi) with pi below 2**-63 * B: Poisson(B) is exact to double precision
                size = int(gen.poisson(expected_B))
            size = min(size, space.cardinality)
            drawn = SamplingService._distinct_ranks(space.cardinality, size, gen) if size else []
            ranks = sorted(int(r) for r in drawn)
        if len(ranks) == 0:
            logger.warning("Bernoulli draw with pi=%.3g produced no terms", pi)
        return TermSet(
            scheme=SamplingScheme.BERNOULLI,
            space=space,
            index_blocks=tuple(SamplingService._blocks_from_ranks(space, ranks)),
            requested_B=expected_B,
            inclusion_probability=pi,
            seed=seed_of(rng),
        )

    @staticmethod
    def sample(space: IndexSpace, scheme: SamplingScheme, B: float, rng: SeedLike = None) -> TermSet:
        scheme = SamplingScheme(scheme)
        if scheme == SamplingScheme.WITH_REPLACEMENT:
            return SamplingService.sample_with_replacement(space, int(B), rng)
        if scheme == SamplingScheme.WITHOUT_REPLACEMENT:
            return SamplingService.sample_without_replacement(space, int(B), rng)
        return SamplingService.sample_bernoulli(space, B, rng)

    @staticmethod
    def termset_to_csv(termset: TermSet) -> str:
        """Metadata header + one tuple per row; blocks joined by ';', indices by ','"""
        space = termset.space
        lines = [
            "scheme,seed,B,inclusion_probability,sizes,degrees",
            ",".join([
                termset.scheme.value,
                "" if termset.seed is None else str(termset.seed),
                repr(termset.requested_B),
                "" if termset.inclusion_probability is None else repr(termset.inclusion_probability),
                ";".join(str(n) for n in space.sizes),
                ";".join(str(d) for d in space.degrees),
            ]),
        ]
        for term in termset.terms:
            lines.append(";".join(",".join(str(i) for i in block) for block in term))
        return "\n".join(lines) + "\n"

    @staticmethod
    def termset_from_csv(text: Union[str, io.TextIOBase], path: Optional[str] = None) -> TermSet:
        if not isinstance(text, str):
            text = text.read()
        lines = [line for line in text.splitlines() if line.strip()]
        if len(lines) < 2 or not lines[0].startswith("scheme,"):
            raise DataParseError("Missing term-set metadata header", row=1, path=path)
        meta = lines[1].split(",")
        if len(meta) != 6:
            raise DataParseError("Metadata line must have 6 fields", row=2, path=path)
        try:
            scheme = SamplingScheme(meta[0])
            seed = int(meta[1]) if meta[1] else None
            requested_B: Union[int, float] = float(meta[2])
            if scheme != SamplingScheme.BERNOULLI:
                requested_B = int(requested_B)
            pi = float(meta[3]) if meta[3] else None
            sizes = [int(v) for v in meta[4].split(";")]
            degrees = [int(v) for v in meta[5].split(";")]
        except ValueError as e:
            raise DataParseError(f"Malformed metadata: {e}", row=2, path=path)
        space = IndexSpaceService.build_index_space(sizes, degrees)
        tuples = []
        for row, line in enumerate(lines[2:], start=3):
            blocks = line.split(";")
            if len(blocks) != space.K:
                raise DataParseError(f"Expected {space.K} blocks", row=row, path=path)
            try:
                term = tuple(tuple(int(v) for v in block.split(",")) for block in blocks)
            except ValueError:
                raise DataParseError("Non-integer index", row=row, path=path)
            try:
                IndexSpaceService.rank_tuple(space, term)
            except DomainError as e:
                raise DataParseError(str(e), row=row, path=path)
            tuples.append(term)
        return TermSet(
            scheme=scheme,
            space=space,
            index_blocks=tuple(IndexSpaceService.tuples_to_blocks(space, tuples)),
            requested_B=requested_B,
            inclusion_probability=pi,
            seed=seed,
        )
