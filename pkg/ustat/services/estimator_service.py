from typing import List, Optional, Sequence
import logging
import numpy as np

from ustat.config import settings
from ustat.kernels import Kernel
from ustat.schemas.data import IndexSpace, SampleSet
from ustat.schemas.estimates import EstimateResult, SamplingScheme, TermSet
from ustat.services.index_space_service import IndexSpaceService
from ustat.utils.errors import (
    DomainError,
    EmptyTermSetError,
    PermutationError,
    SchemeMismatchError,
)
from ustat.utils.summation import chunked_sum, compensated_sum

logger = logging.getLogger("ustat-estimators")


class EstimatorService:
    @staticmethod
    def _resolve_space(kernel: Kernel, samples: SampleSet, space: Optional[IndexSpace]) -> IndexSpace:
        if space is None:
            space = IndexSpaceService.build_index_space(samples.sizes, kernel.degrees)
        if tuple(space.sizes) != tuple(samples.sizes):
            raise DomainError(f"Index space sizes {space.sizes} do not match the samples {samples.sizes}")
        kernel.check_compatible(space)
        return space

    @staticmethod
    def _termset_sum(kernel: Kernel, samples: SampleSet, termset: TermSet, weights: Optional[np.ndarray] = None) -> float:
        chunk_size = settings.CHUNK_SIZE
        bounds = [(a, min(a + chunk_size, len(termset))) for a in range(0, len(termset), chunk_size)]

        def evaluate(chunk):
            a, b = chunk
            values = kernel.evaluate_batch(samples, termset.chunk(a, b))
            return values if weights is None else values / weights[a:b]

        return chunked_sum(bounds, evaluate, n_jobs=settings.N_JOBS)

    @staticmethod
    def complete_u(
        kernel: Kernel,
        samples: SampleSet,
        space: Optional[IndexSpace] = None,
        cap: Optional[int] = None,
        n_jobs: Optional[int] = None
    ) -> EstimateResult:
        """
        The complete generalized U-statistic: the kernel averaged over every tuple of the space
        """
        space = EstimatorService._resolve_space(kernel, samples, space)
        chunks = IndexSpaceService.rank_chunks(space, cap=cap)

        def evaluate(chunk):
            start, stop = chunk
            ranks = np.arange(start, stop, dtype=np.int64)
            return kernel.evaluate_batch(samples, IndexSpaceService.unrank_many(space, ranks))

        total = chunked_sum(chunks, evaluate, n_jobs=settings.N_JOBS if n_jobs is None else n_jobs)
        return EstimateResult(
            value=total / space.cardinality,
            terms_used=space.cardinality,
            scheme="complete",
            estimator="complete",
            space=space,
        )

    @staticmethod
    def incomplete_u(kernel: Kernel, samples: SampleSet, termset: TermSet) -> EstimateResult:
        """
        Average of the kernel over the sampled terms, duplicates counted with multiplicity
        """
        if termset.scheme == SamplingScheme.BERNOULLI:
            raise SchemeMismatchError("Bernoulli term sets have a random size; use the Horvitz-Thompson estimator")
        if len(termset) == 0:
            raise EmptyTermSetError("The incomplete U-statistic is undefined on an empty term set")
        space = EstimatorService._resolve_space(kernel, samples, termset.space)
        total = EstimatorService._termset_sum(kernel, samples, termset)
        return EstimateResult(
            value=total / len(termset),
            terms_used=len(termset),
            scheme=termset.scheme.value,
            estimator="incomplete",
            space=space,
            seed=termset.seed,
        )

    @staticmethod
    def horvitz_thompson(
        kernel: Kernel,
        samples: SampleSet,
        termset: TermSet,
        space: Optional[IndexSpace] = None,
        inclusion_probabilities: Optional[np.ndarray] = None
    ) -> EstimateResult:
        """
        Inclusion-weighted estimate (1/#Lambda) sum H(X_I)/pi_I, with 0/0 = 0 on an empty draw
        """
        if termset.scheme == SamplingScheme.WITH_REPLACEMENT:
            raise SchemeMismatchError("Horvitz-Thompson weighting applies to designs without replacement")
        space = EstimatorService._resolve_space(kernel, samples, space or termset.space)
        if len(termset) == 0:
            return EstimateResult(
                value=0.0, terms_used=0, scheme=termset.scheme.value,
                estimator="horvitz_thompson", space=space, seed=termset.seed,
            )
        if inclusion_probabilities is not None:
            weights = np.asarray(inclusion_probabilities, dtype=float).reshape(-1)
            if weights.shape[0] != len(termset) or np.any(weights <= 0) or np.any(weights > 1):
                raise DomainError("Need one inclusion probability in (0, 1] per term")
            total = EstimatorService._termset_sum(kernel, samples, termset, weights=weights)
            value = total / space.cardinality
        else:
            pi = termset.inclusion_probability
            if pi is None or pi <= 0:
                raise DomainError("The term set carries no positive inclusion probability")
            total = EstimatorService._termset_sum(kernel, samples, termset)
            value = total / (pi * space.cardinality)
        return EstimateResult(
            value=value,
            terms_used=len(termset),
            scheme=termset.scheme.value,
            estimator="horvitz_thompson",
            space=space,
            seed=termset.seed,
        )

    @staticmethod
    def estimate_termset(kernel: Kernel, samples: SampleSet, termset: TermSet) -> EstimateResult:
        """The estimator matching the term set's design"""
        if termset.scheme == SamplingScheme.BERNOULLI:
            return EstimatorService.horvitz_thompson(kernel, samples, termset)
        return EstimatorService.incomplete_u(kernel, samples, termset)

    @staticmethod
    def hoeffding_block_average(
        kernel: Kernel,
        samples: SampleSet,
        space: Optional[IndexSpace],
        permutations: Sequence[np.ndarray]
    ) -> float:
        """
        Average of N = min_k floor(n_k/d_k) kernel evaluations on disjoint blocks of the permuted samples
        """
        space = EstimatorService._resolve_space(kernel, samples, space)
        if len(permutations) != space.K:
            raise PermutationError(f"Need {space.K} permutations, got {len(permutations)}")
        N = space.N
        if N < 1:
            raise DomainError("No complete block fits in the samples (N = 0)")
        index_blocks: List[np.ndarray] = []
        for k, perm in enumerate(permutations):
            perm = np.asarray(perm, dtype=np.int64).reshape(-1)
            n_k, d_k = space.sizes[k], space.degrees[k]
            if perm.shape[0] != n_k or not np.array_equal(np.sort(perm), np.arange(n_k)):
                raise PermutationError(f"Permutation {k} is not a permutation of [0, {n_k})")
            # block l takes sigma_k(l*d_k), ..., sigma_k((l+1)*d_k - 1); sorted to canonical form
            index_blocks.append(np.sort(perm[: N * d_k].reshape(N, d_k), axis=1))
        values = kernel.evaluate_batch(samples, index_blocks)
        return compensated_sum(values) / N

    @staticmethod
    def empirical_kernel_variance(kernel: Kernel, samples: SampleSet, space: Optional[IndexSpace] = None) -> float:
        """s^2 = (1/#Lambda) sum over Lambda of (H(X_I) - U_n)^2, exact on enumerable spaces"""
        space = EstimatorService._resolve_space(kernel, samples, space)
        mean = EstimatorService.complete_u(kernel, samples, space).value
        chunks = IndexSpaceService.rank_chunks(space)

        def evaluate(chunk):
            start, stop = chunk
            ranks = np.arange(start, stop, dtype=np.int64)
            values = kernel.evaluate_batch(samples, IndexSpaceService.unrank_many(space, ranks))
            return (values - mean) ** 2

        return chunked_sum(chunks, evaluate, n_jobs=settings.N_JOBS) / space.cardinality
