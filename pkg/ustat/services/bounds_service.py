from typing import Dict, List, Optional, Sequence
import logging
import math
import numpy as np

from ustat.kernels import Kernel
from ustat.schemas.bounds import BoundInputs, ModelSpec, VarianceDecomposition
from ustat.schemas.data import SampleSet
from ustat.schemas.estimates import SamplingScheme
from ustat.utils.errors import BoundInputError, ConfigError, DomainError, InvalidDegreesError, SchemeMismatchError

logger = logging.getLogger("ustat-bounds")


class BoundsService:
    @staticmethod
    def incomplete_variance(var_complete: float, var_kernel: float, B: int) -> float:
        """
        Variance of the incomplete statistic: (1 - 1/B) Var(U_n) + (1/B) Var(H)
        """
        if B < 1:
            raise BoundInputError("B must be at least 1")
        if var_complete < 0 or var_kernel < 0:
            raise BoundInputError("Variances must be nonnegative")
        if var_kernel < var_complete:
            logger.warning("Var(H)=%.6g is below Var(U_n)=%.6g; not a valid U-statistic pair", var_kernel, var_complete)
        return (1.0 - 1.0 / B) * var_complete + var_kernel / B

    @staticmethod
    def degree2_variance(decomp: VarianceDecomposition) -> float:
        """
        Var(U_n) = 4 sigma_1^2 / n + 2 sigma_2^2 / (n (n - 1)) for a one-sample degree-2 kernel
        """
        n = decomp.n
        if n < 2:
            raise BoundInputError("The degree-2 variance formula needs n >= 2")
        return 4.0 * decomp.sigma1_sq / n + 2.0 * decomp.sigma2_sq / (n * (n - 1))

    @staticmethod
    def estimate_projections(kernel: Kernel, samples: SampleSet) -> VarianceDecomposition:
        """
        Plug-in estimates of sigma_1^2 and sigma_2^2 from the full kernel matrix
        """
        if samples.K != 1 or tuple(kernel.degrees) != (2,):
            raise InvalidDegreesError("Projection estimates need a one-sample kernel of degree 2")
        n = samples.sizes[0]
        if n < 4:
            raise DomainError("Projection estimates need n >= 4 observations")
        rows, cols = np.triu_indices(n, k=1)
        values = kernel.evaluate_batch(samples, [np.column_stack([rows, cols])])
        matrix = np.zeros((n, n))
        matrix[rows, cols] = values
        matrix[cols, rows] = values
        u_n = float(values.mean())
        # H_1(x_i) = mean_{j != i} H(x_i, x_j) - U_n
        h1 = matrix.sum(axis=1) / (n - 1) - u_n
        sigma1_sq = float(np.var(h1))
        h2 = values - u_n - h1[rows] - h1[cols]
        sigma2_sq = float(np.mean(h2 ** 2))
        return VarianceDecomposition(sigma1_sq=sigma1_sq, sigma2_sq=sigma2_sq, n=n)

    @staticmethod
    def complete_deviation_bound(inputs: BoundInputs) -> float:
        """
        M { 2 sqrt(2 V ln(1 + N) / N) + sqrt(ln(1/delta) / N) }
        """
        M, V, N, delta = inputs.M, inputs.V, inputs.N, inputs.delta
        return M * (2.0 * math.sqrt(2.0 * V * math.log(1 + N) / N) + math.sqrt(math.log(1.0 / delta) / N))

    @staticmethod
    def incomplete_vs_complete_bound(inputs: BoundInputs) -> float:
        """
        sup_H |U~_B(H) - U_n(H)| <= M sqrt(2 (V ln(1 + #Lambda) + ln(2/delta)) / B)
        """
        M, V, B, delta = inputs.M, inputs.V, inputs.B, inputs.delta
        return M * math.sqrt(2.0 * (V * inputs.log_lambda + math.log(2.0 / delta)) / B)

    @staticmethod
    def incomplete_total_bound(inputs: BoundInputs) -> float:
        M, V, N, B, delta = inputs.M, inputs.V, inputs.N, inputs.B, inputs.delta
        first = 2.0 * math.sqrt(2.0 * V * math.log(1 + N) / N)
        second = math.sqrt(math.log(2.0 / delta) / N)
        third = math.sqrt(2.0 * (V * inputs.log_lambda + math.log(4.0 / delta)) / B)
        return M * (first + second + third)

    @staticmethod
    def ht_deviation_bound(inputs: BoundInputs, scheme: SamplingScheme) -> float:
        """
        Horvitz-Thompson deviation bound with L = ln(2/delta) + V ln(1 + #Lambda)
        """
        scheme = SamplingScheme(scheme)
        if scheme == SamplingScheme.WITH_REPLACEMENT:
            raise SchemeMismatchError("Sampling with replacement is covered by incomplete_vs_complete_bound")
        M, B = inputs.M, inputs.B
        L = math.log(2.0 / inputs.delta) + inputs.V * inputs.log_lambda
        if scheme == SamplingScheme.BERNOULLI:
            return 2.0 * M * math.sqrt(L / B) + 2.0 * L * M / (3.0 * B)
        return math.sqrt(2.0) * M * math.sqrt(L / B)

    @staticmethod
    def penalty(
        B: int,
        n: int,
        N: int,
        log_lambda: float,
        model: ModelSpec,
        envelope_M: Optional[float] = None,
        m: Optional[int] = None
    ) -> float:
        """
        Distribution-free penalty pen(B, m) for the m-th model of a nested family
        """
        if B < 1 or N < 1 or n < 1:
            raise BoundInputError("B, n and N must be at least 1")
        m = model.model_index if m is None else int(m)
        if m < 1:
            raise BoundInputError("Model index m must be at least 1")
        M = model.kernel_bound if envelope_M is None else envelope_M
        V_m, M_m = model.vc_dimension, model.kernel_bound
        complexity = math.sqrt(2.0 * V_m * math.log(1 + N) / N) + math.sqrt(2.0 * (math.log(2.0) + V_m * log_lambda) / B)
        union = math.sqrt((B + n) * math.log(m) / B ** 2)
        return 2.0 * M_m * complexity + 2.0 * M * union

    @staticmethod
    def select_by_criterion(criteria: Dict[int, float]) -> int:
        """argmin over model indices; ties go to the smallest index"""
        if not criteria:
            raise BoundInputError("Model selection needs at least one model")
        return min(criteria, key=lambda m: (criteria[m], m))

    @staticmethod
    def select_model(
        models: Sequence[ModelSpec],
        B: int,
        n: int,
        N: int,
        log_lambda: float,
        envelope_M: Optional[float] = None
    ) -> int:
        """
        argmin_m { U~_B(H_m) + pen(B, m) }, ties broken toward the smallest m
        """
        criteria = BoundsService.selection_criteria(models, B, n, N, log_lambda, envelope_M)
        return BoundsService.select_by_criterion(criteria)

    @staticmethod
    def selection_criteria(
        models: Sequence[ModelSpec],
        B: int,
        n: int,
        N: int,
        log_lambda: float,
        envelope_M: Optional[float] = None
    ) -> Dict[int, float]:
        """risk + pen(B, m) keyed by model index"""
        if len(models) == 0:
            raise BoundInputError("Model selection needs a nonempty list of models")
        indices = [model.model_index for model in models]
        if len(set(indices)) != len(indices):
            raise BoundInputError("Model indices must be unique")
        M = envelope_M if envelope_M is not None else max(model.kernel_bound for model in models)
        criteria = {}
        for model in models:
            if model.risk is None:
                raise BoundInputError(f"Model {model.model_index} has no risk value")
            criteria[model.model_index] = model.risk + BoundsService.penalty(B, n, N, log_lambda, model, M)
        return criteria

    @staticmethod
    def evaluate(kind: str, inputs: BoundInputs) -> float:
        """Dispatch on a bound name as used by the CLI and the HTTP API"""
        bounds = {
            "complete": BoundsService.complete_deviation_bound,
            "incomplete": BoundsService.incomplete_vs_complete_bound,
            "total": BoundsService.incomplete_total_bound,
            "ht-bernoulli": lambda i: BoundsService.ht_deviation_bound(i, SamplingScheme.BERNOULLI),
            "ht-without-replacement": lambda i: BoundsService.ht_deviation_bound(i, SamplingScheme.WITHOUT_REPLACEMENT),
        }
        if kind not in bounds:
            raise ConfigError(f"Unknown bound '{kind}'. Available: {', '.join(bounds)}")
        return bounds[kind](inputs)

    @staticmethod
    def fast_rate_budget(n: int, alpha: float, c: float = 1.0) -> int:
        """
        B = ceil(c n^{2/(2 - alpha)}) terms keep the fast rate of a noise exponent alpha in [0, 1]
        """
        if n < 1:
            raise BoundInputError("n must be at least 1")
        if not 0.0 <= alpha <= 1.0:
            raise BoundInputError("alpha must lie in [0, 1]")
        if c <= 0:
            raise BoundInputError("c must be positive")
        return int(math.ceil(c * n ** (2.0 / (2.0 - alpha))))

    @staticmethod
    def cost_comparison(sizes: Sequence[int], degrees: Sequence[int], B: int) -> List[Dict[str, float]]:
        """Terms averaged and rate order for complete, incomplete and subsample-complete estimates"""
        from ustat.services.index_space_service import IndexSpaceService
        if B < 1:
            raise BoundInputError("B must be at least 1")
        space = IndexSpaceService.build_index_space(sizes, degrees)
        n = space.pooled_size
        # subsample sizes n'_k proportional to n_k with prod C(n'_k, d_k) closest to B from below
        scale = 1.0
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = (lo + hi) / 2
            sub = [max(d, int(mid * nk)) for nk, d in zip(sizes, degrees)]
            if math.prod(math.comb(s, d) for s, d in zip(sub, degrees)) <= B:
                lo = mid
            else:
                hi = mid
            scale = lo
        sub = [max(d, int(scale * nk)) for nk, d in zip(sizes, degrees)]
        n_sub = sum(sub)
        return [
            {"estimator": "complete", "terms": float(space.cardinality), "rate": math.sqrt(math.log(n) / n)},
            # sampling error sqrt(log #Lambda / B) on top of the complete statistic's own
            {"estimator": "incomplete", "terms": float(B),
             "rate": max(math.sqrt(math.log(n) / n), math.sqrt(space.log1p_cardinality / B))},
            {"estimator": "complete_subsample", "terms": float(math.prod(math.comb(s, d) for s, d in zip(sub, degrees))),
             "rate": math.sqrt(math.log(max(n_sub, 2)) / max(n_sub, 1))},
        ]
