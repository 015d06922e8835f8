from fastapi import APIRouter

from ustat.schemas.bounds import IndexSpaceRequest, IndexSpaceResponse
from ustat.schemas.data import SampleSet
from ustat.schemas.estimates import EstimateRequest, EstimateResult
from ustat.services.estimator_service import EstimatorService
from ustat.services.index_space_service import IndexSpaceService
from ustat.services.learning_service import LearningService
from ustat.services.sampling_service import SamplingService
from ustat.utils.errors import ConfigError

router = APIRouter()

@router.post("/index-space", response_model=IndexSpaceResponse)
def describe_index_space(request: IndexSpaceRequest):
    space = IndexSpaceService.build_index_space(request.sizes, request.degrees)
    return IndexSpaceResponse(
        sizes=list(space.sizes),
        degrees=list(space.degrees),
        cardinality=str(space.cardinality),
        log_cardinality=space.log_cardinality,
        N=space.N,
    )

@router.post("/estimates", response_model=EstimateResult)
def estimate(request: EstimateRequest):
    labels = tuple(request.labels) if request.labels else ()
    samples = SampleSet(blocks=tuple(request.samples), labels=labels)
    kernel = LearningService.named_kernel(request.kernel, samples)
    if request.estimator == "complete":
        return EstimatorService.complete_u(kernel, samples)

    # 1. Draw the term set
    if request.B is None:
        raise ConfigError("Sampled estimators need a budget B")
    space = IndexSpaceService.build_index_space(samples.sizes, kernel.degrees)
    termset = SamplingService.sample(space, request.scheme, request.B, request.seed)

    # 2. Average over it
    if request.estimator == "ht":
        return EstimatorService.horvitz_thompson(kernel, samples, termset)
    return EstimatorService.incomplete_u(kernel, samples, termset)
