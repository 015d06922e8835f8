from fastapi import APIRouter

from ustat.schemas.bounds import BoundInputs, BoundResponse, PenaltyRequest, SelectionRequest
from ustat.services.bounds_service import BoundsService

router = APIRouter()

@router.post("/penalty")
def compute_penalty(request: PenaltyRequest):
    value = BoundsService.penalty(
        request.B, request.n, request.N, request.log_lambda, request.model, request.envelope_M
    )
    return {"kind": "penalty", "value": value, "model_index": request.model.model_index}

@router.post("/select")
def select_model(request: SelectionRequest):
    criteria = BoundsService.selection_criteria(
        request.models, request.B, request.n, request.N, request.log_lambda, request.envelope_M
    )
    return {
        "selected": BoundsService.select_by_criterion(criteria),
        "criteria": {str(m): value for m, value in sorted(criteria.items())},
    }

@router.post("/{kind}", response_model=BoundResponse)
def evaluate_bound(kind: str, inputs: BoundInputs):
    return BoundResponse(kind=kind, value=BoundsService.evaluate(kind, inputs), inputs=inputs)
