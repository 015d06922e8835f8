from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import List, Optional


class BoundInputs(BaseModel):
    """Everything the closed-form deviation bounds and penalties need"""
    model_config = ConfigDict(frozen=True)

    M: float = Field(gt=0, description="kernel bound M_H, or the envelope M over models")
    V: float = Field(default=1.0, ge=1, description="VC dimension of the kernel class")
    N: int = Field(default=1, ge=1, description="min_k floor(n_k / d_k)")
    log_lambda: float = Field(default=0.0, ge=0, description="ln(1 + #Lambda)")
    B: int = Field(default=1, ge=1, description="number of sampled terms")
    delta: float = Field(default=0.05, gt=0, lt=1)
    n: int = Field(default=1, ge=1, description="pooled sample size")


class VarianceDecomposition(BaseModel):
    model_config = ConfigDict(frozen=True)

    sigma1_sq: float = Field(ge=0)
    sigma2_sq: float = Field(ge=0)
    n: int = Field(ge=2)


class ModelSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    model_index: int = Field(ge=1)
    vc_dimension: float = Field(gt=0)
    kernel_bound: float = Field(gt=0)
    risk: Optional[float] = None  # incomplete ERM risk of the model


class PenaltyRequest(BaseModel):
    B: int = Field(ge=1)
    n: int = Field(ge=1)
    N: int = Field(ge=1)
    log_lambda: float = Field(ge=0)
    model: ModelSpec
    envelope_M: Optional[float] = Field(default=None, gt=0)


class SelectionRequest(BaseModel):
    models: List[ModelSpec]
    B: int = Field(ge=1)
    n: int = Field(ge=1)
    N: int = Field(ge=1)
    log_lambda: float = Field(ge=0)
    envelope_M: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _risks_present(self):
        if any(m.risk is None for m in self.models):
            raise ValueError("every model needs its incomplete risk value")
        return self


class BoundResponse(BaseModel):
    kind: str
    value: float
    inputs: BoundInputs


class IndexSpaceRequest(BaseModel):
    sizes: List[int]
    degrees: List[int]


class IndexSpaceResponse(BaseModel):
    sizes: List[int]
    degrees: List[int]
    cardinality: str  # exact, as a decimal string
    log_cardinality: float
    N: int
