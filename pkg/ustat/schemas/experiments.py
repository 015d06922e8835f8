from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Any, Dict, List, Literal, Optional

ExperimentId = Literal["one-time-sampling", "sgd-compare", "model-select", "ranking"]

ETA0_GRID = [1.0, 2.5, 5.0, 10.0, 25.0, 50.0]

# Per-experiment data defaults; values set in the data section win
EXPERIMENT_DATA_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "model-select": {"n": 500, "variance": 0.05, "mean_scale": 2.0},
}


class ExperimentSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: ExperimentId = "one-time-sampling"
    name: Optional[str] = None  # report file stem; defaults to the id with underscores
    trials: int = Field(default=50, ge=1)
    seed: int = 0
    output_dir: Optional[str] = None
    n_jobs: int = 1

    @property
    def report_name(self) -> str:
        return self.name or self.id.replace("-", "_")


class DataSection(BaseModel):
    """Synthetic Gaussian mixture, or CSV files (one per block)"""
    model_config = ConfigDict(extra="forbid")

    source: Literal["synthetic", "csv"] = "synthetic"
    paths: List[str] = Field(default_factory=list)
    test_paths: List[str] = Field(default_factory=list)
    partitions_path: Optional[str] = None
    dim: int = Field(default=40, ge=1)
    n_classes: int = Field(default=10, ge=1)
    subspace_dim: int = Field(default=15, ge=1)
    variance: float = Field(default=1.0, ge=0)
    mean_scale: float = Field(default=1.0, gt=0)
    n: int = Field(default=2000, ge=2)
    n_test: int = Field(default=1000, ge=2)
    seed: int = 0


class OneTimeSamplingSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    p_grid: List[int] = Field(default_factory=lambda: [20, 40, 60, 80])
    steps: int = Field(default=500, ge=1)
    eta0_grid: List[float] = Field(default_factory=lambda: list(ETA0_GRID))
    threshold: float = Field(default=2.0, ge=0)
    test_pairs: int = Field(default=100000, ge=1)
    train_pairs: int = Field(default=100000, ge=1)

    @field_validator("p_grid")
    @classmethod
    def _p_at_least_two(cls, value):
        if not value or min(value) < 2:
            raise ValueError("every p must be at least 2")
        return value


class SgdCompareSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    batch_sizes: List[int] = Field(default_factory=lambda: [10, 28, 55, 105, 253])
    steps: int = Field(default=2000, ge=0)
    eta0_grid: List[float] = Field(default_factory=lambda: list(ETA0_GRID))
    threshold: float = Field(default=2.0, ge=0)
    test_pairs: int = Field(default=100000, ge=1)
    train_pairs: int = Field(default=100000, ge=1)
    record_every: int = Field(default=100, ge=1)


class ModelSelectSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    max_models: int = Field(default=20, ge=1)
    B: int = Field(default=500, ge=1)
    scheme: Literal["with_replacement", "without_replacement"] = "with_replacement"
    c: float = Field(default=1.1, ge=0)
    distance: str = "sqeuclidean"


class RankingSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: int = Field(default=200, ge=2)
    n_rules: int = Field(default=32, ge=1)
    centre: float = Field(default=0.5, ge=0, le=1)
    # rule centres sit at centre + spacing * k, k = -n_rules // 2, ...
    spacing: float = Field(default=0.25, gt=0)
    alpha: float = Field(default=0.0, ge=0, le=1)
    budget_constant: float = Field(default=1.0, gt=0)
    B: Optional[int] = Field(default=None, ge=1)  # overrides the fast-rate schedule
    delta: float = Field(default=0.05, gt=0, lt=1)


class ExperimentConfig(BaseModel):
    """Resolved configuration of one experiment run; embedded in its report"""
    model_config = ConfigDict(extra="forbid")

    experiment: ExperimentSection = Field(default_factory=ExperimentSection)
    data: DataSection = Field(default_factory=DataSection)
    sampling: OneTimeSamplingSection = Field(default_factory=OneTimeSamplingSection)
    sgd: SgdCompareSection = Field(default_factory=SgdCompareSection)
    selection: ModelSelectSection = Field(default_factory=ModelSelectSection)
    ranking: RankingSection = Field(default_factory=RankingSection)

    @model_validator(mode="before")
    @classmethod
    def _experiment_data_defaults(cls, values: Any):
        if not isinstance(values, dict):
            return values
        experiment = values.get("experiment") or {}
        experiment_id = experiment.get("id") if isinstance(experiment, dict) else getattr(experiment, "id", None)
        defaults = EXPERIMENT_DATA_DEFAULTS.get(experiment_id)
        data = values.get("data") or {}
        if defaults and isinstance(data, dict):
            values = {**values, "data": {**defaults, **data}}
        return values
