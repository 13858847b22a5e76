from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.config import settings
from app.core.errors import UsageError
from app.engine.topology import parse_partition


def _split_list(value):
    """INI values arrive as ``"a, b"`` strings; JSON bodies as lists."""
    if isinstance(value, str):
        return [part.strip() for part in value.split(",") if part.strip()]
    return value


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ExperimentSection(StrictModel):
    name: str = "experiment"
    seed: int = settings.DEFAULT_SEED


class DatasetSection(StrictModel):
    name: Literal["lorenz", "rlc", "sunspot"] = "lorenz"
    path: Optional[str] = None
    integrator: Literal["rk4", "euler"] = "rk4"
    n_samples: Optional[int] = Field(default=None, ge=2)
    train_end: Optional[int] = Field(default=None, ge=1)
    validation_start: Optional[int] = Field(default=None, ge=0)
    validation_end: Optional[int] = Field(default=None, ge=1)
    test_start: Optional[int] = Field(default=None, ge=0)
    test_end: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def check_path(self):
        if self.name == "sunspot" and not self.path:
            raise ValueError("the sunspot dataset needs path")
        return self


class AlgorithmSection(StrictModel):
    """First-group settings: the columns the result tables are indexed by."""
    sparsifier: Literal["ald", "distance", "loss_change", "ofs"] = "ald"
    updater: Literal["krls", "mrls", "recurrent_grad"] = "krls"
    nu1: float = Field(default=0.01, gt=0)
    nu2: Optional[float] = Field(default=None, gt=0)
    nu3: float = Field(default=1e-4, ge=0)
    regularizer: float = Field(default=1e-6, ge=0)
    beta: float = Field(default=1.0, gt=0, le=1)
    innovations: int = Field(default=1, ge=1)
    learning_rate: float = Field(default=0.1, gt=0)
    lambda_scale: float = Field(default=0.01, ge=0)
    feedback_lags: List[int] = Field(default_factory=list)
    delta: float = Field(default=1e-3, gt=0)
    h0: float = Field(default=1.0, gt=0)
    precision: Union[float, List[float]] = 1.0
    max_size: Optional[int] = Field(default=None, ge=1)
    partition: Optional[str] = None
    replace_when_full: bool = False
    ofs_candidates: int = Field(default=200, ge=1)
    ofs_threshold: Optional[float] = Field(default=None, gt=0)

    @field_validator("feedback_lags", mode="before")
    @classmethod
    def split_lags(cls, value):
        return _split_list(value)

    @field_validator("precision", mode="before")
    @classmethod
    def split_precision(cls, value):
        # a scalar is an isotropic scale; a list is the diagonal
        if isinstance(value, str) and "," in value:
            return _split_list(value)
        return value

    @model_validator(mode="after")
    def check_partition(self):
        try:
            parts = parse_partition(self.partition)
        except UsageError as exc:
            raise ValueError(exc.message) from exc
        if parts and self.max_size is not None and sum(parts) != self.max_size:
            raise ValueError(f"partition {self.partition} must sum to max_size {self.max_size}")
        if self.replace_when_full and self.updater == "krls":
            raise ValueError("replace_when_full needs the mrls or recurrent_grad updater")
        return self


class TopologySection(StrictModel):
    depth: int = Field(default=1, ge=1)
    stages: List[Literal["last_error", "linear_rls", "kernel"]] = Field(default_factory=lambda: ["last_error"])
    lags: int = Field(default=1, ge=1)
    beta2: float = Field(default=1.0, gt=0, le=1)
    stage_precision: float = Field(default=1.0, gt=0)
    stage_h0: float = Field(default=1.0, gt=0)
    stage_nu1: float = Field(default=0.01, gt=0)
    auto_depth: bool = False
    monitor_window: int = Field(default=50, ge=1)
    grow_online: bool = True

    @field_validator("stages", mode="before")
    @classmethod
    def split_stages(cls, value):
        return _split_list(value)


class PrecisionSection(StrictModel):
    mode: Literal["off", "ald", "fixed_dict", "alg1", "alg2"] = "off"
    samples: int = Field(default=300, ge=1)
    weighting: Literal["uniform", "recency"] = "uniform"
    recency: float = Field(default=0.99, gt=0, le=1)
    generations: int = Field(default=20, ge=0)
    population: Optional[int] = Field(default=None, ge=2)
    sigma0: Optional[float] = Field(default=None, gt=0)
    sign: int = 1
    c0: Optional[float] = Field(default=None, gt=0, lt=1)
    workers: int = Field(default=1, ge=1)
    form: Literal["full", "diagonal"] = "full"

    @field_validator("mode")
    @classmethod
    def canonical_mode(cls, value: str) -> str:
        return {"alg1": "ald", "alg2": "fixed_dict"}.get(value, value)

    @field_validator("sign")
    @classmethod
    def check_sign(cls, value: int) -> int:
        if value not in (1, -1):
            raise ValueError("sign must be 1 or -1")
        return value


class OutputSection(StrictModel):
    directory: Optional[str] = None
    format: Literal["csv", "tsv"] = "csv"
    write_files: bool = True


class ExperimentConfig(StrictModel):
    experiment: ExperimentSection = Field(default_factory=ExperimentSection)
    dataset: DatasetSection = Field(default_factory=DatasetSection)
    algorithm: AlgorithmSection = Field(default_factory=AlgorithmSection)
    topology: TopologySection = Field(default_factory=TopologySection)
    precision: PrecisionSection = Field(default_factory=PrecisionSection)
    output: OutputSection = Field(default_factory=OutputSection)

    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "example": {
                "experiment": {"name": "rlc-short", "seed": 0},
                "dataset": {"name": "rlc", "n_samples": 801, "train_end": 300,
                            "validation_start": 200, "validation_end": 300,
                            "test_start": 300, "test_end": 800},
                "algorithm": {"sparsifier": "ald", "updater": "krls", "nu1": 0.01,
                              "regularizer": 0.0, "precision": 1.0, "max_size": 100},
                "topology": {"depth": 4, "stages": ["last_error"]},
                "output": {"write_files": False},
            }
        },
    )


class DepthMetrics(BaseModel):
    depth: int
    mae: float
    mse: float


class DepthTrace(BaseModel):
    depth: int
    n: List[int]
    y: List[float]
    prediction: List[float]
    error: List[float]


class PrecisionSummary(BaseModel):
    incumbent_loss: float
    best_loss: float
    accepted: bool
    selection_runs: int
    generations: int


class MetricsReport(BaseModel):
    name: str
    dataset: str
    seed: int
    depths: List[DepthMetrics]
    monitored: DepthMetrics
    best_depth: int
    dictionary_size: int
    training_samples: int
    test_samples: int
    skipped_samples: int = 0
    precision: List[PrecisionSummary] = Field(default_factory=list)
    wall_time: float
    config: dict
    output_directory: Optional[str] = None
    traces: Optional[List[DepthTrace]] = None


class MetricsRequest(BaseModel):
    errors: Dict[str, List[float]] = Field(
        description="Error vectors keyed by depth label",
        examples=[{"1": [1.0, -1.0], "2": [3.0, 0.0, 0.0]}],
    )


class MetricsResponse(BaseModel):
    metrics: Dict[str, DepthMetrics]
