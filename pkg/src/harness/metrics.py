from pathlib import Path
from typing import List, Type, TypeVar

from pydantic import BaseModel, Field, ValidationError, model_validator

from src.utils.exceptions import EvaluationException
from src.utils.logger import get_logger

logger = get_logger(__name__)

STEPS_FILE = "steps.jsonl"
METRICS_FILE = "metrics.jsonl"
SUMMARY_FILE = "summary.json"

Record = TypeVar("Record", bound=BaseModel)


class StepRecord(BaseModel):
    epoch: int = Field(ge=0)
    step: int = Field(ge=0)
    batch_seed: int
    head_losses: List[float]
    similarity: float
    weighted_similarity: float
    lam: float
    total: float
    lr: float


class MetricsRecord(BaseModel):
    """One row per finished epoch."""

    epoch: int = Field(ge=0)
    head_losses: List[float]
    similarity: float
    weighted_similarity: float
    top1: float = Field(ge=0, le=100)
    top5: float = Field(ge=0, le=100)
    wall_time: float = Field(ge=0)
    lr: float

    @model_validator(mode="after")
    def _check_accuracy(self) -> "MetricsRecord":
        if self.top1 > self.top5:
            raise ValueError(f"top-1 ({self.top1}) exceeds top-5 ({self.top5})")
        return self


class RunSummary(BaseModel):
    name: str
    variant: str
    seed: int
    order: int
    params: int
    inference_params: int
    macs: int
    epochs: int
    top1: float
    top5: float
    best_top1: float


def read_jsonl(path: str | Path, model: Type[Record]) -> List[Record]:
    records = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                records.append(model.model_validate_json(line))
            except ValidationError as e:
                raise EvaluationException(f"Malformed record in {path}", details={"line": number, "error": str(e)})
    return records
