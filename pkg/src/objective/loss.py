import math
from dataclasses import dataclass
from typing import Dict, List, Sequence

import torch
import torch.nn.functional as F
from pydantic import BaseModel, Field

from src.config import Config
from src.utils.exceptions import NonFiniteLossException, ObjectiveException
from src.utils.logger import get_logger

logger = get_logger(__name__)


class LossConfig(BaseModel):
    """Objective weights. The regulariser weight follows lambda = lambda_ratio * weight_decay unless fixed."""

    weight_decay: float = Field(default=Config.WEIGHT_DECAY, ge=0)
    lambda_ratio: float = Field(default=Config.LAMBDA_RATIO, ge=0)
    fixed_lambda: float | None = Field(default=None, ge=0)
    label_smoothing: float = Field(default=0.0, ge=0, lt=1)

    @property
    def lam(self) -> float:
        if self.fixed_lambda is not None:
            return self.fixed_lambda
        return self.lambda_ratio * self.weight_decay

    def with_weight_decay(self, weight_decay: float) -> "LossConfig":
        return self.model_copy(update={"weight_decay": weight_decay})


@dataclass
class LossBreakdown:
    head_losses: List[torch.Tensor]
    similarity: torch.Tensor
    lam: float
    weight_decay: float
    total: torch.Tensor

    def as_record(self) -> Dict[str, float | List[float]]:
        return {
            "head_losses": [float(loss.detach()) for loss in self.head_losses],
            "similarity": float(self.similarity.detach()),
            "weighted_similarity": self.lam * float(self.similarity.detach()),
            "lam": self.lam,
            "weight_decay": self.weight_decay,
            "total": float(self.total.detach()),
        }


def _check_finite(name: str, value: torch.Tensor, batch_id: int | None) -> None:
    if not math.isfinite(float(value.detach())):
        logger.error(f"Non-finite {name} ({float(value.detach())}) in batch {batch_id}")
        raise NonFiniteLossException(f"{name} is not finite", details={"component": name, "batch": batch_id})


def total_loss(logits: Sequence[torch.Tensor], labels: torch.Tensor, similarity: torch.Tensor,
               cfg: LossConfig, batch_id: int | None = None) -> LossBreakdown:
    """Sum of per-head cross-entropies (each head on its own view) plus lambda * S."""
    if not logits:
        raise ObjectiveException("At least one head is required")
    head_losses = [F.cross_entropy(head_logits, labels, label_smoothing=cfg.label_smoothing) for head_logits in logits]
    for level, loss in enumerate(head_losses, start=1):
        _check_finite(f"head {level} loss", loss, batch_id)
    similarity = similarity.to(head_losses[0].device, head_losses[0].dtype)
    _check_finite("cross pathway similarity", similarity, batch_id)

    total = torch.stack(head_losses).sum()
    if cfg.lam:
        total = total + cfg.lam * similarity
    _check_finite("total loss", total, batch_id)
    return LossBreakdown(head_losses=head_losses, similarity=similarity, lam=cfg.lam,
                         weight_decay=cfg.weight_decay, total=total)
