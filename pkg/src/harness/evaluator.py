from pathlib import Path
from typing import Tuple

import torch
import torch.nn as nn

from src.harness.data import Split, apply_protocol, batches, ingest
from src.harness.experiment import EvalProtocol, ExperimentConfig
from src.surgery.checkpoint import build_model, load_checkpoint
from src.utils.exceptions import EvaluationException
from src.utils.helper import resolve_device
from src.utils.logger import get_logger

logger = get_logger(__name__)


def topk_correct(probs: torch.Tensor, labels: torch.Tensor) -> Tuple[int, int]:
    """Counts of top-1 and top-min(5, C) hits."""
    k = min(5, probs.shape[1])
    ranked = probs.topk(k, dim=1).indices
    hits = ranked.eq(labels.unsqueeze(1))
    return int(hits[:, 0].sum()), int(hits.any(dim=1).sum())


def evaluate_model(model: nn.Module, split: Split, protocol: EvalProtocol, batch_size: int = 256,
                   device: torch.device | None = None) -> Tuple[float, float]:
    """Top-1/top-5 percentages of the main head over `split`, single central crop."""
    if model.num_classes != split.num_classes:
        raise EvaluationException("Model head and dataset disagree on the class count",
                                  details={"head": model.num_classes, "dataset": split.num_classes})
    if len(split) == 0:
        raise EvaluationException("Validation split is empty")
    device = device or next(model.parameters()).device
    top1 = top5 = 0
    for images, labels in batches(split, batch_size):
        probs = model.infer(apply_protocol(images, protocol).to(device))
        hits1, hits5 = topk_correct(probs.cpu(), labels)
        top1 += hits1
        top5 += hits5
    return 100.0 * top1 / len(split), 100.0 * top5 / len(split)


def evaluate(checkpoint_path: str | Path, data_path: str | None = None) -> Tuple[float, float]:
    """Evaluate a saved run on its validation split; `data_path` overrides the recorded dataset location."""
    checkpoint = load_checkpoint(checkpoint_path)
    if "config" not in checkpoint.metadata:
        raise EvaluationException("Checkpoint carries no experiment config", details={"path": str(checkpoint_path)})
    cfg = ExperimentConfig.model_validate(checkpoint.metadata["config"])
    dataset = cfg.dataset if data_path is None else cfg.dataset.model_copy(update={"path": data_path})

    device = resolve_device()
    model = build_model(checkpoint).to(device)
    splits = ingest(dataset, checkpoint.metadata.get("seed", cfg.seeds[0]))
    top1, top5 = evaluate_model(model, splits.val, cfg.eval, cfg.batch_size, device)
    logger.info(f"Evaluated {checkpoint_path}: top-1 {top1:.2f}%, top-5 {top5:.2f}%")
    return top1, top5
