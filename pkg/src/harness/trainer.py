"""Training loop.

Determinism: ingest selection, data order (a dedicated torch generator), augmentation
(a numpy stream per run, then one per image and level) and model init are all derived
from the run seed. On CPU a resumed run continues the step-loss trace bit-for-bit. On
CUDA the trace agrees to about 1e-5 relative, since GPU reductions are not associative
and the CUDA generator state is not checkpointed.
"""
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List

import numpy as np
import torch
from torch.optim import SGD
from torch.optim.lr_scheduler import CosineAnnealingLR, LambdaLR

from src.apconv.accounting import count_macs
from src.augment.views import make_view_batch
from src.harness.data import batches, ingest
from src.harness.evaluator import evaluate_model
from src.harness.experiment import ExperimentConfig, build_network
from src.harness.metrics import METRICS_FILE, STEPS_FILE, SUMMARY_FILE, MetricsRecord, RunSummary, StepRecord, read_jsonl
from src.heap.spec import HeAPStageSpec
from src.objective.loss import LossConfig, total_loss
from src.objective.regularizer import cross_pathway_similarity
from src.surgery.checkpoint import load_checkpoint, save_checkpoint
from src.surgery.plan import account
from src.utils.exceptions import NonFiniteLossException, TrainingException
from src.utils.helper import append_jsonl, atomic_write_bytes, resolve_device, seed_everything
from src.utils.logger import get_logger

logger = get_logger(__name__)

AUGMENT_STREAM = 0xA06
LAST_CHECKPOINT = "last.apnet"
BEST_CHECKPOINT = "best.apnet"


@dataclass
class RunResult:
    out_dir: Path
    summary: RunSummary
    metrics: List[MetricsRecord] = field(default_factory=list)
    step_losses: List[float] = field(default_factory=list)

    @property
    def last_checkpoint(self) -> Path:
        return self.out_dir / LAST_CHECKPOINT

    @property
    def best_checkpoint(self) -> Path:
        return self.out_dir / BEST_CHECKPOINT


class Trainer:
    def __init__(self, cfg: ExperimentConfig, seed: int, out_dir: str | Path, device: torch.device | None = None):
        self.cfg = cfg
        self.seed = seed
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.device = device or resolve_device()

        self.data_generator = seed_everything(seed)
        torch.backends.cudnn.deterministic = True
        torch.backends.cudnn.benchmark = False

        self.splits = ingest(cfg.dataset, seed)
        self.model, self.description = build_network(cfg, self.splits.train.num_classes)
        self.model.to(self.device)

        opt = cfg.optimizer
        self.optimizer = SGD(self.model.parameters(), lr=opt.lr, momentum=opt.momentum, weight_decay=opt.weight_decay)
        if opt.schedule == "cosine":
            self.scheduler = CosineAnnealingLR(self.optimizer, T_max=cfg.epochs)
        else:
            self.scheduler = LambdaLR(self.optimizer, lambda epoch: 1.0)
        # lambda tracks the weight decay the optimizer actually applies
        self.loss_cfg = LossConfig(
            lambda_ratio=cfg.objective.lambda_ratio,
            label_smoothing=cfg.objective.label_smoothing,
        ).with_weight_decay(self.optimizer.param_groups[0]["weight_decay"])

        self.augment_rng = np.random.default_rng([seed, AUGMENT_STREAM])
        self.policies = cfg.training_policies()
        self.start_epoch = 0
        self.step = 0
        self.best_top1 = -1.0
        self.step_losses: List[float] = []
        self._logs_started = False
        logger.info(f"Trainer ready: {cfg.name} [{cfg.variant}] seed={seed}, {len(self.policies)} view level(s), "
                    f"lambda={self.loss_cfg.lam:g}, device={self.device}")

    # ---- one step -------------------------------------------------------------------------------

    def _forward(self, images: torch.Tensor, labels: torch.Tensor):
        weight_decay = self.optimizer.param_groups[0]["weight_decay"]
        if weight_decay != self.loss_cfg.weight_decay:
            self.loss_cfg = self.loss_cfg.with_weight_decay(weight_decay)
        views = make_view_batch(images, labels, self.policies, self.cfg.light, self.augment_rng).to(self.device)
        if self.cfg.variant == "baseline_heavy":
            # one standard network classifies every graded view with its single head
            logits = [self.model(views.level(level)) for level in range(1, views.num_levels + 1)]
            similarity = torch.zeros((), device=self.device)
        else:
            out = self.model.forward_train(views)
            logits = out.logits
            similarity = cross_pathway_similarity(out.pathway_features)
        return views, total_loss(logits, views.labels, similarity, self.loss_cfg, batch_id=self.step)

    def train_epoch(self, epoch: int) -> Dict[str, float | List[float]]:
        self.model.train()
        lr = self.optimizer.param_groups[0]["lr"]
        head_sums: List[float] = []
        similarity_sum = weighted_sum = 0.0
        count = 0
        for images, labels in batches(self.splits.train, self.cfg.batch_size, self.data_generator, shuffle=True):
            try:
                views, breakdown = self._forward(images, labels)
            except NonFiniteLossException:
                logger.critical(f"Aborting run {self.cfg.name}: non-finite loss at epoch {epoch}, batch {self.step}")
                raise
            self.optimizer.zero_grad(set_to_none=True)
            breakdown.total.backward()
            self.optimizer.step()

            record = breakdown.as_record()
            append_jsonl(self.out_dir / STEPS_FILE, StepRecord(
                epoch=epoch, step=self.step, batch_seed=views.seed, head_losses=record["head_losses"],
                similarity=record["similarity"], weighted_similarity=record["weighted_similarity"],
                lam=record["lam"], total=record["total"], lr=lr,
            ))
            self.step_losses.append(record["total"])
            head_sums = [a + b for a, b in zip(head_sums, record["head_losses"])] if head_sums else list(record["head_losses"])
            similarity_sum += record["similarity"]
            weighted_sum += record["weighted_similarity"]
            count += 1
            self.step += 1

        if count == 0:
            raise TrainingException("Training split produced no batches", details={"epoch": epoch})
        return {
            "head_losses": [s / count for s in head_sums],
            "similarity": similarity_sum / count,
            "weighted_similarity": weighted_sum / count,
            "lr": lr,
        }

    # ---- checkpoints ----------------------------------------------------------------------------

    def _state_tensors(self) -> Dict[str, torch.Tensor]:
        tensors = {"rng/torch": torch.get_rng_state(), "rng/data": self.data_generator.get_state()}
        for name, param in self.model.named_parameters():
            buffer = self.optimizer.state.get(param, {}).get("momentum_buffer")
            if buffer is not None:
                tensors[f"optim/{name}"] = buffer
        return tensors

    def _metadata(self, epoch: int) -> Dict:
        return {
            "config": self.cfg.model_dump(mode="json"),
            "seed": self.seed,
            "epoch": epoch,
            "step": self.step,
            "best_top1": self.best_top1,
            "lr": [group["lr"] for group in self.optimizer.param_groups],
            "scheduler": self.scheduler.state_dict(),
            "augment_rng": self.augment_rng.bit_generator.state,
        }

    def save(self, epoch: int, best: bool) -> None:
        metadata, tensors = self._metadata(epoch), self._state_tensors()
        save_checkpoint(self.out_dir / LAST_CHECKPOINT, self.model, metadata, tensors)
        if best:
            save_checkpoint(self.out_dir / BEST_CHECKPOINT, self.model, metadata, tensors)

    def resume(self, path: str | Path) -> "Trainer":
        """Restore weights, momentum buffers, schedule position and every RNG stream of a finished epoch."""
        checkpoint = load_checkpoint(path)
        meta = checkpoint.metadata
        if meta.get("seed") != self.seed:
            raise TrainingException("Checkpoint was written by a different seed",
                                    details={"checkpoint": meta.get("seed"), "run": self.seed})
        if meta.get("config") != self.cfg.model_dump(mode="json"):
            logger.warning("Resuming with a config that differs from the checkpointed one")

        self.model.load_state_dict({k: v.to(self.device) for k, v in checkpoint.model_state().items()})
        parameters = dict(self.model.named_parameters())
        for name, buffer in checkpoint.extras("optim/").items():
            if name not in parameters:
                raise TrainingException("Momentum buffer for an unknown parameter", details={"parameter": name})
            self.optimizer.state[parameters[name]]["momentum_buffer"] = buffer.to(self.device)
        self.scheduler.load_state_dict(dict(meta["scheduler"]))
        for group, lr in zip(self.optimizer.param_groups, meta["lr"]):
            group["lr"] = lr
        self.augment_rng.bit_generator.state = meta["augment_rng"]
        rng = checkpoint.extras("rng/")
        torch.set_rng_state(rng["torch"])
        self.data_generator.set_state(rng["data"])

        self.start_epoch = meta["epoch"] + 1
        self.step = meta["step"]
        self.best_top1 = meta["best_top1"]
        self._truncate_logs(meta["epoch"])
        self._logs_started = True
        logger.info(f"Resumed from {path} at epoch {self.start_epoch} (step {self.step})")
        return self

    def _truncate_logs(self, epoch: int) -> None:
        # drop records of an epoch that was interrupted after the checkpoint
        for name, model in ((STEPS_FILE, StepRecord), (METRICS_FILE, MetricsRecord)):
            path = self.out_dir / name
            if not path.exists():
                continue
            kept = [r for r in read_jsonl(path, model) if r.epoch <= epoch]
            atomic_write_bytes(path, "".join(r.model_dump_json() + "\n" for r in kept).encode("utf-8"))

    # ---- accounting -----------------------------------------------------------------------------

    def macs(self) -> int:
        size = self.cfg.eval.crop
        if isinstance(self.description, HeAPStageSpec):
            dummy = torch.zeros(1, self.description.in_channels, size, size, device=self.device)
            was_training = self.model.training
            self.model.eval()
            try:
                return count_macs(self.model, lambda: self.model(dummy))
            finally:
                self.model.train(was_training)
        return account(self.description, (size, size)).macs

    # ---- loop -----------------------------------------------------------------------------------

    def run_epoch(self, epoch: int) -> MetricsRecord:
        """Train one epoch, evaluate it, advance the schedule and checkpoint."""
        if not self._logs_started:
            # a fresh run replaces the logs of any earlier run in the same directory
            for name in (STEPS_FILE, METRICS_FILE):
                (self.out_dir / name).unlink(missing_ok=True)
            self._logs_started = True
        started = time.perf_counter()
        losses = self.train_epoch(epoch)
        top1, top5 = evaluate_model(self.model, self.splits.val, self.cfg.eval, self.cfg.batch_size, self.device)
        self.scheduler.step()
        record = MetricsRecord(epoch=epoch, top1=top1, top5=top5,
                               wall_time=time.perf_counter() - started, **losses)
        append_jsonl(self.out_dir / METRICS_FILE, record)

        best = top1 > self.best_top1
        self.best_top1 = max(self.best_top1, top1)
        self.save(epoch, best)
        logger.info(f"[{self.cfg.name} seed={self.seed}] epoch {epoch + 1}/{self.cfg.epochs}: "
                    f"loss={sum(record.head_losses):.4f} S={record.similarity:.4g} "
                    f"top1={top1:.2f} top5={top5:.2f} ({record.wall_time:.1f}s)")
        return record

    def fit(self) -> RunResult:
        for epoch in range(self.start_epoch, self.cfg.epochs):
            self.run_epoch(epoch)

        # the metrics file also holds epochs finished before a resume
        metrics = read_jsonl(self.out_dir / METRICS_FILE, MetricsRecord) if (self.out_dir / METRICS_FILE).exists() else []
        top1, top5 = (metrics[-1].top1, metrics[-1].top5) if metrics else (0.0, 0.0)

        summary = RunSummary(
            name=self.cfg.name, variant=self.cfg.variant, seed=self.seed, order=self.cfg.order,
            params=self.model.parameter_count(), inference_params=self.model.inference_parameter_count(),
            macs=self.macs(), epochs=self.cfg.epochs, top1=top1, top5=top5, best_top1=max(self.best_top1, 0.0),
        )
        atomic_write_bytes(self.out_dir / SUMMARY_FILE, summary.model_dump_json(indent=2).encode("utf-8"))
        logger.info(f"Run finished: {summary.inference_params} inference params, {summary.macs} MACs, top-1 {top1:.2f}")
        return RunResult(out_dir=self.out_dir, summary=summary, metrics=metrics, step_losses=list(self.step_losses))


def train(cfg: ExperimentConfig, seed: int, out_dir: str | Path, resume: str | Path | None = None) -> RunResult:
    trainer = Trainer(cfg, seed, out_dir)
    if resume is not None:
        trainer.resume(resume)
    return trainer.fit()


def train_all(cfg: ExperimentConfig, out_dir: str | Path) -> List[RunResult]:
    """One run per configured seed, each in its own `seed_<n>` directory."""
    return [train(cfg, seed, Path(out_dir) / f"seed_{seed}") for seed in cfg.seeds]
