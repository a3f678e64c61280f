from pathlib import Path
from typing import Annotated, List, Literal, Tuple

import torch.nn as nn
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.augment.grading import Gradable, grade_policies, is_light
from src.augment.policies import PolicyChain, PolicyKind, PolicySpec
from src.config import Config
from src.heap.network import HeAPNetwork
from src.heap.spec import HeAPPathwaySpec, HeAPStageSpec
from src.surgery.network import surgerize
from src.surgery.plan import BackboneSpec, NetworkPlan, resnet50_backbone, small_resnet_backbone
from src.utils.exceptions import AugmentationException, BaseAPNetException, ConfigurationException
from src.utils.logger import get_logger

logger = get_logger(__name__)

Variant = Literal["pathways", "baseline", "baseline_heavy"]
# a bare policy is tried first, so `{kind: ...}` never parses as a chain
GradedEntry = Annotated[PolicySpec | PolicyChain, Field(union_mode="left_to_right")]


class DatasetConfig(BaseModel):
    """Where the images come from and how many training images per class are kept."""

    path: str = ""
    format: Literal["image_folder", "cifar_batches", "synthetic"] = "synthetic"
    cap: int | None = Field(default=None, ge=1)
    image_size: int = Field(default=32, gt=0)
    # class count for the synthetic generator and for `account`; other formats read it from the data
    num_classes: int = Field(default=10, ge=2)
    train_per_class: int = Field(default=100, ge=1)
    val_per_class: int = Field(default=20, ge=1)

    @model_validator(mode="after")
    def _check_path(self) -> "DatasetConfig":
        if self.format != "synthetic" and not self.path:
            raise ValueError(f"dataset.path is required for format '{self.format}'")
        return self


class PlanConfig(BaseModel):
    backbone: Literal["small_resnet", "resnet50"] | BackboneSpec = "small_resnet"
    widths: List[int] = Field(default_factory=lambda: [16, 32, 64])
    blocks: int = Field(default=2, ge=1)
    k: int = Field(default=2, ge=1)
    replace_stages: List[int] | None = None
    split: List[float] | None = None
    cross_pathway: bool = True

    def build(self, num_classes: int) -> NetworkPlan:
        if isinstance(self.backbone, BackboneSpec):
            backbone = self.backbone.model_copy(update={"num_classes": num_classes})
        elif self.backbone == "resnet50":
            backbone = resnet50_backbone(num_classes)
        else:
            backbone = small_resnet_backbone(num_classes, tuple(self.widths), self.blocks)
        return NetworkPlan(backbone=backbone, k=self.k, replace_stages=self.replace_stages, split=self.split,
                           cross_pathway=self.cross_pathway)


class HeAPConfig(BaseModel):
    in_channels: int = 3
    pathways: List[HeAPPathwaySpec] = Field(min_length=1)
    fusion: List[List[int]] | None = None

    @property
    def k(self) -> int:
        return len(self.pathways)

    def build(self, num_classes: int, image_size: int) -> HeAPStageSpec:
        return HeAPStageSpec(in_channels=self.in_channels, num_classes=num_classes, image_size=image_size,
                             pathways=self.pathways, fusion=self.fusion)


class OptimizerConfig(BaseModel):
    lr: float = Field(default=0.1, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    weight_decay: float = Field(default=Config.WEIGHT_DECAY, ge=0)
    schedule: Literal["cosine", "constant"] = "cosine"


class ObjectiveConfig(BaseModel):
    lambda_ratio: float = Field(default=Config.LAMBDA_RATIO, ge=0)
    label_smoothing: float = Field(default=0.0, ge=0, lt=1)


class EvalProtocol(BaseModel):
    """Single central crop: resize the short side, then center-crop a square."""

    resize: int = Field(default=32, gt=0)
    crop: int = Field(default=32, gt=0)

    @model_validator(mode="after")
    def _check(self) -> "EvalProtocol":
        if self.crop > self.resize:
            raise ValueError(f"eval.crop ({self.crop}) cannot exceed eval.resize ({self.resize})")
        return self


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "experiment"
    variant: Variant = "pathways"
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    plan: PlanConfig | None = None
    heap: HeAPConfig | None = None
    light: List[PolicySpec] = Field(default_factory=list)
    graded: List[GradedEntry] = Field(default_factory=lambda: [PolicySpec(kind=PolicyKind.IDENTITY)], min_length=1)
    # "deviation" sorts `graded` by deviation; "as_listed" keeps the given order, so repeated policies are allowed
    grading: Literal["deviation", "as_listed"] = "deviation"
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    objective: ObjectiveConfig = Field(default_factory=ObjectiveConfig)
    epochs: int = Field(default=1, ge=1)
    batch_size: int = Field(default=64, ge=1)
    seeds: List[int] = Field(default_factory=lambda: [Config.DEFAULT_SEED], min_length=1)
    eval: EvalProtocol = Field(default_factory=EvalProtocol)

    @model_validator(mode="after")
    def _check(self) -> "ExperimentConfig":
        if (self.plan is None) == (self.heap is None):
            raise ValueError("Exactly one of 'plan' or 'heap' must be given")
        if self.heap is not None and self.variant != "pathways":
            raise ValueError("Baseline variants are defined on a 'plan' backbone")
        if self.grading == "deviation":
            try:
                graded = grade_policies(self.graded)
            except AugmentationException as e:
                raise ValueError(e.message)
        else:
            graded = [policy.model_copy(update={"level": level}) for level, policy in enumerate(self.graded, start=1)]
        object.__setattr__(self, "graded", graded)
        if not is_light(graded[0]):
            raise ValueError(f"Level-1 policy {graded[0]} is heavy; the main pathway trains on light views only")

        order = self.heap.k if self.heap is not None else self.plan.k
        if self.variant == "pathways" and len(graded) != order:
            raise ValueError(f"{len(graded)} graded policies but the network has {order} pathways")
        if self.variant == "baseline" and len(graded) != 1:
            logger.warning("Variant 'baseline' trains on level-1 views only; heavier graded policies are ignored")
        return self

    @property
    def order(self) -> int:
        if self.variant != "pathways":
            return 1
        return self.heap.k if self.heap is not None else self.plan.k

    def training_policies(self) -> List[Gradable]:
        """Graded policies whose views are produced for each training batch."""
        if self.variant == "baseline":
            return self.graded[:1]
        return list(self.graded)

    def network_plan(self, num_classes: int) -> NetworkPlan:
        plan = self.plan.build(num_classes)
        return plan if self.variant == "pathways" else plan.baseline()

    def heap_spec(self, num_classes: int) -> HeAPStageSpec:
        return self.heap.build(num_classes, self.dataset.image_size)


def load_experiment(path: str | Path) -> ExperimentConfig:
    try:
        with Path(path).open("r", encoding="utf-8") as handle:
            raw = yaml.safe_load(handle) or {}
    except (OSError, yaml.YAMLError) as e:
        logger.error(f"Cannot read experiment config {path}: {e}")
        raise ConfigurationException(f"Cannot read experiment config: {e}", details={"path": str(path)})
    return parse_experiment(raw, source=str(path))


def parse_experiment(raw: dict, source: str = "<dict>") -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        logger.error(f"Invalid experiment config {source}: {e.error_count()} error(s)")
        raise ConfigurationException("Invalid experiment config",
                                     details={"source": source, "errors": e.errors(include_url=False)})
    except BaseAPNetException as e:
        raise ConfigurationException(e.message, details={"source": source, **e.details})
    logger.info(f"Loaded experiment '{cfg.name}' ({cfg.variant}, order {cfg.order}) from {source}")
    return cfg


def build_network(cfg: ExperimentConfig, num_classes: int) -> Tuple[nn.Module, NetworkPlan | HeAPStageSpec]:
    if cfg.heap is not None:
        spec = cfg.heap_spec(num_classes)
        return HeAPNetwork(spec), spec
    plan = cfg.network_plan(num_classes)
    return surgerize(plan), plan
