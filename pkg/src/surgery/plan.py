from dataclasses import dataclass
from typing import Iterator, List, Literal, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.apconv.accounting import mac_count, param_count, standard_mac_count, standard_param_count
from src.apconv.spec import APConvSpec, channels_from_split, default_split
from src.utils.exceptions import PathwaySpecException, SurgeryException

BOTTLENECK_EXPANSION = 4


class StemSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    out_channels: int = Field(gt=0)
    kernel: int = Field(default=3, gt=0)
    stride: int = Field(default=1, gt=0)
    max_pool: bool = False

    @property
    def padding(self) -> int:
        return self.kernel // 2


class StageSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    block: Literal["basic", "bottleneck"] = "basic"
    blocks: int = Field(gt=0)
    width: int = Field(gt=0)
    stride: int = Field(default=1, gt=0)

    @property
    def mid_width(self) -> int:
        return self.width // BOTTLENECK_EXPANSION if self.block == "bottleneck" else self.width


class BackboneSpec(BaseModel):
    """Stem plus an ordered list of residual stages."""

    model_config = ConfigDict(frozen=True)

    in_channels: int = 3
    num_classes: int = Field(gt=1)
    stem: StemSpec
    stages: List[StageSpec] = Field(min_length=1)

    @model_validator(mode="after")
    def _check_bottlenecks(self) -> "BackboneSpec":
        for index, stage in enumerate(self.stages):
            if stage.block == "bottleneck" and stage.width % BOTTLENECK_EXPANSION:
                raise SurgeryException("Bottleneck stage width must be divisible by 4",
                                       details={"stage": index, "width": stage.width})
        return self

    @property
    def classifier_dim(self) -> int:
        return self.stages[-1].width


class NetworkPlan(BaseModel):
    """Backbone plus the surgery directive: which tail stages become order-k pathway stages."""

    model_config = ConfigDict(frozen=True)

    backbone: BackboneSpec
    k: int = Field(default=2, ge=1)
    replace_stages: List[int] | None = None
    split: List[float] | None = None
    # False removes every connection between pathways (block-diagonal routing)
    cross_pathway: bool = True

    @model_validator(mode="after")
    def _check(self) -> "NetworkPlan":
        num_stages = len(self.backbone.stages)
        if self.k == 1:
            return self
        stages = self.pathway_stages
        if not stages or any(s < 0 or s >= num_stages for s in stages):
            raise SurgeryException("replace_stages must name existing stages", details={"replace_stages": stages})
        if stages != list(range(num_stages - len(stages), num_stages)):
            raise SurgeryException("Replaced stages must be contiguous at the network tail",
                                   details={"replace_stages": stages, "num_stages": num_stages})
        split = self.level_split
        if len(split) != self.k or split[0] != 1.0 or any(a <= b for a, b in zip(split, split[1:])) or split[-1] <= 0:
            raise SurgeryException("split must be k strictly decreasing cumulative shares starting at 1.0",
                                   details={"split": split, "k": self.k})
        try:
            for stage_index in stages:
                stage = self.backbone.stages[stage_index]
                channels_from_split(stage.width, split)
                channels_from_split(stage.mid_width, split)
            channels_from_split(self.stage_in_channels(stages[0]), split)
        except PathwaySpecException as e:
            raise SurgeryException(f"Split produces an invalid partition: {e.message}", details=e.details)
        return self

    @property
    def pathway_stages(self) -> List[int]:
        if self.k == 1:
            return []
        if self.replace_stages is None:
            return [len(self.backbone.stages) - 1]
        return sorted(self.replace_stages)

    def stage_in_channels(self, stage_index: int) -> int:
        if stage_index == 0:
            return self.backbone.stem.out_channels
        return self.backbone.stages[stage_index - 1].width

    @property
    def level_split(self) -> List[float]:
        return list(self.split) if self.split is not None else list(default_split(self.k))

    @property
    def first_pathway_stage(self) -> int:
        stages = self.pathway_stages
        return stages[0] if stages else len(self.backbone.stages)

    def head_dims(self) -> Tuple[int, ...]:
        width = self.backbone.classifier_dim
        if self.k == 1:
            return (width,)
        return channels_from_split(width, self.level_split)

    def baseline(self) -> "NetworkPlan":
        return NetworkPlan(backbone=self.backbone, k=1)


@dataclass(frozen=True)
class ConvDescriptor:
    name: str
    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    padding: int
    in_spatial: Tuple[int, int]
    spec: APConvSpec | None

    @property
    def out_spatial(self) -> Tuple[int, int]:
        h, w = self.in_spatial
        return ((h + 2 * self.padding - self.kernel) // self.stride + 1,
                (w + 2 * self.padding - self.kernel) // self.stride + 1)

    @property
    def params(self) -> int:
        if self.spec is not None:
            return param_count(self.spec)[0]
        return standard_param_count(self.in_channels, self.out_channels, (self.kernel, self.kernel), False)

    @property
    def delta(self) -> int:
        return param_count(self.spec)[1] if self.spec is not None else 0

    @property
    def macs(self) -> int:
        if self.spec is not None:
            return mac_count(self.spec, self.in_spatial)
        return standard_mac_count(self.in_channels, self.out_channels, (self.kernel, self.kernel), self.out_spatial)


def _spec(plan: NetworkPlan, in_channels: int, out_channels: int, kernel: int, stride: int, padding: int) -> APConvSpec:
    return APConvSpec.from_split(in_channels, out_channels, plan.k, kernel=kernel, stride=stride,
                                 padding=padding, bias=False, split=plan.level_split,
                                 cross_pathway=plan.cross_pathway)


def iter_convolutions(plan: NetworkPlan, image_size: Tuple[int, int]) -> Iterator[ConvDescriptor]:
    """Every convolution of the planned network in forward order, with its input spatial size.

    Names match the module names of the built network (`stages.<i>.<b>.<conv>`).
    """
    backbone = plan.backbone
    stem = backbone.stem
    descriptor = ConvDescriptor("stem.conv", backbone.in_channels, stem.out_channels, stem.kernel,
                                stem.stride, stem.padding, image_size, None)
    yield descriptor
    spatial = descriptor.out_spatial
    if stem.max_pool:
        spatial = ((spatial[0] + 2 - 3) // 2 + 1, (spatial[1] + 2 - 3) // 2 + 1)

    channels = stem.out_channels
    pathway_stages = set(plan.pathway_stages)
    for stage_index, stage in enumerate(backbone.stages):
        is_ap = stage_index in pathway_stages
        for block_index in range(stage.blocks):
            stride = stage.stride if block_index == 0 else 1
            prefix = f"stages.{stage_index}.{block_index}"
            if stage.block == "basic":
                layers = [("conv1", channels, stage.width, 3, stride, 1),
                          ("conv2", stage.width, stage.width, 3, 1, 1)]
            else:
                mid = stage.mid_width
                layers = [("conv1", channels, mid, 1, 1, 0),
                          ("conv2", mid, mid, 3, stride, 1),
                          ("conv3", mid, stage.width, 1, 1, 0)]
            if stride != 1 or channels != stage.width:
                layers.append(("shortcut.conv", channels, stage.width, 1, stride, 0))

            block_in = spatial
            for name, c_in, c_out, kernel, s, pad in layers:
                in_spatial = block_in if name in ("conv1", "shortcut.conv") else spatial
                spec = _spec(plan, c_in, c_out, kernel, s, pad) if is_ap else None
                descriptor = ConvDescriptor(f"{prefix}.{name}", c_in, c_out, kernel, s, pad, in_spatial, spec)
                yield descriptor
                if name != "shortcut.conv":
                    spatial = descriptor.out_spatial
            channels = stage.width


@dataclass(frozen=True)
class PlanAccounting:
    """Integer parameter and MAC accounting of a plan and of its standard baseline."""

    total_params: int
    inference_params: int
    baseline_params: int
    delta: int
    macs: int
    baseline_macs: int
    ap_layers: int


def account(plan: NetworkPlan, image_size: Tuple[int, int]) -> PlanAccounting:
    convs = list(iter_convolutions(plan, image_size))
    conv_params = sum(d.params for d in convs)
    baseline_conv_params = sum(standard_param_count(d.in_channels, d.out_channels, (d.kernel, d.kernel), False) for d in convs)
    # each convolution is followed by a normalisation with one affine pair per channel
    norm_params = sum(2 * d.out_channels for d in convs)

    num_classes = plan.backbone.num_classes
    head_dims = plan.head_dims()
    heads = [dim * num_classes + num_classes for dim in head_dims]
    baseline_head = plan.backbone.classifier_dim * num_classes + num_classes

    total = conv_params + norm_params + sum(heads)
    inference = conv_params + norm_params + heads[0]
    baseline = baseline_conv_params + norm_params + baseline_head
    macs = sum(d.macs for d in convs) + head_dims[0] * num_classes
    baseline_macs = sum(standard_mac_count(d.in_channels, d.out_channels, (d.kernel, d.kernel), d.out_spatial)
                        for d in convs) + plan.backbone.classifier_dim * num_classes
    return PlanAccounting(
        total_params=total,
        inference_params=inference,
        baseline_params=baseline,
        delta=sum(d.delta for d in convs),
        macs=macs,
        baseline_macs=baseline_macs,
        ap_layers=sum(1 for d in convs if d.spec is not None),
    )


def resnet50_backbone(num_classes: int = 1000) -> BackboneSpec:
    return BackboneSpec(
        num_classes=num_classes,
        stem=StemSpec(out_channels=64, kernel=7, stride=2, max_pool=True),
        stages=[
            StageSpec(block="bottleneck", blocks=3, width=256, stride=1),
            StageSpec(block="bottleneck", blocks=4, width=512, stride=2),
            StageSpec(block="bottleneck", blocks=6, width=1024, stride=2),
            StageSpec(block="bottleneck", blocks=3, width=2048, stride=2),
        ],
    )


def small_resnet_backbone(num_classes: int = 10, widths: Tuple[int, ...] = (16, 32, 64), blocks: int = 2) -> BackboneSpec:
    """CIFAR-style residual backbone for 32x32 inputs."""
    return BackboneSpec(
        num_classes=num_classes,
        stem=StemSpec(out_channels=widths[0], kernel=3, stride=1),
        stages=[StageSpec(block="basic", blocks=blocks, width=width, stride=1 if i == 0 else 2)
                for i, width in enumerate(widths)],
    )
