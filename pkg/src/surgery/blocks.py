from typing import Dict, List

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.apconv.layers import APConv2d, LevelBatchNorm2d
from src.apconv.spec import APConvSpec
from src.surgery.plan import NetworkPlan, StageSpec, StemSpec

# per AP convolution: level -> pathway outputs on that level's view
FeatureRecord = Dict[APConv2d, Dict[int, List[torch.Tensor]]]


def _ap_conv(conv: APConv2d, x: torch.Tensor, level: int, record: FeatureRecord | None) -> torch.Tensor:
    outputs = conv.forward_pathways(x, level)
    if record is not None:
        record.setdefault(conv, {})[level] = outputs
    return torch.cat(outputs, dim=1)


class Stem(nn.Module):
    def __init__(self, in_channels: int, spec: StemSpec):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, spec.out_channels, spec.kernel, stride=spec.stride,
                              padding=spec.padding, bias=False)
        self.norm = nn.BatchNorm2d(spec.out_channels)
        self.pool = nn.MaxPool2d(3, stride=2, padding=1) if spec.max_pool else nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.pool(F.relu(self.norm(self.conv(x))))


class Shortcut(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False)
        self.norm = nn.BatchNorm2d(out_channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.norm(self.conv(x))


class BasicBlock(nn.Module):
    def __init__(self, in_channels: int, width: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, width, 3, stride=stride, padding=1, bias=False)
        self.norm1 = nn.BatchNorm2d(width)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1, bias=False)
        self.norm2 = nn.BatchNorm2d(width)
        self.shortcut = Shortcut(in_channels, width, stride) if stride != 1 or in_channels != width else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        identity = x if self.shortcut is None else self.shortcut(x)
        return F.relu(out + identity)


class Bottleneck(nn.Module):
    def __init__(self, in_channels: int, width: int, mid_width: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, mid_width, 1, bias=False)
        self.norm1 = nn.BatchNorm2d(mid_width)
        self.conv2 = nn.Conv2d(mid_width, mid_width, 3, stride=stride, padding=1, bias=False)
        self.norm2 = nn.BatchNorm2d(mid_width)
        self.conv3 = nn.Conv2d(mid_width, width, 1, bias=False)
        self.norm3 = nn.BatchNorm2d(width)
        self.shortcut = Shortcut(in_channels, width, stride) if stride != 1 or in_channels != width else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.norm1(self.conv1(x)))
        out = F.relu(self.norm2(self.conv2(out)))
        out = self.norm3(self.conv3(out))
        identity = x if self.shortcut is None else self.shortcut(x)
        return F.relu(out + identity)


class APShortcut(nn.Module):
    def __init__(self, spec: APConvSpec):
        super().__init__()
        self.conv = APConv2d(spec)
        self.norm = LevelBatchNorm2d(spec.pathway_out)

    def forward(self, x: torch.Tensor, level: int, record: FeatureRecord | None = None) -> torch.Tensor:
        return self.norm(_ap_conv(self.conv, x, level, record), level)


class APBasicBlock(nn.Module):
    """Basic residual block whose convolutions, norms and shortcut are all partitioned with one split."""

    def __init__(self, plan: NetworkPlan, in_channels: int, width: int, stride: int):
        super().__init__()
        options = {"split": plan.level_split, "cross_pathway": plan.cross_pathway}
        spec1 = APConvSpec.from_split(in_channels, width, plan.k, kernel=3, stride=stride, padding=1, **options)
        spec2 = APConvSpec.from_split(width, width, plan.k, kernel=3, stride=1, padding=1, **options)
        self.conv1 = APConv2d(spec1)
        self.norm1 = LevelBatchNorm2d(spec1.pathway_out)
        self.conv2 = APConv2d(spec2)
        self.norm2 = LevelBatchNorm2d(spec2.pathway_out)
        self.shortcut = None
        if stride != 1 or in_channels != width:
            self.shortcut = APShortcut(APConvSpec.from_split(in_channels, width, plan.k, kernel=1, stride=stride,
                                                             **options))

    def forward(self, x: torch.Tensor, level: int = 1, record: FeatureRecord | None = None) -> torch.Tensor:
        out = F.relu(self.norm1(_ap_conv(self.conv1, x, level, record), level))
        out = self.norm2(_ap_conv(self.conv2, out, level, record), level)
        identity = x if self.shortcut is None else self.shortcut(x, level, record)
        return F.relu(out + identity)


class APBottleneck(nn.Module):
    def __init__(self, plan: NetworkPlan, in_channels: int, width: int, mid_width: int, stride: int):
        super().__init__()
        options = {"split": plan.level_split, "cross_pathway": plan.cross_pathway}
        spec1 = APConvSpec.from_split(in_channels, mid_width, plan.k, kernel=1, **options)
        spec2 = APConvSpec.from_split(mid_width, mid_width, plan.k, kernel=3, stride=stride, padding=1, **options)
        spec3 = APConvSpec.from_split(mid_width, width, plan.k, kernel=1, **options)
        self.conv1 = APConv2d(spec1)
        self.norm1 = LevelBatchNorm2d(spec1.pathway_out)
        self.conv2 = APConv2d(spec2)
        self.norm2 = LevelBatchNorm2d(spec2.pathway_out)
        self.conv3 = APConv2d(spec3)
        self.norm3 = LevelBatchNorm2d(spec3.pathway_out)
        self.shortcut = None
        if stride != 1 or in_channels != width:
            self.shortcut = APShortcut(APConvSpec.from_split(in_channels, width, plan.k, kernel=1, stride=stride,
                                                             **options))

    def forward(self, x: torch.Tensor, level: int = 1, record: FeatureRecord | None = None) -> torch.Tensor:
        out = F.relu(self.norm1(_ap_conv(self.conv1, x, level, record), level))
        out = F.relu(self.norm2(_ap_conv(self.conv2, out, level, record), level))
        out = self.norm3(_ap_conv(self.conv3, out, level, record), level)
        identity = x if self.shortcut is None else self.shortcut(x, level, record)
        return F.relu(out + identity)


def build_stage(plan: NetworkPlan, stage: StageSpec, in_channels: int, pathways: bool) -> nn.ModuleList:
    blocks = nn.ModuleList()
    channels = in_channels
    for index in range(stage.blocks):
        stride = stage.stride if index == 0 else 1
        if stage.block == "basic":
            block = APBasicBlock(plan, channels, stage.width, stride) if pathways else BasicBlock(channels, stage.width, stride)
        elif pathways:
            block = APBottleneck(plan, channels, stage.width, stage.mid_width, stride)
        else:
            block = Bottleneck(channels, stage.width, stage.mid_width, stride)
        blocks.append(block)
        channels = stage.width
    return blocks
