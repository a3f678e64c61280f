from dataclasses import dataclass
from typing import Dict, List, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.apconv.accounting import count_parameters
from src.apconv.conversion import from_standard, load_pathway_weights
from src.apconv.layers import APConv2d, LevelBatchNorm2d
from src.apconv.spec import channels_from_split
from src.augment.views import ViewBatch
from src.surgery.blocks import FeatureRecord, Stem, build_stage
from src.surgery.plan import NetworkPlan
from src.utils.exceptions import RoutingException, SurgeryException
from src.utils.logger import get_logger

logger = get_logger(__name__)

# one entry per AP convolution (network order): level -> pathway outputs c^level..c^k
PathwayFeatures = List[Dict[int, List[torch.Tensor]]]


@dataclass
class TrainForward:
    logits: List[torch.Tensor]
    pathway_features: PathwayFeatures


class PathwayNetwork(nn.Module):
    """Residual backbone whose tail stages are pathway stages, with one classification head per view level.

    Stages before the first pathway stage are standard and shared by every level. At the
    boundary a level-j view keeps only the trailing m^(j) channels of the shared map.
    """

    def __init__(self, plan: NetworkPlan):
        super().__init__()
        self.plan = plan
        backbone = plan.backbone
        self.k = plan.k
        self.stem = Stem(backbone.in_channels, backbone.stem)

        pathway_stages = set(plan.pathway_stages)
        self.stages = nn.ModuleList()
        channels = backbone.stem.out_channels
        for index, stage in enumerate(backbone.stages):
            self.stages.append(build_stage(plan, stage, channels, pathways=index in pathway_stages))
            channels = stage.width

        self.first_pathway_stage = plan.first_pathway_stage
        boundary = plan.stage_in_channels(self.first_pathway_stage) if self.k > 1 else channels
        self.boundary_channels = self._level_counts(boundary)
        self.head_dims = plan.head_dims()
        self.heads = nn.ModuleList(nn.Linear(dim, backbone.num_classes) for dim in self.head_dims)

    def _level_counts(self, channels: int) -> Tuple[int, ...]:
        if self.k == 1:
            return (channels,)
        return channels_from_split(channels, self.plan.level_split)

    @property
    def num_classes(self) -> int:
        return self.plan.backbone.num_classes

    def ap_layers(self) -> List[Tuple[str, APConv2d]]:
        return [(name, module) for name, module in self.named_modules() if isinstance(module, APConv2d)]

    def forward_level(self, x: torch.Tensor, level: int = 1, record: FeatureRecord | None = None) -> torch.Tensor:
        if not 1 <= level <= self.k:
            raise RoutingException("Level out of range", details={"level": level, "k": self.k})
        if x.dim() != 4 or x.shape[1] != self.plan.backbone.in_channels:
            raise RoutingException("Expected a (B, C, H, W) image batch",
                                   details={"shape": tuple(x.shape), "in_channels": self.plan.backbone.in_channels})
        out = self.stem(x)
        for index, stage in enumerate(self.stages):
            if index < self.first_pathway_stage:
                for block in stage:
                    out = block(out)
                continue
            if index == self.first_pathway_stage:
                keep = self.boundary_channels[level - 1]
                out = out[:, out.shape[1] - keep:]
            for block in stage:
                out = block(out, level, record)
        pooled = torch.flatten(F.adaptive_avg_pool2d(out, 1), 1)
        return self.heads[level - 1](pooled)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward_level(x, 1)

    def forward_train(self, batch: ViewBatch) -> TrainForward:
        if batch.num_levels != self.k:
            raise RoutingException("View batch levels do not match the network order",
                                   details={"levels": batch.num_levels, "k": self.k})
        record: FeatureRecord = {}
        logits = [self.forward_level(batch.level(level), level, record) for level in range(1, self.k + 1)]
        features = [record.get(module, {}) for _, module in self.ap_layers()]
        return TrainForward(logits=logits, pathway_features=features)

    @torch.no_grad()
    def infer(self, images: torch.Tensor) -> torch.Tensor:
        """Class distribution from the main pathway and head 1 only, with eval-mode statistics."""
        was_training = self.training
        self.eval()
        try:
            single = images.dim() == 3
            logits = self.forward_level(images.unsqueeze(0) if single else images, 1)
            probs = F.softmax(logits, dim=1)
            return probs[0] if single else probs
        finally:
            self.train(was_training)

    def parameter_count(self) -> int:
        return count_parameters(self)

    def inference_parameter_count(self) -> int:
        """Parameters reachable from the level-1 path (heads 2..K excluded)."""
        return count_parameters(self, exclude=lambda name: name.startswith("heads.") and not name.startswith("heads.0."))

    @torch.no_grad()
    def load_standard_weights(self, standard: "PathwayNetwork") -> "PathwayNetwork":
        """Initialise from a k=1 network of the same backbone (finetuning a standard CNN into pathway form)."""
        if standard.k != 1 or standard.plan.backbone != self.plan.backbone:
            raise SurgeryException("Weights can only be transferred from a standard network of the same backbone")
        source = dict(standard.named_modules())
        transferred = 0
        for name, module in self.named_modules():
            donor = source.get(name)
            if isinstance(module, APConv2d) and isinstance(donor, nn.Conv2d):
                load_pathway_weights(module, from_standard(donor.weight, donor.bias, module.spec))
            elif isinstance(module, LevelBatchNorm2d) and isinstance(donor, nn.BatchNorm2d):
                module.weight.copy_(donor.weight)
                module.bias.copy_(donor.bias)
                for level, features in enumerate(module.level_features, start=1):
                    mean, var = module.running_stats(level)
                    mean.copy_(donor.running_mean[-features:])
                    var.copy_(donor.running_var[-features:])
            elif isinstance(module, (nn.Conv2d, nn.BatchNorm2d)) and type(donor) is type(module):
                module.load_state_dict(donor.state_dict())
            else:
                continue
            transferred += 1
        donor_head = standard.heads[0]
        for head, dim in zip(self.heads, self.head_dims):
            head.weight.copy_(donor_head.weight[:, -dim:])
            head.bias.copy_(donor_head.bias)
        logger.info(f"Transferred {transferred} layers and {len(self.heads)} heads from the standard network")
        return self


def surgerize(plan: NetworkPlan) -> PathwayNetwork:
    """Build the network of `plan`: standard lower stages, order-k pathway tail stages, k heads."""
    net = PathwayNetwork(plan)
    logger.info(
        f"Built network k={plan.k}, pathway stages={plan.pathway_stages}, "
        f"{len(net.ap_layers())} AP convolutions, {net.inference_parameter_count()} inference parameters"
    )
    return net


def forward_train(net: PathwayNetwork, batch: ViewBatch) -> TrainForward:
    return net.forward_train(batch)


def infer(net: PathwayNetwork, images: torch.Tensor) -> torch.Tensor:
    return net.infer(images)
