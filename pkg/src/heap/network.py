from typing import Dict, List, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.apconv.accounting import count_parameters
from src.augment.views import ViewBatch
from src.heap.spec import HeAPStageSpec
from src.surgery.blocks import BasicBlock
from src.surgery.network import TrainForward
from src.utils.exceptions import HeAPException
from src.utils.logger import get_logger

logger = get_logger(__name__)


class Downsample(nn.Sequential):
    """Repeated learnable 2x2 stride-2 convolutions that keep the channel count."""

    def __init__(self, channels: int, steps: int):
        super().__init__(*[nn.Conv2d(channels, channels, 2, stride=2, bias=True) for _ in range(steps)])

    @torch.no_grad()
    def init_averaging(self) -> "Downsample":
        for conv in self:
            conv.weight.zero_()
            for c in range(conv.out_channels):
                conv.weight[c, c] = 0.25
            conv.bias.zero_()
        return self


class HeAPPathway(nn.Module):
    def __init__(self, spec: HeAPStageSpec, pathway: int):
        super().__init__()
        width = spec.pathways[pathway - 1].width
        self.stem = nn.Sequential(
            nn.Conv2d(spec.in_channels, width, 3, padding=1, bias=False),
            nn.BatchNorm2d(width),
            nn.ReLU(inplace=True),
        )
        self.sources = spec.sources(pathway)
        self.downsample = nn.ModuleDict({
            str(i): Downsample(spec.pathways[i - 1].width, spec.downsample_steps(i, pathway)).init_averaging()
            for i in self.sources
        })
        channels = spec.fused_channels(pathway)
        blocks = []
        for _ in range(spec.pathways[pathway - 1].blocks):
            blocks.append(BasicBlock(channels, width, 1))
            channels = width
        self.blocks = nn.Sequential(*blocks)
        self.head = nn.Linear(width, spec.num_classes)


class HeAPNetwork(nn.Module):
    """Multi-resolution pathways fused heavier-to-lighter once at stage entry, one head per pathway."""

    def __init__(self, spec: HeAPStageSpec):
        super().__init__()
        self.spec = spec
        self.k = spec.k
        self.pathways = nn.ModuleList(HeAPPathway(spec, j) for j in range(1, spec.k + 1))
        logger.info(f"Built HeAP stage: k={spec.k}, resolutions={[spec.resolution(j) for j in range(1, spec.k + 1)]}")

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes

    def _render(self, images: torch.Tensor, pathway: int) -> torch.Tensor:
        size = self.spec.resolution(pathway)
        if images.shape[-2:] == (size, size):
            return images
        return F.interpolate(images, size=(size, size), mode="bilinear", align_corners=False)

    def _run(self, inputs: Sequence[torch.Tensor], all_heads: bool = True) -> TrainForward:
        """Run pathways heaviest first on per-pathway inputs (index 0 = main).

        Every pathway body runs, since the main pathway fuses the heavier outputs; with
        `all_heads=False` only the main head is evaluated.
        """
        outputs: Dict[int, torch.Tensor] = {}
        features: Dict[int, List[torch.Tensor]] = {}
        for j in range(self.k, 0, -1):
            pathway = self.pathways[j - 1]
            own = pathway.stem(self._render(inputs[j - 1], j))
            zoomed = []
            for i in pathway.sources:
                if i not in outputs:
                    continue
                fused = pathway.downsample[str(i)](outputs[i])
                if fused.shape[-2:] != own.shape[-2:]:
                    raise HeAPException("Resolution mismatch after downsampling",
                                        details={"source": i, "target": j, "shape": tuple(fused.shape)})
                zoomed.append(fused)
            outputs[j] = pathway.blocks(torch.cat([own] + zoomed, dim=1))
            features[j] = [own] + zoomed
        logits = [self.pathways[j - 1].head(torch.flatten(F.adaptive_avg_pool2d(outputs[j], 1), 1))
                  for j in range(1, (self.k if all_heads else 1) + 1)]
        # one fusion "layer": pathway j -> [own features, zoomed-out heavier features]
        return TrainForward(logits=logits, pathway_features=[features])

    def forward_train(self, batch: ViewBatch) -> TrainForward:
        if batch.num_levels != self.k:
            raise HeAPException("View batch levels do not match the pathway count",
                                details={"levels": batch.num_levels, "k": self.k})
        return self._run(batch.views)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        # the single light image feeds every resolution; only the main head is evaluated
        return self._run([images] * self.k, all_heads=False).logits[0]

    @torch.no_grad()
    def infer(self, images: torch.Tensor) -> torch.Tensor:
        was_training = self.training
        self.eval()
        try:
            single = images.dim() == 3
            logits = self.forward(images.unsqueeze(0) if single else images)
            probs = F.softmax(logits, dim=1)
            return probs[0] if single else probs
        finally:
            self.train(was_training)

    def parameter_count(self) -> int:
        return count_parameters(self)

    def inference_parameter_count(self) -> int:
        """Parameters of every pathway plus the main head; heads 2..k are training-only."""
        return count_parameters(self, exclude=lambda name: ".head." in name and not name.startswith("pathways.0."))


def heap_forward_train(net: HeAPNetwork, batch: ViewBatch) -> TrainForward:
    return net.forward_train(batch)


def heap_infer(net: HeAPNetwork, images: torch.Tensor) -> torch.Tensor:
    return net.infer(images)
