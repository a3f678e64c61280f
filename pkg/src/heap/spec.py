import math
from typing import List

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.utils.exceptions import HeAPException


class HeAPPathwaySpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    scale: float = Field(gt=0)
    width: int = Field(gt=0)
    blocks: int = Field(default=1, gt=0)


class HeAPStageSpec(BaseModel):
    """Heterogeneous pathways: pathway j runs at image_size * scale_j with width w_j.

    Heavier pathways run at higher resolution; scale ratios are powers of two so that
    fusion can zoom heavier maps out with repeated stride-2 convolutions. `fusion[j]`
    lists (1-based) the heavier pathways concatenated into pathway j, all heavier by default.
    """

    model_config = ConfigDict(frozen=True)

    in_channels: int = 3
    num_classes: int = Field(gt=1)
    image_size: int = Field(gt=0)
    pathways: List[HeAPPathwaySpec] = Field(min_length=1)
    fusion: List[List[int]] | None = None

    @model_validator(mode="after")
    def _check(self) -> "HeAPStageSpec":
        scales = [p.scale for p in self.pathways]
        if any(a >= b for a, b in zip(scales, scales[1:])):
            raise HeAPException("Pathway scales must strictly increase from the main pathway", details={"scales": scales})
        for index, scale in enumerate(scales, start=1):
            size = self.image_size * scale
            if not float(size).is_integer():
                raise HeAPException("image_size * scale must be an integer", details={"pathway": index, "size": size})
            ratio = scale / scales[0]
            if not float(math.log2(ratio)).is_integer():
                raise HeAPException("Scale ratios must be powers of two", details={"pathway": index, "ratio": ratio})
        if self.fusion is not None:
            if len(self.fusion) != len(self.pathways):
                raise HeAPException("fusion needs one entry per pathway", details={"fusion": self.fusion})
            for j, sources in enumerate(self.fusion, start=1):
                if any(i <= j or i > len(self.pathways) for i in sources) or len(set(sources)) != len(sources):
                    raise HeAPException("A pathway may only fuse distinct heavier pathways",
                                        details={"pathway": j, "sources": sources})
        return self

    @property
    def k(self) -> int:
        return len(self.pathways)

    def resolution(self, pathway: int) -> int:
        return int(self.image_size * self.pathways[pathway - 1].scale)

    def sources(self, pathway: int) -> List[int]:
        if self.fusion is not None:
            return sorted(self.fusion[pathway - 1])
        return list(range(pathway + 1, self.k + 1))

    def downsample_steps(self, source: int, target: int) -> int:
        return int(round(math.log2(self.resolution(source) / self.resolution(target))))

    def fused_channels(self, pathway: int) -> int:
        return self.pathways[pathway - 1].width + sum(self.pathways[i - 1].width for i in self.sources(pathway))


def _basic_block_params(in_channels: int, width: int) -> int:
    params = 9 * in_channels * width + 2 * width + 9 * width * width + 2 * width
    if in_channels != width:
        params += in_channels * width + 2 * width
    return params


def _pathway_params(spec: HeAPStageSpec, pathway: int, fused: int, resamplers: int) -> int:
    p = spec.pathways[pathway - 1]
    params = 9 * spec.in_channels * p.width + 2 * p.width
    params += resamplers
    params += _basic_block_params(fused, p.width) + (p.blocks - 1) * _basic_block_params(p.width, p.width)
    params += p.width * spec.num_classes + spec.num_classes
    return params


def heap_param_count(spec: HeAPStageSpec) -> int:
    """Learnable parameters of the stage as built (all heads included)."""
    total = 0
    for j in range(1, spec.k + 1):
        downsamplers = sum(spec.downsample_steps(i, j) * (4 * spec.pathways[i - 1].width ** 2 + spec.pathways[i - 1].width)
                           for i in spec.sources(j))
        total += _pathway_params(spec, j, spec.fused_channels(j), downsamplers)
    return total


def full_exchange_param_count(spec: HeAPStageSpec) -> int:
    """Equal-width multi-branch baseline in which every pathway also receives every lighter pathway.

    Lighter maps are brought up by a 1x1 convolution (with bias) and interpolation, as in
    multi-resolution exchange networks.
    """
    total = 0
    for j in range(1, spec.k + 1):
        width_j = spec.pathways[j - 1].width
        resamplers, fused = 0, width_j
        for i in range(1, spec.k + 1):
            if i == j:
                continue
            width_i = spec.pathways[i - 1].width
            fused += width_i
            if i > j:
                resamplers += spec.downsample_steps(i, j) * (4 * width_i ** 2 + width_i)
            else:
                resamplers += width_i ** 2 + width_i
        total += _pathway_params(spec, j, fused, resamplers)
    return total
