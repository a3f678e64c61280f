from typing import List, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.apconv.spec import APConvSpec
from src.utils.exceptions import PathwaySpecException, RoutingException


def _check_level(level: int, k: int) -> None:
    if not 1 <= level <= k:
        raise RoutingException("Level out of range", details={"level": level, "k": k})


class APConv2d(nn.Module):
    """Pathway convolution made of k sub-convolutions with nested channel routing.

    A level-j input holds the trailing pathway_in[j] channels of the full map; its
    output is the concatenation of sub-convolutions j..k and has pathway_out[j] channels.
    Each sub-convolution is a plain nn.Conv2d, so it owns its weight and bias and gets
    the usual fan-in scaled uniform initialisation over its own input width.
    """

    def __init__(self, spec: APConvSpec):
        super().__init__()
        self.spec = spec
        self.pathways = nn.ModuleList(
            nn.Conv2d(
                spec.sub_in_channels[i],
                spec.sub_out_channels[i],
                kernel_size=spec.kernel,
                stride=spec.stride,
                padding=spec.padding,
                bias=spec.bias,
            )
            for i in range(spec.k)
        )

    @property
    def k(self) -> int:
        return self.spec.k

    def forward_pathways(self, x: torch.Tensor, level: int = 1) -> List[torch.Tensor]:
        """Outputs of sub-convolutions level..k (pre-activation), in channel order."""
        _check_level(level, self.spec.k)
        expected = self.spec.in_channels_at(level)
        if x.dim() != 4 or x.shape[1] != expected:
            raise RoutingException(
                "Input channels do not match the level",
                details={"level": level, "expected": expected, "shape": tuple(x.shape)},
            )
        # a level-j map is the trailing slice of the full map starting at `offset`
        offset = self.spec.in_channels - expected
        outputs = []
        for pathway in range(level, self.spec.k + 1):
            start, stop = self.spec.input_block(pathway)
            outputs.append(self.pathways[pathway - 1](x[:, start - offset:stop - offset]))
        return outputs

    def forward(self, x: torch.Tensor, level: int = 1) -> torch.Tensor:
        return torch.cat(self.forward_pathways(x, level), dim=1)

    def extra_repr(self) -> str:
        return (f"k={self.spec.k}, pathway_in={self.spec.pathway_in}, pathway_out={self.spec.pathway_out}, "
                f"cross_pathway={self.spec.cross_pathway}")


class LevelBatchNorm2d(nn.Module):
    """Batch norm over nested level maps: one affine set, separate running statistics per level.

    The level-j map uses the trailing pathway_out[j] affine entries and its own running
    mean/var; eval-mode inference on level 1 therefore only sees light-view statistics.
    """

    def __init__(self, level_features: Sequence[int], eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.level_features = tuple(int(c) for c in level_features)
        if any(a <= b for a, b in zip(self.level_features, self.level_features[1:])):
            raise PathwaySpecException("Level feature counts must be strictly decreasing",
                                       details={"level_features": self.level_features})
        self.num_features = self.level_features[0]
        self.eps = eps
        self.momentum = momentum
        self.weight = nn.Parameter(torch.ones(self.num_features))
        self.bias = nn.Parameter(torch.zeros(self.num_features))
        for level, features in enumerate(self.level_features, start=1):
            self.register_buffer(f"running_mean_{level}", torch.zeros(features))
            self.register_buffer(f"running_var_{level}", torch.ones(features))

    def running_stats(self, level: int) -> tuple[torch.Tensor, torch.Tensor]:
        return getattr(self, f"running_mean_{level}"), getattr(self, f"running_var_{level}")

    def forward(self, x: torch.Tensor, level: int = 1) -> torch.Tensor:
        _check_level(level, len(self.level_features))
        features = self.level_features[level - 1]
        if x.shape[1] != features:
            raise RoutingException("Normalisation input does not match the level",
                                   details={"level": level, "expected": features, "shape": tuple(x.shape)})
        mean, var = self.running_stats(level)
        return F.batch_norm(
            x,
            mean,
            var,
            self.weight[self.num_features - features:],
            self.bias[self.num_features - features:],
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )

    def extra_repr(self) -> str:
        return f"level_features={self.level_features}, eps={self.eps}, momentum={self.momentum}"
