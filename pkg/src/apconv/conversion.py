"""Block mapping between a standard convolution and its pathway form.

Weights use torch layout (out_channels, in_channels, h, w). Sub-convolution j takes
rows output_block(j) and columns input_block(j) (the trailing pathway_in[j] input
channels, or only pathway j's own channels when pathways are isolated) of the
standard tensor; every other entry has no pathway counterpart and is dropped. The
mapping is injective, so embedding back into zeros restores exactly the retained blocks.
"""
from typing import List, Tuple

import torch
import torch.nn as nn

from src.apconv.layers import APConv2d
from src.apconv.spec import APConvSpec
from src.utils.exceptions import PathwaySpecException

PathwayWeights = List[Tuple[torch.Tensor, torch.Tensor | None]]


def _check_shape(weight: torch.Tensor, spec: APConvSpec) -> None:
    expected = (spec.out_channels, spec.in_channels, *spec.kernel)
    if tuple(weight.shape) != expected:
        raise PathwaySpecException("Standard weight shape does not match the pathway layout",
                                   details={"expected": expected, "actual": tuple(weight.shape)})


def structural_mask(spec: APConvSpec, dtype: torch.dtype = torch.bool) -> torch.Tensor:
    """(out, in) mask of the standard weight entries that some sub-convolution keeps."""
    mask = torch.zeros(spec.out_channels, spec.in_channels, dtype=dtype)
    for pathway in range(1, spec.k + 1):
        row_start, row_stop = spec.output_block(pathway)
        col_start, col_stop = spec.input_block(pathway)
        mask[row_start:row_stop, col_start:col_stop] = 1
    return mask


def from_standard(weight: torch.Tensor, bias: torch.Tensor | None, spec: APConvSpec) -> PathwayWeights:
    _check_shape(weight, spec)
    if spec.bias and bias is None:
        raise PathwaySpecException("Spec has bias but the standard convolution does not")
    blocks: PathwayWeights = []
    for pathway in range(1, spec.k + 1):
        row_start, row_stop = spec.output_block(pathway)
        col_start, col_stop = spec.input_block(pathway)
        sub_weight = weight[row_start:row_stop, col_start:col_stop].detach().clone()
        sub_bias = bias[row_start:row_stop].detach().clone() if spec.bias else None
        blocks.append((sub_weight, sub_bias))
    return blocks


def to_standard(blocks: PathwayWeights, spec: APConvSpec) -> Tuple[torch.Tensor, torch.Tensor | None]:
    """Embed pathway weights into a zero-initialised standard weight (and bias)."""
    reference = blocks[0][0]
    weight = reference.new_zeros(spec.out_channels, spec.in_channels, *spec.kernel)
    bias = reference.new_zeros(spec.out_channels) if spec.bias else None
    for pathway, (sub_weight, sub_bias) in enumerate(blocks, start=1):
        row_start, row_stop = spec.output_block(pathway)
        col_start, col_stop = spec.input_block(pathway)
        weight[row_start:row_stop, col_start:col_stop] = sub_weight
        if bias is not None:
            bias[row_start:row_stop] = sub_bias
    return weight, bias


def pathway_weights(layer: APConv2d) -> PathwayWeights:
    return [(conv.weight.detach().clone(), conv.bias.detach().clone() if conv.bias is not None else None)
            for conv in layer.pathways]


@torch.no_grad()
def load_pathway_weights(layer: APConv2d, blocks: PathwayWeights) -> APConv2d:
    for conv, (sub_weight, sub_bias) in zip(layer.pathways, blocks):
        conv.weight.copy_(sub_weight)
        if conv.bias is not None:
            conv.bias.copy_(sub_bias)
    return layer


def ap_conv_from_conv2d(conv: nn.Conv2d, spec: APConvSpec) -> APConv2d:
    if conv.groups != 1 or conv.dilation != (1, 1):
        raise PathwaySpecException("Only dense, undilated convolutions can be converted")
    layer = APConv2d(spec).to(device=conv.weight.device, dtype=conv.weight.dtype)
    return load_pathway_weights(layer, from_standard(conv.weight, conv.bias, spec))


def dense_equivalent(layer: APConv2d) -> nn.Conv2d:
    """Standard convolution whose structurally dropped entries are zero; equals the level-1 forward."""
    spec = layer.spec
    weight, bias = to_standard(pathway_weights(layer), spec)
    conv = nn.Conv2d(spec.in_channels, spec.out_channels, spec.kernel, stride=spec.stride,
                     padding=spec.padding, bias=spec.bias).to(device=weight.device, dtype=weight.dtype)
    with torch.no_grad():
        conv.weight.copy_(weight)
        if bias is not None:
            conv.bias.copy_(bias)
    return conv
