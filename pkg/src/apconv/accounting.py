from typing import Callable, Tuple

import torch
import torch.nn as nn

from src.apconv.spec import APConvSpec


def standard_param_count(in_channels: int, out_channels: int, kernel: Tuple[int, int], bias: bool) -> int:
    return in_channels * out_channels * kernel[0] * kernel[1] + (out_channels if bias else 0)


def param_count(spec: APConvSpec) -> Tuple[int, int]:
    """(total learnable parameters, reduction versus the standard convolution of equal shape)."""
    h, w = spec.kernel
    total = 0
    for m_in, width in zip(spec.sub_in_channels, spec.sub_out_channels):
        total += m_in * h * w * width + (width if spec.bias else 0)
    standard = standard_param_count(spec.in_channels, spec.out_channels, spec.kernel, spec.bias)
    return total, standard - total


def standard_mac_count(in_channels: int, out_channels: int, kernel: Tuple[int, int], out_spatial: Tuple[int, int]) -> int:
    return in_channels * out_channels * kernel[0] * kernel[1] * out_spatial[0] * out_spatial[1]


def mac_count(spec: APConvSpec, spatial: Tuple[int, int]) -> int:
    """Multiply-accumulates of the level-1 forward for an input of `spatial` size (bias adds excluded)."""
    out_h, out_w = spec.output_spatial(spatial)
    h, w = spec.kernel
    return sum(m_in * width * h * w * out_h * out_w for m_in, width in zip(spec.sub_in_channels, spec.sub_out_channels))


def count_parameters(module: nn.Module, exclude: Callable[[str], bool] | None = None) -> int:
    return sum(p.numel() for name, p in module.named_parameters() if exclude is None or not exclude(name))


def count_macs(module: nn.Module, run: Callable[[], object]) -> int:
    """MACs of every Conv2d and Linear executed while `run()` calls into `module`."""
    total = 0

    def conv_hook(layer: nn.Conv2d, inputs, output):
        nonlocal total
        kh, kw = layer.kernel_size
        per_output = (layer.in_channels // layer.groups) * kh * kw
        total += per_output * output.numel() // output.shape[0]

    def linear_hook(layer: nn.Linear, inputs, output):
        nonlocal total
        total += layer.in_features * layer.out_features

    handles = []
    for layer in module.modules():
        if isinstance(layer, nn.Conv2d):
            handles.append(layer.register_forward_hook(conv_hook))
        elif isinstance(layer, nn.Linear):
            handles.append(layer.register_forward_hook(linear_hook))
    try:
        with torch.no_grad():
            run()
    finally:
        for handle in handles:
            handle.remove()
    return total
