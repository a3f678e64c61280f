from src.apconv.accounting import count_macs, count_parameters, mac_count, param_count, standard_mac_count, standard_param_count
from src.apconv.conversion import ap_conv_from_conv2d, dense_equivalent, from_standard, structural_mask, to_standard
from src.apconv.layers import APConv2d, LevelBatchNorm2d
from src.apconv.spec import APConvSpec, channels_from_split, default_split


def forward_level(layer: APConv2d, x, level: int = 1):
    """Level-j forward of a pathway convolution (concatenation of sub-convolutions j..k)."""
    return layer(x, level)


__all__ = [
    "APConv2d",
    "APConvSpec",
    "LevelBatchNorm2d",
    "ap_conv_from_conv2d",
    "channels_from_split",
    "count_macs",
    "count_parameters",
    "default_split",
    "dense_equivalent",
    "forward_level",
    "from_standard",
    "mac_count",
    "param_count",
    "standard_mac_count",
    "standard_param_count",
    "structural_mask",
    "to_standard",
]
