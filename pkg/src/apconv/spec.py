from dataclasses import dataclass, field
from typing import Sequence, Tuple

from src.utils.exceptions import PathwaySpecException


def channels_from_split(channels: int, split: Sequence[float]) -> Tuple[int, ...]:
    """Per-level channel counts m^(j) = round(channels * split_j) for cumulative shares split_1 = 1 > ... > split_k > 0."""
    counts = tuple(int(round(channels * share)) for share in split)
    if not counts or counts[0] != channels:
        raise PathwaySpecException("Split must start with the full share 1.0", details={"split": list(split)})
    if any(c <= 0 for c in counts):
        raise PathwaySpecException("Split produces a zero-channel sub-convolution",
                                   details={"channels": channels, "split": list(split), "counts": counts})
    if any(a <= b for a, b in zip(counts, counts[1:])):
        raise PathwaySpecException("Split must give strictly decreasing channel counts",
                                   details={"channels": channels, "split": list(split), "counts": counts})
    return counts


def default_split(k: int) -> Tuple[float, ...]:
    # every sub-convolution gets 1/k of the channels
    return tuple((k - j) / k for j in range(k))


@dataclass(frozen=True)
class APConvSpec:
    """Channel partition of one pathway convolution.

    Layout: the channels shared by the deepest pathways occupy the trailing positions of
    every feature map, so the level-j view of a map is its trailing m^(j) channels.
    Sub-convolution c^j reads the trailing pathway_in[j] input channels and writes
    pathway_out[j] - pathway_out[j+1] output channels. With `cross_pathway=False` it reads
    only the input channels owned by pathway j (the whole input when the input is shared),
    which removes every connection between pathways.
    """

    k: int
    in_channels: int
    out_channels: int
    pathway_in: Tuple[int, ...]
    pathway_out: Tuple[int, ...]
    kernel: Tuple[int, int] = (1, 1)
    stride: int = 1
    padding: int = 0
    bias: bool = False
    cross_pathway: bool = True
    _widths: Tuple[int, ...] = field(init=False, repr=False, compare=False)
    _in_blocks: Tuple[Tuple[int, int], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "pathway_in", tuple(int(c) for c in self.pathway_in))
        object.__setattr__(self, "pathway_out", tuple(int(c) for c in self.pathway_out))
        object.__setattr__(self, "kernel", tuple(int(c) for c in self.kernel))
        details = {"k": self.k, "pathway_in": self.pathway_in, "pathway_out": self.pathway_out}

        if self.k < 2:
            raise PathwaySpecException("A pathway convolution needs k >= 2 pathways", details=details)
        if len(self.pathway_in) != self.k or len(self.pathway_out) != self.k:
            raise PathwaySpecException("pathway_in and pathway_out need one entry per pathway", details=details)
        if self.pathway_in[0] != self.in_channels or self.pathway_out[0] != self.out_channels:
            raise PathwaySpecException("Level-1 channel counts must equal the full channel counts", details=details)
        if any(c <= 0 for c in self.pathway_in + self.pathway_out):
            raise PathwaySpecException("Channel counts must be positive", details=details)
        # equal input counts mean a layer fed by a shared (non-partitioned) map
        if any(a < b for a, b in zip(self.pathway_in, self.pathway_in[1:])):
            raise PathwaySpecException("pathway_in must be non-increasing", details=details)
        if any(a <= b for a, b in zip(self.pathway_out, self.pathway_out[1:])):
            raise PathwaySpecException("pathway_out must be strictly decreasing", details=details)
        shared_input = len(set(self.pathway_in)) == 1
        partitioned = all(a > b for a, b in zip(self.pathway_in, self.pathway_in[1:]))
        if not self.cross_pathway and not (shared_input or partitioned):
            raise PathwaySpecException("Isolated pathways need a shared or fully partitioned input", details=details)
        if min(self.kernel) < 1 or self.stride < 1 or self.padding < 0:
            raise PathwaySpecException("Invalid kernel, stride or padding",
                                       details={"kernel": self.kernel, "stride": self.stride, "padding": self.padding})

        widths = tuple(a - b for a, b in zip(self.pathway_out, self.pathway_out[1:] + (0,)))
        object.__setattr__(self, "_widths", widths)
        object.__setattr__(self, "_in_blocks", tuple(self._input_block(j) for j in range(1, self.k + 1)))

    @classmethod
    def from_split(cls, in_channels: int, out_channels: int, k: int, kernel: int | Tuple[int, int] = 1,
                   stride: int = 1, padding: int = 0, bias: bool = False,
                   split: Sequence[float] | None = None, in_split: Sequence[float] | None = None,
                   cross_pathway: bool = True) -> "APConvSpec":
        split = tuple(split) if split is not None else default_split(k)
        in_split = tuple(in_split) if in_split is not None else split
        if len(split) != k or len(in_split) != k:
            raise PathwaySpecException("Split needs one share per pathway", details={"k": k, "split": split})
        kernel = (kernel, kernel) if isinstance(kernel, int) else tuple(kernel)
        pathway_in = (in_channels,) * k if all(s == 1.0 for s in in_split) else channels_from_split(in_channels, in_split)
        return cls(
            k=k,
            in_channels=in_channels,
            out_channels=out_channels,
            pathway_in=pathway_in,
            pathway_out=channels_from_split(out_channels, split),
            kernel=kernel,
            stride=stride,
            padding=padding,
            bias=bias,
            cross_pathway=cross_pathway,
        )

    @property
    def sub_out_channels(self) -> Tuple[int, ...]:
        return self._widths

    @property
    def sub_in_channels(self) -> Tuple[int, ...]:
        return tuple(stop - start for start, stop in self._in_blocks)

    def in_channels_at(self, level: int) -> int:
        return self.pathway_in[level - 1]

    def out_channels_at(self, level: int) -> int:
        return self.pathway_out[level - 1]

    def output_block(self, pathway: int) -> Tuple[int, int]:
        """[start, stop) of sub-convolution `pathway` (1-based) inside the full output map."""
        start = self.out_channels - self.pathway_out[pathway - 1]
        return start, start + self._widths[pathway - 1]

    def input_block(self, pathway: int) -> Tuple[int, int]:
        """[start, stop) of the full input map read by sub-convolution `pathway`."""
        return self._in_blocks[pathway - 1]

    def _input_block(self, pathway: int) -> Tuple[int, int]:
        start = self.in_channels - self.pathway_in[pathway - 1]
        if self.cross_pathway:
            return start, self.in_channels
        if len(set(self.pathway_in)) == 1:
            return 0, self.in_channels
        following = self.pathway_in[pathway] if pathway < self.k else 0
        return start, self.in_channels - following

    def output_spatial(self, spatial: Tuple[int, int]) -> Tuple[int, int]:
        h, w = spatial
        return ((h + 2 * self.padding - self.kernel[0]) // self.stride + 1,
                (w + 2 * self.padding - self.kernel[1]) // self.stride + 1)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "pathway_in": list(self.pathway_in),
            "pathway_out": list(self.pathway_out),
            "kernel": list(self.kernel),
            "stride": self.stride,
            "padding": self.padding,
            "bias": self.bias,
            "cross_pathway": self.cross_pathway,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "APConvSpec":
        return cls(
            k=payload["k"],
            in_channels=payload["in_channels"],
            out_channels=payload["out_channels"],
            pathway_in=tuple(payload["pathway_in"]),
            pathway_out=tuple(payload["pathway_out"]),
            kernel=tuple(payload["kernel"]),
            stride=payload["stride"],
            padding=payload["padding"],
            bias=payload["bias"],
            cross_pathway=payload.get("cross_pathway", True),
        )
