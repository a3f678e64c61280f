import math
from enum import Enum
from typing import Callable, Dict, Sequence

import numpy as np
import torch
import torch.nn.functional as F
import torchvision.transforms.functional as TF
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.augment.randaugment import apply_randaugment
from src.utils.exceptions import AugmentationException
from src.utils.logger import get_logger

logger = get_logger(__name__)


class PolicyKind(str, Enum):
    IDENTITY = "Identity"
    CROP = "Crop"
    FLIP = "Flip"
    GRAY = "Gray"
    BLUR = "Blur"
    GRID_SHUFFLE = "GridShuffle"
    MPN = "MPN"
    RAND_AUGMENT = "RandAugment"


DEFAULT_PARAMS: Dict[PolicyKind, Dict[str, float]] = {
    PolicyKind.IDENTITY: {},
    PolicyKind.CROP: {"scale": 0.08},
    PolicyKind.FLIP: {"p": 0.5},
    PolicyKind.GRAY: {"alpha": 1.0},
    PolicyKind.BLUR: {"k": 3},
    PolicyKind.GRID_SHUFFLE: {"g": 2},
    PolicyKind.MPN: {"s": 1.5},
    PolicyKind.RAND_AUGMENT: {"n": 2, "m": 9},
}


def _is_integer(value: float) -> bool:
    return float(value).is_integer()


def check_policy_params(kind: PolicyKind, params: Dict[str, float]) -> None:
    """Raise AugmentationException unless `params` satisfy the hyperparameter ranges of `kind`."""
    unknown = set(params) - set(DEFAULT_PARAMS[kind])
    if unknown:
        raise AugmentationException(f"Unknown hyperparameters for {kind.value}", details={"unknown": sorted(unknown)})

    if kind is PolicyKind.GRAY and not 0.0 <= params["alpha"] <= 1.0:
        raise AugmentationException("Gray alpha must lie in [0, 1]", details={"alpha": params["alpha"]})
    if kind is PolicyKind.BLUR:
        k = params["k"]
        if not _is_integer(k) or k < 1 or int(k) % 2 == 0:
            raise AugmentationException("Blur kernel size must be an odd integer >= 1", details={"k": k})
    if kind is PolicyKind.GRID_SHUFFLE and (not _is_integer(params["g"]) or params["g"] < 1):
        raise AugmentationException("GridShuffle g must be an integer >= 1", details={"g": params["g"]})
    if kind is PolicyKind.MPN and not params["s"] > 0:
        raise AugmentationException("MPN scale s must be positive", details={"s": params["s"]})
    if kind is PolicyKind.RAND_AUGMENT:
        for name in ("n", "m"):
            if not _is_integer(params[name]) or params[name] < 0:
                raise AugmentationException(f"RandAugment {name} must be a non-negative integer", details={name: params[name]})
    if kind is PolicyKind.CROP and not 0.0 < params["scale"] <= 1.0:
        raise AugmentationException("Crop scale must lie in (0, 1]", details={"scale": params["scale"]})
    if kind is PolicyKind.FLIP and not 0.0 <= params["p"] <= 1.0:
        raise AugmentationException("Flip probability must lie in [0, 1]", details={"p": params["p"]})


class PolicySpec(BaseModel):
    """One augmentation policy, its hyperparameters and its deviation rank (1 = lightest)."""

    model_config = ConfigDict(frozen=True)

    kind: PolicyKind
    params: Dict[str, float] = Field(default_factory=dict)
    level: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _fill_and_check(self) -> "PolicySpec":
        merged = {**DEFAULT_PARAMS[self.kind], **self.params}
        object.__setattr__(self, "params", merged)
        check_policy_params(self.kind, merged)
        return self

    def signature(self) -> tuple:
        return (self.kind.value, tuple(sorted(self.params.items())))

    def __str__(self) -> str:
        if not self.params:
            return self.kind.value
        inner = ",".join(f"{key}={value:g}" for key, value in sorted(self.params.items()))
        return f"{self.kind.value}({inner})"


class PolicyChain(BaseModel):
    """Ordered composition of policies; Identity members are dropped, so Identity alone is the empty chain.

    With `shuffle` the members are applied in a fresh random order for every image.
    """

    model_config = ConfigDict(frozen=True)

    policies: tuple[PolicySpec, ...] = ()
    shuffle: bool = False
    level: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _drop_identity(self) -> "PolicyChain":
        kept = tuple(p for p in self.policies if p.kind is not PolicyKind.IDENTITY)
        object.__setattr__(self, "policies", kept)
        return self

    @classmethod
    def of(cls, policy: "PolicySpec | PolicyChain") -> "PolicyChain":
        if isinstance(policy, PolicyChain):
            return policy
        return cls(policies=(policy,), level=policy.level)

    def __str__(self) -> str:
        joined = "+".join(str(p) for p in self.policies) or PolicyKind.IDENTITY.value
        return f"shuffled({joined})" if self.shuffle and len(self.policies) > 1 else joined


def _identity(img: torch.Tensor, params: Dict[str, float], rng: np.random.Generator) -> torch.Tensor:
    return img.clone()


def _gray(img: torch.Tensor, params: Dict[str, float], rng: np.random.Generator) -> torch.Tensor:
    alpha = params["alpha"]
    gray = img if img.shape[0] == 1 else TF.rgb_to_grayscale(img, num_output_channels=3)
    return alpha * gray + (1.0 - alpha) * img


def _blur(img: torch.Tensor, params: Dict[str, float], rng: np.random.Generator) -> torch.Tensor:
    # mean filter with edge replication
    k = int(params["k"])
    if k == 1:
        return img.clone()
    r = k // 2
    padded = F.pad(img.unsqueeze(0), (r, r, r, r), mode="replicate")
    return F.avg_pool2d(padded, kernel_size=k, stride=1).squeeze(0)


def _grid_shuffle(img: torch.Tensor, params: Dict[str, float], rng: np.random.Generator) -> torch.Tensor:
    g = int(params["g"])
    channels, height, width = img.shape
    if g == 1:
        return img.clone()

    pad_h, pad_w = (-height) % g, (-width) % g
    top, left = pad_h // 2, pad_w // 2
    bottom, right = pad_h - top, pad_w - left
    if max(top, bottom) >= height or max(left, right) >= width:
        raise AugmentationException(
            "Reflect padding cannot make the image divisible by g",
            details={"g": g, "height": height, "width": width},
        )

    x = img
    if pad_h or pad_w:
        x = F.pad(img.unsqueeze(0), (left, right, top, bottom), mode="reflect").squeeze(0)
    tile_h, tile_w = x.shape[1] // g, x.shape[2] // g

    tiles = x.reshape(channels, g, tile_h, g, tile_w).permute(1, 3, 0, 2, 4).reshape(g * g, channels, tile_h, tile_w)
    order = torch.from_numpy(rng.permutation(g * g))
    shuffled = tiles[order].reshape(g, g, channels, tile_h, tile_w).permute(2, 0, 3, 1, 4)
    shuffled = shuffled.reshape(channels, g * tile_h, g * tile_w)
    return shuffled[:, top:top + height, left:left + width].contiguous()


def _mpn(img: torch.Tensor, params: Dict[str, float], rng: np.random.Generator) -> torch.Tensor:
    return (img * params["s"]).clamp(0.0, 1.0)


def _crop(img: torch.Tensor, params: Dict[str, float], rng: np.random.Generator) -> torch.Tensor:
    _, height, width = img.shape
    area = height * width
    for _ in range(10):
        target_area = area * rng.uniform(params["scale"], 1.0)
        aspect = math.exp(rng.uniform(math.log(3 / 4), math.log(4 / 3)))
        crop_w = int(round(math.sqrt(target_area * aspect)))
        crop_h = int(round(math.sqrt(target_area / aspect)))
        if 0 < crop_w <= width and 0 < crop_h <= height:
            top = int(rng.integers(0, height - crop_h + 1))
            left = int(rng.integers(0, width - crop_w + 1))
            return TF.resized_crop(img, top, left, crop_h, crop_w, [height, width], antialias=True)
    return img.clone()


def _flip(img: torch.Tensor, params: Dict[str, float], rng: np.random.Generator) -> torch.Tensor:
    if rng.random() < params["p"]:
        return img.flip(-1)
    return img.clone()


def _rand_augment(img: torch.Tensor, params: Dict[str, float], rng: np.random.Generator) -> torch.Tensor:
    return apply_randaugment(img, int(params["n"]), int(params["m"]), rng)


_POLICY_FUNCTIONS: Dict[PolicyKind, Callable[[torch.Tensor, Dict[str, float], np.random.Generator], torch.Tensor]] = {
    PolicyKind.IDENTITY: _identity,
    PolicyKind.CROP: _crop,
    PolicyKind.FLIP: _flip,
    PolicyKind.GRAY: _gray,
    PolicyKind.BLUR: _blur,
    PolicyKind.GRID_SHUFFLE: _grid_shuffle,
    PolicyKind.MPN: _mpn,
    PolicyKind.RAND_AUGMENT: _rand_augment,
}


def apply_policy(img: torch.Tensor, policy: PolicySpec, rng: np.random.Generator) -> torch.Tensor:
    """Apply one policy to a (C, H, W) image with values in [0, 1]; the input is never modified."""
    try:
        kind = PolicyKind(policy.kind)
    except ValueError:
        raise AugmentationException(f"Unknown policy kind: {policy.kind}")
    if img.dim() != 3 or img.shape[0] not in (1, 3):
        raise AugmentationException("Expected a (C, H, W) image with 1 or 3 channels", details={"shape": tuple(img.shape)})

    params = {**DEFAULT_PARAMS[kind], **policy.params}
    check_policy_params(kind, params)
    return _POLICY_FUNCTIONS[kind](img, params, rng)


def apply_chain(img: torch.Tensor, policies: "PolicyChain | Sequence[PolicySpec]", rng: np.random.Generator) -> torch.Tensor:
    members = policies.policies if isinstance(policies, PolicyChain) else tuple(policies)
    if isinstance(policies, PolicyChain) and policies.shuffle and len(members) > 1:
        members = tuple(members[i] for i in rng.permutation(len(members)))
    out = img
    for policy in members:
        out = apply_policy(out, policy, rng)
    return out if members else img.clone()
