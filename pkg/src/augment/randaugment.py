"""Fixed fourteen-transform RandAugment application (no policy search).

Magnitude m is a constant for all sampled transforms and maps linearly onto each
transform's range; m >= MAX_MAGNITUDE means full strength.
"""
import math
from typing import Callable, List, Tuple

import numpy as np
import torch
import torchvision.transforms.functional as TF
from torchvision.transforms import InterpolationMode

MAX_MAGNITUDE = 10


def _to_uint8(img: torch.Tensor) -> torch.Tensor:
    return (img * 255.0).round().clamp(0, 255).to(torch.uint8)


def _to_float(img: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    return img.to(like.dtype) / 255.0


def _signed(value: float, rng: np.random.Generator) -> float:
    return -value if rng.random() < 0.5 else value


def _shear_x(img, f, rng):
    angle = math.degrees(math.atan(_signed(0.3 * f, rng)))
    return TF.affine(img, angle=0.0, translate=[0, 0], scale=1.0, shear=[angle, 0.0],
                     interpolation=InterpolationMode.NEAREST, center=[0, 0])


def _shear_y(img, f, rng):
    angle = math.degrees(math.atan(_signed(0.3 * f, rng)))
    return TF.affine(img, angle=0.0, translate=[0, 0], scale=1.0, shear=[0.0, angle],
                     interpolation=InterpolationMode.NEAREST, center=[0, 0])


def _translate_x(img, f, rng):
    shift = int(_signed(150.0 / 331.0 * img.shape[-1] * f, rng))
    return TF.affine(img, angle=0.0, translate=[shift, 0], scale=1.0, shear=[0.0, 0.0],
                     interpolation=InterpolationMode.NEAREST)


def _translate_y(img, f, rng):
    shift = int(_signed(150.0 / 331.0 * img.shape[-2] * f, rng))
    return TF.affine(img, angle=0.0, translate=[0, shift], scale=1.0, shear=[0.0, 0.0],
                     interpolation=InterpolationMode.NEAREST)


def _rotate(img, f, rng):
    return TF.rotate(img, _signed(30.0 * f, rng), interpolation=InterpolationMode.NEAREST)


def _color(img, f, rng):
    return TF.adjust_saturation(img, 1.0 + _signed(0.9 * f, rng))


def _posterize(img, f, rng):
    bits = 8 - int(4 * f)
    return _to_float(TF.posterize(_to_uint8(img), bits), img)


def _solarize(img, f, rng):
    return TF.solarize(img, 1.0 - f)


def _contrast(img, f, rng):
    return TF.adjust_contrast(img, 1.0 + _signed(0.9 * f, rng))


def _sharpness(img, f, rng):
    return TF.adjust_sharpness(img, 1.0 + _signed(0.9 * f, rng))


def _brightness(img, f, rng):
    return TF.adjust_brightness(img, 1.0 + _signed(0.9 * f, rng))


def _autocontrast(img, f, rng):
    return TF.autocontrast(img)


def _equalize(img, f, rng):
    return _to_float(TF.equalize(_to_uint8(img)), img)


def _identity(img, f, rng):
    return img.clone()


TRANSFORMS: List[Tuple[str, Callable[[torch.Tensor, float, np.random.Generator], torch.Tensor]]] = [
    ("ShearX", _shear_x),
    ("ShearY", _shear_y),
    ("TranslateX", _translate_x),
    ("TranslateY", _translate_y),
    ("Rotate", _rotate),
    ("Color", _color),
    ("Posterize", _posterize),
    ("Solarize", _solarize),
    ("Contrast", _contrast),
    ("Sharpness", _sharpness),
    ("Brightness", _brightness),
    ("AutoContrast", _autocontrast),
    ("Equalize", _equalize),
    ("Identity", _identity),
]


def apply_randaugment(img: torch.Tensor, n: int, m: int, rng: np.random.Generator) -> torch.Tensor:
    fraction = min(m, MAX_MAGNITUDE) / MAX_MAGNITUDE
    out = img.clone()
    for index in rng.integers(0, len(TRANSFORMS), size=n):
        _, transform = TRANSFORMS[int(index)]
        out = transform(out, fraction, rng).clamp(0.0, 1.0)
    return out
