"""On-the-fly geometric augmentation: scale, rotate, shear, flip, crop.

The same geometric transform is applied to all four planes of a sample;
images are interpolated bilinearly with reflected borders, masks with
nearest-neighbor and zero fill (labels are never blended)."""

import math
from dataclasses import dataclass, replace

import cv2
import numpy as np

from .samples import TileSample


@dataclass
class AugmentationConfig:
    scale_range: tuple = (0.8, 2.0)
    crop_size: int = 64
    flip_horizontal: bool = True
    flip_vertical: bool = True
    rotations: bool = False
    shearing: bool = False
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise ValueError(f"invalid scale_range {self.scale_range}")


def _pad_to(img: np.ndarray, h: int, w: int, is_mask: bool) -> np.ndarray:
    ph, pw = max(0, h - img.shape[0]), max(0, w - img.shape[1])
    if ph == 0 and pw == 0:
        return img
    pads = ((0, ph), (0, pw)) + (((0, 0),) if img.ndim == 3 else ())
    if is_mask:
        return np.pad(img, pads, mode="constant", constant_values=0)
    return np.pad(img, pads, mode="reflect")


def augment(sample: TileSample, config: AugmentationConfig, rng: np.random.Generator) -> TileSample:
    h, w = sample.pre_image.shape[:2]
    scale = float(rng.uniform(*config.scale_range))
    angle = float(rng.uniform(-180.0, 180.0)) if config.rotations else 0.0
    shear = float(rng.uniform(-0.3, 0.3)) if config.shearing else 0.0
    flip_h = config.flip_horizontal and bool(rng.integers(0, 2))
    flip_v = config.flip_vertical and bool(rng.integers(0, 2))

    identity = scale == 1.0 and angle == 0.0 and shear == 0.0 and not flip_h and not flip_v

    out_h, out_w = max(8, round(h * scale)), max(8, round(w * scale))
    if identity:
        out_h, out_w = h, w
        planes = {
            "pre_image": sample.pre_image.copy(),
            "post_image": sample.post_image.copy(),
            "pre_mask": sample.pre_mask.copy(),
            "post_mask": sample.post_mask.copy(),
        }
    else:
        # rotate+shear+scale about the source center, recentered on the output
        rad = math.radians(angle)
        ca, sa = math.cos(rad), math.sin(rad)
        lin = scale * np.array([[ca + shear * sa, -sa + shear * ca], [sa, ca]])
        src_c = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
        dst_c = np.array([(out_w - 1) / 2.0, (out_h - 1) / 2.0])
        shift = dst_c - lin @ src_c
        mat = np.hstack([lin, shift[:, None]]).astype(np.float64)

        def warp(a, is_mask):
            flags = cv2.INTER_NEAREST if is_mask else cv2.INTER_LINEAR
            border = cv2.BORDER_CONSTANT if is_mask else cv2.BORDER_REFLECT
            return cv2.warpAffine(a, mat, (out_w, out_h), flags=flags, borderMode=border, borderValue=0)

        planes = {
            "pre_image": warp(sample.pre_image, False),
            "post_image": warp(sample.post_image, False),
            "pre_mask": warp(sample.pre_mask, True),
            "post_mask": warp(sample.post_mask, True),
        }
        if flip_h:
            planes = {k: v[:, ::-1] for k, v in planes.items()}
        if flip_v:
            planes = {k: v[::-1] for k, v in planes.items()}

    cs = config.crop_size
    planes = {
        k: _pad_to(v, cs, cs, is_mask=k.endswith("mask")) for k, v in planes.items()
    }
    ph, pw = planes["pre_image"].shape[:2]
    top = int(rng.integers(0, ph - cs + 1))
    left = int(rng.integers(0, pw - cs + 1))
    planes = {k: np.ascontiguousarray(v[top : top + cs, left : left + cs]) for k, v in planes.items()}
    return replace(sample, **planes)
