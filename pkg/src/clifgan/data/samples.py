"""The pre/post tile pair flowing through every pipeline stage."""

from dataclasses import dataclass, replace
from enum import Enum

import cv2
import numpy as np

from .masks import validate_mask


class Provenance(str, Enum):
    REAL = "real"
    GAN1_SYNTHETIC = "gan1_synthetic"
    GAN2_SYNTHETIC = "gan2_synthetic"
    TOY_SYNTHETIC = "toy_synthetic"


@dataclass
class TileSample:
    """One pre/post image pair with footprint and damage masks.

    Images are float32 H×W×3 in [0,1]; masks uint8 H×W. pre_mask holds
    building footprints ({0,1}), post_mask damage levels.
    """

    id: str
    pre_image: np.ndarray
    post_image: np.ndarray
    pre_mask: np.ndarray
    post_mask: np.ndarray
    provenance: Provenance = Provenance.REAL

    def validate(self) -> None:
        hw = self.pre_image.shape[:2]
        for name in ("post_image", "pre_mask", "post_mask"):
            arr = getattr(self, name)
            if arr.shape[:2] != hw:
                raise ValueError(f"{name} shape {arr.shape[:2]} != pre_image {hw}")
        validate_mask(self.pre_mask)
        validate_mask(self.post_mask)
        if not set(np.unique(self.pre_mask)) <= {0, 1}:
            raise ValueError("pre_mask must be a binary footprint mask")


def resize_tile(sample: TileSample, target) -> TileSample:
    """Resize to target (H, W): bilinear for images, nearest for masks."""
    th, tw = target
    if th < 8 or tw < 8:
        raise ValueError(f"target dims must be >= 8, got {target}")
    if (th, tw) == sample.pre_image.shape[:2]:
        return replace(
            sample,
            pre_image=sample.pre_image.copy(),
            post_image=sample.post_image.copy(),
            pre_mask=sample.pre_mask.copy(),
            post_mask=sample.post_mask.copy(),
        )
    def img(a):
        return cv2.resize(a, (tw, th), interpolation=cv2.INTER_LINEAR)

    def msk(a):
        return cv2.resize(a, (tw, th), interpolation=cv2.INTER_NEAREST)

    return replace(
        sample,
        pre_image=img(sample.pre_image),
        post_image=img(sample.post_image),
        pre_mask=msk(sample.pre_mask),
        post_mask=msk(sample.post_mask),
    )
