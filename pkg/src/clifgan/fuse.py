"""Two-level fusion: per-pixel majority vote over a 3-member ensemble, then
per-class morphological opening/closing with small-region pruning."""

from dataclasses import dataclass

import numpy as np
import scipy.ndimage as ndi

from .checkpoint import ModelCheckpoint
from .data.masks import IGNORE


@dataclass
class Ensemble:
    members: list

    def __post_init__(self):
        if len(self.members) != 3:
            raise ValueError(f"ensemble needs exactly 3 members, got {len(self.members)}")
        kinds = {m.arch_config.get("kind") for m in self.members}
        if len(kinds) != 1:
            raise ValueError(f"ensemble members must share an architecture, got {kinds}")

    def size_bytes(self) -> int:
        return sum(m.size_bytes for m in self.members)

    def _member_predict(self, member, pre_image, post_image):
        if member.provenance == "siamese":
            from .classify import predict_damage

            return predict_damage(member, pre_image, post_image)
        from .segnet import predict_mask

        return predict_mask(member, post_image)

    def predict(self, pre_image, post_image, morph_config=None):
        masks = [self._member_predict(m, pre_image, post_image) for m in self.members]
        fused = majority_vote(masks)
        if morph_config is not None:
            fused = morph_filter(fused, morph_config)
        return fused


@dataclass
class MorphologyConfig:
    side: int = 3
    min_region_area: int = 2

    def __post_init__(self):
        if self.side < 1 or self.side % 2 == 0:
            raise ValueError("structuring element side must be odd and >= 1")
        if self.min_region_area < 0:
            raise ValueError("min_region_area must be >= 0")


def majority_vote(masks) -> np.ndarray:
    """Per-pixel: a label with >= 2 votes wins; 3-way disagreement resolves
    to the most severe non-ignore label; 255 needs >= 2 votes to survive."""
    if len(masks) != 3:
        raise ValueError(f"majority_vote takes exactly 3 masks, got {len(masks)}")
    a, b, c = (np.asarray(m) for m in masks)
    if not (a.shape == b.shape == c.shape):
        raise ValueError(f"shape mismatch: {a.shape}, {b.shape}, {c.shape}")
    out = np.where(b == c, b, a).astype(a.dtype)  # a==b, a==c, or all-distinct -> a; b==c -> b
    all_distinct = (a != b) & (b != c) & (a != c)
    if all_distinct.any():
        stack = np.stack([a, b, c]).astype(np.int64)
        stack[stack == IGNORE] = -1  # 255 never wins a 3-way split
        out[all_distinct] = stack.max(axis=0)[all_distinct].astype(a.dtype)
    return out


def _open_close(indicator: np.ndarray, side: int) -> np.ndarray:
    selem = np.ones((side, side), dtype=bool)
    opened = ndi.binary_opening(indicator, structure=selem)
    return ndi.binary_closing(opened, structure=selem)


_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def morph_filter(mask: np.ndarray, config: MorphologyConfig) -> np.ndarray:
    """Per class ascending: open then close the class indicator; later
    (higher) classes overwrite. Then drop 4-connected class regions smaller
    than min_region_area. Ignore pixels pass through untouched."""
    out = np.zeros_like(mask)
    for c in (1, 2, 3, 4):
        cleaned = _open_close(mask == c, config.side)
        out[cleaned] = c
    if config.min_region_area > 0:
        for c in (1, 2, 3, 4):
            components, n = ndi.label(out == c, structure=_FOUR_CONNECTED)
            if n == 0:
                continue
            areas = np.bincount(components.ravel(), minlength=n + 1)
            small = np.flatnonzero(areas < config.min_region_area)
            small = small[small > 0]
            if small.size:
                out[np.isin(components, small)] = 0
    out[mask == IGNORE] = IGNORE
    return out


def fuse_pipeline(ensemble: Ensemble, pre_image, post_image, config: MorphologyConfig) -> np.ndarray:
    return ensemble.predict(pre_image, post_image, morph_config=config)


def save_ensemble(ensemble: Ensemble, paths, descriptor_path) -> None:
    """Persist members and a JSON descriptor listing the 3 checkpoint paths."""
    import json
    from pathlib import Path

    for member, path in zip(ensemble.members, paths):
        member.save(path)
    Path(descriptor_path).write_text(json.dumps({"members": [str(p) for p in paths]}, indent=2))


def load_ensemble(descriptor_path) -> Ensemble:
    import json
    from pathlib import Path

    desc = json.loads(Path(descriptor_path).read_text())
    return Ensemble([ModelCheckpoint.load(p) for p in desc["members"]])
