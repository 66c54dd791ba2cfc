"""Procedural toy-disaster scenes: textured ground, rectangular buildings,
level-dependent post-disaster appearance. The desk-scale surrogate for real
overhead imagery."""

from dataclasses import dataclass

import cv2
import numpy as np

from .manifest import DatasetManifest
from .samples import Provenance, TileSample

# post-disaster appearance target per damage level (blend weight, RGB, speckle)
_LEVEL_APPEARANCE = {
    1: (0.0, (0.0, 0.0, 0.0), 0.00),
    2: (0.65, (0.80, 0.60, 0.15), 0.03),
    3: (0.80, (0.55, 0.15, 0.12), 0.06),
    4: (0.90, (0.12, 0.12, 0.18), 0.12),
}


@dataclass
class SyntheticSceneSpec:
    canvas_size: int = 64
    building_count_range: tuple = (3, 6)
    building_size_range: tuple = (8, 18)
    damage_distribution: tuple = (0.25, 0.25, 0.25, 0.25)
    texture_seed: int = 0

    def __post_init__(self):
        if abs(sum(self.damage_distribution) - 1.0) > 1e-9:
            raise ValueError("damage_distribution must sum to 1")
        if any(p < 0 for p in self.damage_distribution):
            raise ValueError("damage_distribution must be nonnegative")


def _ground_texture(size: int, rng: np.random.Generator) -> np.ndarray:
    coarse = rng.uniform(0.0, 1.0, size=(size // 8 + 1, size // 8 + 1))
    coarse = cv2.resize(coarse, (size, size), interpolation=cv2.INTER_LINEAR)
    fine = rng.normal(0.0, 0.02, size=(size, size))
    base = np.stack(
        [
            0.30 + 0.10 * coarse,
            0.38 + 0.12 * coarse,
            0.22 + 0.08 * coarse,
        ],
        axis=-1,
    )
    return np.clip(base + fine[..., None], 0.0, 1.0).astype(np.float32)


def _place_buildings(spec: SyntheticSceneSpec, rng: np.random.Generator):
    """Rejection-sample non-overlapping axis-aligned rectangles."""
    count = int(rng.integers(spec.building_count_range[0], spec.building_count_range[1] + 1))
    lo, hi = spec.building_size_range
    rects = []
    attempts = 0
    max_attempts = 60 * count
    while len(rects) < count and attempts < max_attempts:
        attempts += 1
        h = int(rng.integers(lo, hi + 1))
        w = int(rng.integers(lo, hi + 1))
        if h >= spec.canvas_size - 2 or w >= spec.canvas_size - 2:
            continue
        r = int(rng.integers(1, spec.canvas_size - h - 1))
        c = int(rng.integers(1, spec.canvas_size - w - 1))
        # 1px gap keeps footprint components separable
        if all(
            r + h + 1 <= r2 or r2 + h2 + 1 <= r or c + w + 1 <= c2 or c2 + w2 + 1 <= c
            for r2, c2, h2, w2 in rects
        ):
            rects.append((r, c, h, w))
    return rects, count


def generate_synthetic_scene(spec: SyntheticSceneSpec, rng: np.random.Generator) -> TileSample:
    """Render one pre/post pair. Deterministic given spec and rng state."""
    size = spec.canvas_size
    tex_rng = np.random.default_rng(spec.texture_seed)
    scene_id = int(rng.integers(0, 2**31))
    pre = _ground_texture(size, rng)
    pre_mask = np.zeros((size, size), dtype=np.uint8)
    post_mask = np.zeros((size, size), dtype=np.uint8)

    rects, requested = _place_buildings(spec, rng)
    levels = rng.choice(np.arange(1, 5), size=len(rects), p=np.asarray(spec.damage_distribution))

    for (r, c, h, w), level in zip(rects, levels):
        roof = np.clip(np.array([0.72, 0.70, 0.68]) + rng.normal(0, 0.04, 3), 0.4, 0.95)
        pre[r : r + h, c : c + w] = roof
        pre_mask[r : r + h, c : c + w] = 1
        post_mask[r : r + h, c : c + w] = level

    post = pre.copy()
    for (r, c, h, w), level in zip(rects, levels):
        weight, color, speckle = _LEVEL_APPEARANCE[int(level)]
        patch = post[r : r + h, c : c + w]
        patch = (1 - weight) * patch + weight * np.asarray(color, dtype=np.float32)
        if speckle:
            patch = patch + rng.normal(0.0, speckle, size=patch.shape)
        post[r : r + h, c : c + w] = patch
    post = np.clip(post + tex_rng.normal(0, 0.005, size=post.shape), 0.0, 1.0).astype(np.float32)

    suffix = "" if len(rects) == requested else f"-reduced{len(rects)}of{requested}"
    return TileSample(
        id=f"toy-{scene_id:08x}{suffix}",
        pre_image=pre.astype(np.float32),
        post_image=post,
        pre_mask=pre_mask,
        post_mask=post_mask,
        provenance=Provenance.TOY_SYNTHETIC,
    )


def generate_synthetic_dataset(spec: SyntheticSceneSpec, count: int, seed: int) -> DatasetManifest:
    rng = np.random.default_rng(seed)
    entries = [generate_synthetic_scene(spec, rng) for _ in range(count)]
    return DatasetManifest(entries, "unsplit", f"toy scenes seed={seed}")
