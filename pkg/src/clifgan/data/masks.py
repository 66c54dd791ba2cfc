"""Damage mask legend and polygon rasterization.

Masks are 2-D uint8 arrays: 0 background, 1 no-damage, 2 minor, 3 major,
4 destroyed, 255 ignore.
"""

import warnings

import numpy as np

BACKGROUND = 0
DAMAGE_LEVELS = (1, 2, 3, 4)
IGNORE = 255
VALID_MASK_VALUES = frozenset({0, 1, 2, 3, 4, 255})


def validate_mask(mask: np.ndarray) -> None:
    """Raise ValueError if `mask` is not a valid damage mask."""
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    bad = set(np.unique(mask)) - VALID_MASK_VALUES
    if bad:
        raise ValueError(f"mask contains values outside the legend: {sorted(bad)}")


def _edge_crossings(ring: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Even-odd inside test for points (px, py) against a closed ring.

    Standard ray-casting parity: an edge (x1,y1)-(x2,y2) crosses the
    horizontal ray from (px,py) iff the edge straddles py and the
    intersection lies strictly right of px.
    """
    inside = np.zeros(px.shape, dtype=bool)
    n = len(ring)
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        straddles = (y1 > py) != (y2 > py)
        if not straddles.any():
            continue
        xi = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= straddles & (px < xi)
    return inside


def rasterize_polygons(polygons, size) -> np.ndarray:
    """Rasterize (ring, damage_class) pairs into a damage mask.

    A pixel gets a polygon's class iff its center lies inside the ring under
    the even-odd rule; later polygons overwrite earlier ones. Rings with
    fewer than 3 vertices are skipped with a warning.
    """
    h, w = size
    mask = np.zeros((h, w), dtype=np.uint8)
    if not polygons:
        return mask
    # pixel (r, c) has center (c + 0.5, r + 0.5)
    py, px = np.mgrid[0:h, 0:w]
    px = px + 0.5
    py = py + 0.5
    for ring, damage_class in polygons:
        ring = np.asarray(ring, dtype=np.float64)
        if ring.ndim != 2 or ring.shape[0] < 3:
            warnings.warn(f"skipping degenerate ring with {len(ring)} vertices")
            continue
        if damage_class not in DAMAGE_LEVELS:
            raise ValueError(f"damage_class must be in {DAMAGE_LEVELS}, got {damage_class}")
        inside = _edge_crossings(ring, px, py)
        mask[inside] = damage_class
    return mask
