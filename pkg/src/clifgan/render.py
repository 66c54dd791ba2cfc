"""Color overlay rendering of damage masks: class 1 red through class 4
yellow, background untouched."""

import numpy as np
from PIL import Image, PngImagePlugin

# red -> yellow ramp over the 4 damage levels
OVERLAY_PALETTE = {
    1: (255, 0, 0),
    2: (255, 85, 0),
    3: (255, 170, 0),
    4: (255, 255, 0),
}
OVERLAY_ALPHA = 0.5


def overlay_mask(image: np.ndarray, mask: np.ndarray, alpha: float = OVERLAY_ALPHA) -> np.ndarray:
    """Blend the palette into the image at labeled pixels; returns float [0,1]."""
    if image.shape[:2] != mask.shape:
        raise ValueError(f"size mismatch: image {image.shape[:2]} vs mask {mask.shape}")
    out = image.astype(np.float32).copy()
    for level, rgb in OVERLAY_PALETTE.items():
        sel = mask == level
        if sel.any():
            color = np.asarray(rgb, dtype=np.float32) / 255.0
            out[sel] = (1 - alpha) * out[sel] + alpha * color
    return np.clip(out, 0.0, 1.0)


def render_overlay(image: np.ndarray, mask: np.ndarray, out_path) -> None:
    """Write the overlay as PNG with the palette documented in metadata."""
    blended = overlay_mask(image, mask)
    pil = Image.fromarray((blended * 255).round().astype(np.uint8))
    meta = PngImagePlugin.PngInfo()
    palette_doc = "; ".join(f"class {k}: rgb{v}" for k, v in OVERLAY_PALETTE.items())
    meta.add_text("damage-palette", palette_doc + f"; alpha {OVERLAY_ALPHA}")
    pil.save(out_path, pnginfo=meta)
