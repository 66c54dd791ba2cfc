"""Ingest xBD-style labeled imagery: paired pre/post PNGs plus per-image
polygon label files (JSON with WKT building polygons and damage subtypes)."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from shapely import wkt as shapely_wkt

from .manifest import DatasetManifest
from .masks import IGNORE, rasterize_polygons
from .samples import Provenance, TileSample

SUBTYPE_TO_LEVEL = {
    "no-damage": 1,
    "minor-damage": 2,
    "major-damage": 3,
    "destroyed": 4,
    "un-classified": IGNORE,
}


@dataclass
class IngestConfig:
    features_key: str = "features"
    geometry_list_key: str = "xy"
    wkt_key: str = "wkt"
    properties_key: str = "properties"
    subtype_key: str = "subtype"
    feature_type_key: str = "feature_type"
    building_value: str = "building"
    pre_suffix: str = "_pre_disaster"
    post_suffix: str = "_post_disaster"


def _parse_label_file(path: Path, size, config: IngestConfig, with_subtype: bool) -> np.ndarray:
    try:
        data = json.loads(path.read_text())
        feats = data[config.features_key]
        if isinstance(feats, dict):
            feats = feats[config.geometry_list_key]
        polys = []
        ignore_polys = []
        for feat in feats:
            props = feat.get(config.properties_key, {})
            if props.get(config.feature_type_key, config.building_value) != config.building_value:
                continue
            geom = shapely_wkt.loads(feat[config.wkt_key])
            ring = list(geom.exterior.coords)[:-1]
            if with_subtype:
                level = SUBTYPE_TO_LEVEL[props[config.subtype_key]]
            else:
                level = 1
            if level == IGNORE:
                ignore_polys.append(ring)
            else:
                polys.append((ring, level))
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ValueError(f"unparseable label file {path}: {exc}") from exc
    mask = rasterize_polygons(polys, size)
    if ignore_polys:
        # rasterize ignore regions separately (legend value 255 is not a class)
        ign = rasterize_polygons([(r, 1) for r in ignore_polys], size)
        mask[ign > 0] = IGNORE
    return mask


def ingest_xbd(labels_dir, images_dir, config: IngestConfig | None = None) -> DatasetManifest:
    """Build a manifest of TileSamples from xBD-style labels + images.

    Entries missing a pre or post image are skipped and recorded in the
    manifest source_note; unparseable label files are a hard error.
    """
    config = config or IngestConfig()
    labels_dir, images_dir = Path(labels_dir), Path(images_dir)
    if not labels_dir.is_dir() or not images_dir.is_dir():
        raise FileNotFoundError(f"missing directory: {labels_dir} or {images_dir}")

    skipped = []
    entries = []
    post_labels = sorted(labels_dir.glob(f"*{config.post_suffix}.json"))
    for post_label in post_labels:
        stem = post_label.stem[: -len(config.post_suffix)]
        pre_img = images_dir / f"{stem}{config.pre_suffix}.png"
        post_img = images_dir / f"{stem}{config.post_suffix}.png"
        pre_label = labels_dir / f"{stem}{config.pre_suffix}.json"
        if not pre_img.exists() or not post_img.exists():
            skipped.append(stem)
            continue
        pre = np.asarray(Image.open(pre_img).convert("RGB"), dtype=np.float32) / 255.0
        post = np.asarray(Image.open(post_img).convert("RGB"), dtype=np.float32) / 255.0
        size = pre.shape[:2]
        post_mask = _parse_label_file(post_label, size, config, with_subtype=True)
        if pre_label.exists():
            pre_mask = _parse_label_file(pre_label, size, config, with_subtype=False)
        else:
            pre_mask = ((post_mask > 0) & (post_mask != IGNORE)).astype(np.uint8)
        entries.append(
            TileSample(
                id=stem,
                pre_image=pre,
                post_image=post,
                pre_mask=pre_mask,
                post_mask=post_mask,
                provenance=Provenance.REAL,
            )
        )
    note = f"ingested from {labels_dir}"
    if skipped:
        note += f"; skipped missing images: {', '.join(skipped)}"
    return DatasetManifest(entries, "unsplit", note)
