"""Dataset manifests: ordered sample collections with split/subsample ops
and JSON+PNG persistence."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .samples import Provenance, TileSample


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    split_tag: str = "unsplit"  # train | val | test | unsplit
    source_note: str = ""

    def __post_init__(self):
        ids = [s.id for s in self.entries]
        if len(ids) != len(set(ids)):
            raise ValueError("manifest entry ids must be unique")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def split_train_val(manifest: DatasetManifest, train_fraction: float, seed: int):
    """Deterministic seeded shuffle, then floor(n*fraction) train / rest val."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must be in (0,1), got {train_fraction}")
    n = len(manifest)
    if n < 2:
        raise ValueError("need at least 2 entries to form train and val splits")
    order = np.random.default_rng(seed).permutation(n)
    k = int(n * train_fraction)
    train = DatasetManifest([manifest.entries[i] for i in order[:k]], "train", manifest.source_note)
    val = DatasetManifest([manifest.entries[i] for i in order[k:]], "val", manifest.source_note)
    return train, val


def subsample(manifest: DatasetManifest, fraction: float, seed: int) -> DatasetManifest:
    """Seeded selection of floor(n*fraction) entries, original order kept."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0,1], got {fraction}")
    n = len(manifest)
    k = int(n * fraction)
    if k == 0:
        raise ValueError(f"subsample of {n} entries at fraction {fraction} would be empty")
    if k == n:
        return DatasetManifest(list(manifest.entries), manifest.split_tag, manifest.source_note)
    chosen = sorted(np.random.default_rng(seed).choice(n, size=k, replace=False))
    return DatasetManifest(
        [manifest.entries[i] for i in chosen],
        manifest.split_tag,
        manifest.source_note + f" [subsampled {k}/{n} seed={seed}]",
    )


def _save_image(path: Path, arr: np.ndarray) -> None:
    Image.fromarray((np.clip(arr, 0.0, 1.0) * 255).round().astype(np.uint8)).save(path)


def _load_image(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0


def save_manifest(manifest: DatasetManifest, out_dir) -> Path:
    """Write samples as PNGs plus a manifest.json index; returns the json path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for s in manifest.entries:
        paths = {
            "pre_image": f"{s.id}_pre.png",
            "post_image": f"{s.id}_post.png",
            "pre_mask": f"{s.id}_pre_mask.png",
            "post_mask": f"{s.id}_post_mask.png",
        }
        _save_image(out_dir / paths["pre_image"], s.pre_image)
        _save_image(out_dir / paths["post_image"], s.post_image)
        Image.fromarray(s.pre_mask).save(out_dir / paths["pre_mask"])
        Image.fromarray(s.post_mask).save(out_dir / paths["post_mask"])
        records.append({"id": s.id, "provenance": s.provenance.value, "paths": paths})
    index = {
        "split_tag": manifest.split_tag,
        "source_note": manifest.source_note,
        "entries": records,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(index, indent=2))
    return path


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    index = json.loads(path.read_text())
    base = path.parent
    entries = []
    for rec in index["entries"]:
        p = rec["paths"]
        entries.append(
            TileSample(
                id=rec["id"],
                pre_image=_load_image(base / p["pre_image"]),
                post_image=_load_image(base / p["post_image"]),
                pre_mask=np.asarray(Image.open(base / p["pre_mask"]), dtype=np.uint8),
                post_mask=np.asarray(Image.open(base / p["post_mask"]), dtype=np.uint8),
                provenance=Provenance(rec["provenance"]),
            )
        )
    return DatasetManifest(entries, index["split_tag"], index["source_note"])
