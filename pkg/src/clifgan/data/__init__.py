from .masks import (
    BACKGROUND,
    DAMAGE_LEVELS,
    IGNORE,
    VALID_MASK_VALUES,
    rasterize_polygons,
    validate_mask,
)
from .samples import Provenance, TileSample, resize_tile
from .manifest import DatasetManifest, load_manifest, save_manifest, split_train_val, subsample
from .augment import AugmentationConfig, augment
from .synthetic import SyntheticSceneSpec, generate_synthetic_dataset, generate_synthetic_scene
from .ingest import IngestConfig, ingest_xbd

__all__ = [
    "BACKGROUND",
    "DAMAGE_LEVELS",
    "IGNORE",
    "VALID_MASK_VALUES",
    "rasterize_polygons",
    "validate_mask",
    "Provenance",
    "TileSample",
    "resize_tile",
    "DatasetManifest",
    "load_manifest",
    "save_manifest",
    "split_train_val",
    "subsample",
    "AugmentationConfig",
    "augment",
    "SyntheticSceneSpec",
    "generate_synthetic_scene",
    "generate_synthetic_dataset",
    "IngestConfig",
    "ingest_xbd",
]
