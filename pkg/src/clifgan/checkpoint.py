"""Shared checkpoint container: weights + architecture config + provenance.

Serialized with torch.save as a single self-describing file; size_bytes is
populated from the file length on save/load."""

import os
from dataclasses import dataclass, field, asdict
from pathlib import Path

import torch

PROVENANCES = (
    "vanilla",
    "contrastive_pretrained",
    "contrastive_finetuned",
    "gan_generator",
    "gan_discriminator",
    "siamese",
)


@dataclass
class ModelCheckpoint:
    weights: dict
    arch_config: dict
    provenance: str
    train_log: list = field(default_factory=list)
    size_bytes: int = 0

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def save(self, path) -> "ModelCheckpoint":
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "weights": self.weights,
                "arch_config": self.arch_config,
                "provenance": self.provenance,
                "train_log": self.train_log,
            },
            path,
        )
        self.size_bytes = os.path.getsize(path)
        return self

    @classmethod
    def load(cls, path) -> "ModelCheckpoint":
        path = Path(path)
        blob = torch.load(path, map_location="cpu", weights_only=False)
        return cls(
            weights=blob["weights"],
            arch_config=blob["arch_config"],
            provenance=blob["provenance"],
            train_log=blob["train_log"],
            size_bytes=os.path.getsize(path),
        )


def config_to_dict(cfg) -> dict:
    """Dataclass config -> plain dict for embedding in a checkpoint."""
    d = asdict(cfg)
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    return d
