"""Contrastive pre-training of the segmentation feature extractor: a 1x1-conv
projection head with unit normalization, a within-image multi-positive
InfoNCE over sampled pixel embeddings, then head discard and cross-entropy
fine-tuning."""

import warnings
from dataclasses import dataclass

import cv2
import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import ModelCheckpoint
from .data.masks import IGNORE
from .segnet import (
    SegModel,
    SegModelConfig,
    TrainSchedule,
    _derive_rng,
    _make_batches,
    build_segmodel,
    run_training,
    train_vanilla,
)


@dataclass
class ContrastiveConfig:
    embedding_dim: int = 128
    temperature: float = 0.1
    pixels_per_class: int = 64
    use_color_distortion: bool = False
    pretrain_epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.pixels_per_class < 2:
            raise ValueError("pixels_per_class must be >= 2")


class ProjectionHead(nn.Module):
    """Three pointwise convs with ReLU between, then per-pixel L2 norm."""

    def __init__(self, in_channels: int, embedding_dim: int):
        super().__init__()
        self.convs = nn.Sequential(
            nn.Conv2d(in_channels, in_channels, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(in_channels, in_channels, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(in_channels, embedding_dim, 1),
        )

    def forward(self, x):
        return F.normalize(self.convs(x), dim=1)


class ModelWithHead(nn.Module):
    """Segmentation model whose classifier is bypassed in favor of the head."""

    def __init__(self, base: SegModel, config: ContrastiveConfig):
        super().__init__()
        self.base = base
        self.head = ProjectionHead(base.feature_channels, config.embedding_dim)

    def forward(self, x):
        return self.head(self.base.extract_features(x))


def attach_projection_head(model: SegModel, config: ContrastiveConfig) -> ModelWithHead:
    return ModelWithHead(model, config)


def remove_projection_head(model_with_head: ModelWithHead) -> SegModel:
    return model_with_head.base


def downsample_labels(mask: np.ndarray, size) -> np.ndarray:
    """Nearest-neighbor label downsample to the embedding grid."""
    h, w = size
    return cv2.resize(mask, (w, h), interpolation=cv2.INTER_NEAREST)


def sample_pixels(labels: np.ndarray, pixels_per_class: int, rng: np.random.Generator):
    """Flat indices and classes of up to pixels_per_class pixels per present
    non-ignore class; classes with < 2 pixels are dropped."""
    flat = labels.reshape(-1)
    chosen = []
    for c in sorted(int(v) for v in np.unique(flat)):
        if c == IGNORE:
            continue
        idx = np.flatnonzero(flat == c)
        if len(idx) < 2:
            continue
        k = min(pixels_per_class, len(idx))
        pick = rng.choice(idx, size=k, replace=False)
        chosen.append((c, np.sort(pick)))
    return chosen


def within_image_loss(embeddings: torch.Tensor, labels, config: ContrastiveConfig, rng=None):
    """Multi-positive normalized-temperature cross entropy within each image.

    embeddings: N,D,H,W unit-norm; labels: list/array of N H,W masks at the
    embedding resolution. For each sampled anchor i:
    loss_i = -log( sum_{j~i} exp(z_i.z_j/tau) / sum_{k!=i} exp(z_i.z_k/tau) ),
    positives j share the anchor's class within the same image. Returns the
    mean over anchors then images; images with < 2 eligible classes are
    skipped, and 0 is returned (with a warning) if every image is skipped.
    """
    rng = rng or np.random.default_rng(config.seed)
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels[None]
    per_image = []
    for n in range(embeddings.shape[0]):
        groups = sample_pixels(labels[n], config.pixels_per_class, rng)
        if len(groups) < 2:
            continue
        idx = np.concatenate([g[1] for g in groups])
        cls = np.concatenate([np.full(len(g[1]), g[0]) for g in groups])
        z = embeddings[n].reshape(embeddings.shape[1], -1)[:, idx].T  # M,D
        sim = z @ z.T / config.temperature
        m = len(idx)
        eye = torch.eye(m, dtype=torch.bool, device=sim.device)
        same = torch.from_numpy(cls[:, None] == cls[None, :]).to(sim.device) & ~eye
        neg_inf = torch.finfo(sim.dtype).min
        denom = torch.logsumexp(sim.masked_fill(eye, neg_inf), dim=1)
        numer = torch.logsumexp(sim.masked_fill(~same, neg_inf), dim=1)
        per_image.append((denom - numer).mean())
    if not per_image:
        warnings.warn("within_image_loss: no image had >= 2 contrastable classes")
        return embeddings.sum() * 0.0
    return torch.stack(per_image).mean()


def pretrain(
    model_with_head: ModelWithHead,
    train,
    config: ContrastiveConfig,
    schedule: TrainSchedule,
    aug_config=None,
) -> ModelCheckpoint:
    """Optimize the within-image loss; checkpoint tagged contrastive_pretrained."""
    if len(train) == 0:
        raise ValueError("train manifest is empty")
    if config.use_color_distortion:
        warnings.warn("color distortion requested but intentionally unsupported; ignoring")
    state = {"step": 0}

    def loss_fn(m, batch):
        images, targets = batch
        emb = m(images)
        lab = np.stack(
            [downsample_labels(t.numpy().astype(np.uint8), emb.shape[-2:]) for t in targets]
        )
        rng = _derive_rng(config.seed, "clsample", state["step"])
        state["step"] += 1
        return within_image_loss(emb, lab, config, rng)

    sched = TrainSchedule(**{**schedule.__dict__, "max_epochs": config.pretrain_epochs})
    best_state, log = run_training(
        model_with_head,
        _make_batches(train, sched, "post_image", "post_mask", aug_config),
        loss_fn,
        sched,
        val_fn=None,
    )
    model_with_head.load_state_dict(best_state)
    return ModelCheckpoint(
        weights={k: v.cpu() for k, v in best_state.items()},
        arch_config={
            "kind": "segmodel_with_head",
            "config": model_with_head.base.config.to_dict(),
            "contrastive": config.__dict__.copy(),
        },
        provenance="contrastive_pretrained",
        train_log=log,
    )


def pretrained_from_checkpoint(ckpt: ModelCheckpoint) -> ModelWithHead:
    if ckpt.provenance != "contrastive_pretrained":
        raise ValueError(f"expected contrastive_pretrained checkpoint, got {ckpt.provenance}")
    base = build_segmodel(SegModelConfig(**ckpt.arch_config["config"]))
    model = ModelWithHead(base, ContrastiveConfig(**ckpt.arch_config["contrastive"]))
    model.load_state_dict(ckpt.weights)
    return model


def finetune(pretrained: ModelCheckpoint, train, val, schedule: TrainSchedule, aug_config=None) -> ModelCheckpoint:
    """Discard the head, restore the classifier, train with cross-entropy."""
    model = remove_projection_head(pretrained_from_checkpoint(pretrained))
    ckpt = train_vanilla(model, train, val, schedule, aug_config)
    ckpt.provenance = "contrastive_finetuned"
    return ckpt
