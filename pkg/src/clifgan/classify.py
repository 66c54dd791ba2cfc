"""Siamese damage classifier: one shared segmentation feature extractor run
on the pre and post images, channel-concatenated features reduced by
convolutions to per-pixel damage logits."""

import numpy as np
import scipy.ndimage as ndi
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import ModelCheckpoint
from .segnet import (
    SegModelConfig,
    TrainSchedule,
    _derive_rng,
    build_segmodel,
    images_to_batch,
    logits_to_mask,
    masks_to_batch,
    model_from_checkpoint,
    run_training,
    segmentation_loss,
)

_ALLOWED_SOURCES = ("vanilla", "contrastive_finetuned")


class SiameseClassifier(nn.Module):
    """Both branches reference the same extractor parameter set."""

    def __init__(self, extractor, num_classes: int = 5, head_channels: int = 32):
        super().__init__()
        self.extractor = extractor
        self.num_classes = num_classes
        c = extractor.feature_channels
        self.fusion_head = nn.Sequential(
            nn.Conv2d(2 * c, head_channels, 3, padding=1),
            nn.BatchNorm2d(head_channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(head_channels, head_channels, 3, padding=1),
            nn.BatchNorm2d(head_channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(head_channels, num_classes, 1),
        )
        self.head_channels = head_channels

    def forward(self, pre, post):
        f_pre = self.extractor.extract_features(pre)
        f_post = self.extractor.extract_features(post)
        logits = self.fusion_head(torch.cat([f_pre, f_post], dim=1))
        return F.interpolate(logits, size=pre.shape[-2:], mode="bilinear", align_corners=False)


def build_siamese(seg_ckpt: ModelCheckpoint, head_channels: int = 32) -> SiameseClassifier:
    if seg_ckpt.provenance not in _ALLOWED_SOURCES:
        raise ValueError(
            f"siamese extractor needs a checkpoint with provenance in {_ALLOWED_SOURCES}, got {seg_ckpt.provenance}"
        )
    extractor = model_from_checkpoint(seg_ckpt)
    return SiameseClassifier(extractor, num_classes=extractor.config.num_classes, head_channels=head_channels)


def train_classifier(
    classifier: SiameseClassifier,
    train,
    val,
    schedule: TrainSchedule,
    freeze_extractor: bool = False,
    aug_config=None,
) -> ModelCheckpoint:
    if len(train) == 0:
        raise ValueError("train manifest is empty")
    if val is None or len(val) == 0:
        raise ValueError("validation manifest is required and must be nonempty")
    params = classifier.fusion_head.parameters() if freeze_extractor else classifier.parameters()

    from .data.augment import augment as _augment

    def batches(epoch, count_only=False):
        n = len(train)
        order = _derive_rng(schedule.seed, "order", epoch).permutation(n)
        idx_batches = [order[i : i + schedule.batch_size] for i in range(0, n, schedule.batch_size)]
        if count_only:
            yield from ([None] * len(idx_batches))
            return
        for idxs in idx_batches:
            pres, posts, targets = [], [], []
            for i in idxs:
                s = train.entries[i]
                if aug_config is not None:
                    s = _augment(s, aug_config, _derive_rng(aug_config.seed, "aug", epoch, s.id))
                pres.append(s.pre_image)
                posts.append(s.post_image)
                targets.append(s.post_mask)
            yield images_to_batch(pres), images_to_batch(posts), masks_to_batch(targets)

    def loss_fn(m, batch):
        pre, post, targets = batch
        return segmentation_loss(m(pre, post), targets)

    def val_fn(m):
        from .metrics import aggregate_confusion, seg_f1_from_confusion

        conf = None
        for s in val:
            conf = aggregate_confusion(conf, predict_damage(m, s.pre_image, s.post_image), s.post_mask)
        return seg_f1_from_confusion(conf)

    best_state, log = run_training(classifier, batches, loss_fn, schedule, val_fn=val_fn, params=params)
    classifier.load_state_dict(best_state)
    return ModelCheckpoint(
        weights={k: v.cpu() for k, v in best_state.items()},
        arch_config={
            "kind": "siamese",
            "config": classifier.extractor.config.to_dict(),
            "head_channels": classifier.head_channels,
        },
        provenance="siamese",
        train_log=log,
    )


def siamese_from_checkpoint(ckpt: ModelCheckpoint) -> SiameseClassifier:
    if ckpt.provenance != "siamese":
        raise ValueError(f"expected siamese checkpoint, got {ckpt.provenance}")
    extractor = build_segmodel(SegModelConfig(**ckpt.arch_config["config"]))
    model = SiameseClassifier(extractor, extractor.config.num_classes, ckpt.arch_config["head_channels"])
    model.load_state_dict(ckpt.weights)
    model.eval()
    return model


def predict_damage(classifier_or_ckpt, pre_image, post_image, building_level: bool = False) -> np.ndarray:
    """Per-pixel argmax damage map; optionally reduce each footprint component
    to its pixel-majority class."""
    model = (
        siamese_from_checkpoint(classifier_or_ckpt)
        if isinstance(classifier_or_ckpt, ModelCheckpoint)
        else classifier_or_ckpt
    )
    if pre_image.shape != post_image.shape:
        raise ValueError(f"size mismatch: {pre_image.shape} vs {post_image.shape}")
    was_training = model.training
    model.eval()
    with torch.no_grad():
        logits = model(images_to_batch([pre_image]), images_to_batch([post_image]))
    if was_training:
        model.train()
    mask = logits_to_mask(logits[0])
    if building_level:
        mask = reduce_to_building_majority(mask)
    return mask


def reduce_to_building_majority(mask: np.ndarray) -> np.ndarray:
    """Relabel each connected nonzero component with its majority class
    (ties break toward the lower class)."""
    out = mask.copy()
    components, n = ndi.label(mask > 0)
    for b in range(1, n + 1):
        region = components == b
        counts = np.bincount(mask[region], minlength=5)
        out[region] = int(np.argmax(counts))
    return out
