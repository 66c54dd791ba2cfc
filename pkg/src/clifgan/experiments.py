"""Desk-scale experiment recipes shared by the acceptance suite and the
runnable scripts: training-quality, contrastive-vs-vanilla, GAN-augmentation,
and ensemble-fusion regimes on the synthetic dataset."""

from dataclasses import dataclass, field

import numpy as np
import torch

from . import data as D
from .contrastive import ContrastiveConfig, attach_projection_head, finetune, pretrain
from .fuse import Ensemble, MorphologyConfig, fuse_pipeline
from .gan import GanTrainConfig, MaskEditSpec, augment_dataset, build_gan, train_gan
from .metrics import aggregate_confusion, cls_f1_from_confusion, seg_f1_from_confusion
from .segnet import (
    SegModelConfig,
    TrainSchedule,
    build_segmodel,
    model_from_checkpoint,
    predict_mask,
    train_vanilla,
)


@dataclass
class DeskRegime:
    """Shared knobs for the synthetic-data experiments."""

    pool_size: int = 220
    labeled_size: int = 20  # the low-label slice of the training pool
    val_size: int = 20
    data_seed: int = 7
    scene_spec: D.SyntheticSceneSpec = field(default_factory=D.SyntheticSceneSpec)
    epochs: int = 150
    pretrain_epochs: int = 15
    gan_epochs: int = 60
    batch_size: int = 8

    def datasets(self):
        pool = D.generate_synthetic_dataset(self.scene_spec, self.pool_size, self.data_seed)
        n_train = self.pool_size - self.val_size
        train_pool = D.DatasetManifest(pool.entries[:n_train], "train", "toy train pool")
        val = D.DatasetManifest(pool.entries[n_train:], "val", "toy val")
        labeled = D.DatasetManifest(pool.entries[: self.labeled_size], "train", "toy low-label slice")
        return train_pool, labeled, val

    def schedule(self, seed: int, epochs=None) -> TrainSchedule:
        return TrainSchedule(
            batch_size=self.batch_size,
            max_epochs=epochs or self.epochs,
            eval_every=10,
            early_stop_patience=100,
            seed=seed,
        )


def _val_cls_f1(model, val) -> float:
    conf = None
    for s in val:
        conf = aggregate_confusion(conf, predict_mask(model, s.post_image), s.post_mask)
    overall, _ = cls_f1_from_confusion(conf)
    return overall


def _val_seg_f1(model, val) -> float:
    conf = None
    for s in val:
        conf = aggregate_confusion(conf, predict_mask(model, s.post_image), s.post_mask)
    return seg_f1_from_confusion(conf)


def train_desk_segnet(train, val, seed: int, epochs: int = 80, batch_size: int = 16, val_metric: str = "seg_f1"):
    """One width-0.25 segmentation training run; returns (checkpoint, model)."""
    sched = TrainSchedule(
        batch_size=batch_size, max_epochs=epochs, eval_every=10, early_stop_patience=100, seed=seed
    )
    torch.manual_seed(seed)
    model = build_segmodel(SegModelConfig())
    ckpt = train_vanilla(model, train, val, sched, val_metric=val_metric)
    return ckpt, model


def contrastive_vs_vanilla(regime: DeskRegime, seed: int):
    """Low-label comparison: fine-tuning a contrastively pretrained extractor
    vs training from scratch on the same labeled slice. Returns the two
    validation classification F1s (vanilla, contrastive)."""
    train_pool, labeled, val = regime.datasets()
    sched = regime.schedule(seed)

    torch.manual_seed(seed)
    vanilla_model = build_segmodel(SegModelConfig())
    train_vanilla(vanilla_model, labeled, val, sched, val_metric="cls_f1")
    vanilla_f1 = _val_cls_f1(vanilla_model, val)

    ccfg = ContrastiveConfig(pretrain_epochs=regime.pretrain_epochs, pixels_per_class=32, seed=seed)
    torch.manual_seed(seed)
    with_head = attach_projection_head(build_segmodel(SegModelConfig()), ccfg)
    pre_ckpt = pretrain(with_head, train_pool, ccfg, regime.schedule(seed, regime.pretrain_epochs))
    fine_ckpt = finetune(pre_ckpt, labeled, val, sched)
    contrastive_f1 = _val_cls_f1(model_from_checkpoint(fine_ckpt), val)
    return vanilla_f1, contrastive_f1


def gan_augmentation_trend(regime: DeskRegime, seed: int, include_gan2: bool = False):
    """Low-data comparison: labeled slice alone vs doubled with generator
    output. Returns dict of validation classification F1 per arm."""
    _, labeled, val = regime.datasets()
    sched = regime.schedule(seed)
    results = {}

    torch.manual_seed(seed)
    base_model = build_segmodel(SegModelConfig())
    train_vanilla(base_model, labeled, val, sched, val_metric="cls_f1")
    results["baseline"] = _val_cls_f1(base_model, val)

    for variant in ("gan1",) + (("gan2",) if include_gan2 else ()):
        torch.manual_seed(seed)
        gen, disc = build_gan(variant)
        gen_ckpt, _ = train_gan(
            gen, disc, labeled,
            GanTrainConfig(image_size=regime.scene_spec.canvas_size, epochs=regime.gan_epochs, batch_size=4, seed=seed),
        )
        augmented = augment_dataset(
            labeled, gen_ckpt, len(labeled),
            MaskEditSpec(mode="randomize", seed=seed), np.random.default_rng(seed),
        )
        torch.manual_seed(seed)
        model = build_segmodel(SegModelConfig())
        train_vanilla(model, augmented, val, sched, val_metric="cls_f1")
        results[variant] = _val_cls_f1(model, val)
    return results


def fusion_experiment(train, val, seeds=(0, 1, 2), epochs: int = 60, morph: MorphologyConfig = None):
    """Train 3 ensemble members (seed-only diversity), compare member vs
    fused segmentation F1 on the validation set."""
    morph = morph or MorphologyConfig()
    members = []
    member_f1s = []
    for seed in seeds:
        ckpt, model = train_desk_segnet(train, val, seed, epochs=epochs)
        members.append(ckpt)
        member_f1s.append(_val_seg_f1(model, val))
    ensemble = Ensemble(members)
    conf = None
    for s in val:
        fused = fuse_pipeline(ensemble, s.pre_image, s.post_image, morph)
        conf = aggregate_confusion(conf, fused, s.post_mask)
    fused_f1 = seg_f1_from_confusion(conf)
    return member_f1s, fused_f1, ensemble
