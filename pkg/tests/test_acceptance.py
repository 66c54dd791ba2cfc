"""Acceptance suite: one test per criterion, each printing a single
uncaptured [PASS]/[FAIL] line with its headline tolerance."""

import json
import math
import statistics
import time
from pathlib import Path

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from clifgan.checkpoint import ModelCheckpoint
from clifgan.classify import SiameseClassifier
from clifgan.contrastive import ContrastiveConfig, attach_projection_head, sample_pixels, within_image_loss
from clifgan.data import DatasetManifest, SyntheticSceneSpec, generate_synthetic_dataset, rasterize_polygons
from clifgan.experiments import (
    DeskRegime,
    contrastive_vs_vanilla,
    fusion_experiment,
    gan_augmentation_trend,
    train_desk_segnet,
)
from clifgan.fuse import MorphologyConfig, majority_vote, morph_filter
from clifgan.gan import DiscriminatorConfig, GanTrainConfig, GeneratorConfig, UNetGenerator, _sample_to_pair, build_gan
from clifgan.metrics import EvalReport, cls_f1, evaluate, render_comparison_table, seg_f1
from clifgan.segnet import (
    BackboneConfig,
    SegModelConfig,
    build_segmodel,
    images_to_batch,
    masks_to_batch,
    poly_lr,
    segmentation_loss,
)

from gradcheck import finite_difference_check
from oracles import (
    brute_cls_f1,
    brute_morph_filter,
    brute_rasterize,
    brute_seg_f1,
    brute_within_image_loss,
)
from test_masks import _random_polygon


@pytest.fixture
def announce(capsys):
    def _announce(number, name, ok):
        with capsys.disabled():
            print(f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {name}")

    return _announce


@pytest.fixture(scope="module")
def regime():
    return DeskRegime()


@pytest.fixture(scope="module")
def desk_data(regime):
    return regime.datasets()  # (train_pool 200, labeled 20, val 20)


@pytest.fixture(scope="module")
def four_tiles():
    manifest = generate_synthetic_dataset(SyntheticSceneSpec(), count=4, seed=99)
    return manifest


def test_criterion_01_metric_oracle(announce, rng):
    name = "seg/cls F1 match brute-force oracles within 1e-9 on 100 mask pairs"
    ok = False
    try:
        start = time.monotonic()
        for _ in range(100):
            h, w = int(rng.integers(2, 17)), int(rng.integers(2, 17))
            truth = rng.choice([0, 1, 2, 3, 4, 255], size=(h, w)).astype(np.uint8)
            pred = rng.choice([0, 1, 2, 3, 4], size=(h, w)).astype(np.uint8)
            assert abs(seg_f1(pred, truth) - brute_seg_f1(pred, truth)) < 1e-9
            got, got_pc = cls_f1(pred, truth)
            exp, exp_pc = brute_cls_f1(pred, truth)
            assert (math.isnan(got) and math.isnan(exp)) or abs(got - exp) < 1e-9
            for g, e in zip(got_pc, exp_pc):
                assert (math.isnan(g) and math.isnan(e)) or abs(g - e) < 1e-9
        assert time.monotonic() - start < 10
        ok = True
    finally:
        announce(1, name, ok)


def test_criterion_02_rasterization_oracle(announce, rng):
    name = "rasterization matches point-in-polygon brute force on 100 polygons"
    ok = False
    try:
        start = time.monotonic()
        done = 0
        while done < 100:
            h, w = int(rng.integers(4, 33)), int(rng.integers(4, 33))
            batch = [
                (_random_polygon(rng, w, h), int(rng.integers(1, 5)))
                for _ in range(min(4, 100 - done))
            ]
            done += len(batch)
            assert (rasterize_polygons(batch, (h, w)) == brute_rasterize(batch, (h, w))).all()
        assert time.monotonic() - start < 30
        ok = True
    finally:
        announce(2, name, ok)


def test_criterion_03_contrastive_oracle(announce, rng):
    name = "within-image loss matches pairwise oracle (1e-6 rel); head unit-norm (1e-5)"
    ok = False
    try:
        config = ContrastiveConfig(temperature=0.1, pixels_per_class=3)
        checked = 0
        while checked < 50:
            emb = rng.normal(size=(8, 9))
            emb /= np.linalg.norm(emb, axis=0, keepdims=True)
            labels = rng.choice([1, 2, 3], size=(3, 3)).astype(np.uint8)
            groups = sample_pixels(labels, 3, np.random.default_rng(checked))
            if len(groups) < 2:
                continue
            loss = within_image_loss(
                torch.from_numpy(emb.reshape(8, 3, 3))[None], labels[None], config,
                rng=np.random.default_rng(checked),
            )
            idx = np.concatenate([g[1] for g in groups])
            cls = np.concatenate([np.full(len(g[1]), g[0]) for g in groups])
            assert len(idx) <= 10
            expected = brute_within_image_loss(emb[:, idx].T, cls, 0.1)
            assert abs(float(loss) - expected) <= 1e-6 * max(abs(expected), 1e-30)
            checked += 1
        model = attach_projection_head(
            build_segmodel(SegModelConfig(backbone=BackboneConfig(width_multiplier=0.125))),
            ContrastiveConfig(embedding_dim=32),
        ).eval()
        with torch.no_grad():
            norms = model(torch.randn(2, 3, 32, 32)).pow(2).sum(dim=1).sqrt()
        assert float((norms - 1).abs().max()) < 1e-5
        ok = True
    finally:
        announce(3, name, ok)


def test_criterion_04_schedule_exactness(announce):
    name = "poly schedule endpoints and midpoint exact within 1e-12"
    ok = False
    try:
        assert abs(poly_lr(0, 1000, 0.01, 0.9) - 0.01) < 1e-12
        assert abs(poly_lr(1000, 1000, 0.01, 0.9)) < 1e-12
        assert abs(poly_lr(500, 1000, 0.01, 0.9) - 0.01 * 0.5**0.9) < 1e-12
        ok = True
    finally:
        announce(4, name, ok)


def test_criterion_05_gradient_checks(announce):
    name = "finite-difference gradient checks (seg model, siamese head, GAN generator)"
    ok = False
    try:
        start = time.monotonic()
        tiny = SegModelConfig(backbone=BackboneConfig(width_multiplier=0.125), aspp_channels=16, decoder_channels=16)

        torch.manual_seed(0)
        seg = build_segmodel(tiny)
        x = torch.randn(1, 3, 16, 16, dtype=torch.float64)
        target = torch.randint(0, 5, (1, 16, 16))
        finite_difference_check(seg, lambda m: segmentation_loss(m(x), target), num_params=10)

        torch.manual_seed(1)
        siamese = SiameseClassifier(build_segmodel(tiny), head_channels=8)
        feats = torch.randn(1, 2 * siamese.extractor.feature_channels, 4, 4, dtype=torch.float64)

        def head_loss(m):
            logits = F.interpolate(m(feats), size=(16, 16), mode="bilinear", align_corners=False)
            return F.cross_entropy(logits, target)

        finite_difference_check(siamese.fusion_head, head_loss, num_params=10)

        torch.manual_seed(2)
        gen = UNetGenerator(GeneratorConfig("gan1", depth=3, base_channels=8))
        cond = torch.randn(1, 4, 16, 16, dtype=torch.float64)
        gen_target = torch.rand(1, 3, 16, 16, dtype=torch.float64) * 2 - 1
        finite_difference_check(gen, lambda m: F.l1_loss(m(cond), gen_target), num_params=10)

        assert time.monotonic() - start < 300
        ok = True
    finally:
        announce(5, name, ok)


def _overfit(model, loss_closure, threshold, max_steps, lr=2e-3):
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    last = math.inf
    for _ in range(max_steps):
        opt.zero_grad()
        loss = loss_closure()
        loss.backward()
        opt.step()
        last = float(loss.detach())
        if last < threshold:
            break
    return last


def test_criterion_06_overfit_capacity(announce, four_tiles):
    name = "overfit 4 tiles: seg CE < 0.05, siamese CE < 0.05, GAN-1 L1 < 0.08"
    ok = False
    try:
        start = time.monotonic()
        pre = images_to_batch([s.pre_image for s in four_tiles])
        post = images_to_batch([s.post_image for s in four_tiles])
        masks = masks_to_batch([s.post_mask for s in four_tiles])

        torch.manual_seed(0)
        seg = build_segmodel(SegModelConfig())
        seg_loss = _overfit(seg, lambda: segmentation_loss(seg(post), masks), 0.05, 800)
        assert seg_loss < 0.05, f"seg CE {seg_loss:.4f}"

        torch.manual_seed(1)
        siamese = SiameseClassifier(build_segmodel(SegModelConfig()))
        cls_loss = _overfit(siamese, lambda: segmentation_loss(siamese(pre, post), masks), 0.05, 800)
        assert cls_loss < 0.05, f"siamese CE {cls_loss:.4f}"

        torch.manual_seed(2)
        gen = UNetGenerator(GeneratorConfig("gan1"))
        pairs = [_sample_to_pair(s, "gan1", 64) for s in four_tiles]
        cond = torch.stack([p[0] for p in pairs])
        target = torch.stack([p[1] for p in pairs])
        l1 = _overfit(gen, lambda: F.l1_loss(gen(cond), target), 0.08, 800)
        assert l1 < 0.08, f"GAN-1 L1 {l1:.4f}"

        assert time.monotonic() - start < 600
        ok = True
    finally:
        announce(6, name, ok)


def test_criterion_07_desk_training_quality(announce, desk_data):
    name = "200-tile training reaches validation seg F1 >= 0.85"
    ok = False
    try:
        start = time.monotonic()
        train_pool, _, val = desk_data
        ckpt, model = train_desk_segnet(train_pool, val, seed=0, epochs=80)
        from clifgan.experiments import _val_seg_f1

        f1 = _val_seg_f1(model, val)
        assert f1 >= 0.85, f"validation seg F1 {f1:.3f}"
        assert time.monotonic() - start < 900
        ok = True
    finally:
        announce(7, name, ok)


def test_criterion_08_contrastive_trend(announce, regime, capsys):
    name = "low-label regime: median contrastive cls F1 >= vanilla over 3 seeds"
    ok = False
    try:
        start = time.monotonic()
        vanilla, contrastive = [], []
        for seed in (0, 1, 2):
            v, c = contrastive_vs_vanilla(regime, seed)
            vanilla.append(v)
            contrastive.append(c)
        med_v, med_c = statistics.median(vanilla), statistics.median(contrastive)
        with capsys.disabled():
            print(f"    contrastive trend: vanilla median {med_v:.3f}, contrastive median {med_c:.3f}")
        assert med_c >= med_v, f"contrastive {med_c:.3f} < vanilla {med_v:.3f}"
        assert time.monotonic() - start < 2700
        ok = True
    finally:
        announce(8, name, ok)


def test_criterion_09_gan_trend(announce, regime, capsys):
    name = "low-data regime: median cls F1 with GAN-1 samples >= baseline over 3 seeds"
    ok = False
    try:
        start = time.monotonic()
        baselines, gan1s, gan2s = [], [], []
        for seed in (0, 1, 2):
            results = gan_augmentation_trend(regime, seed, include_gan2=(seed == 0))
            baselines.append(results["baseline"])
            gan1s.append(results["gan1"])
            if "gan2" in results:
                gan2s.append(results["gan2"])
        med_b, med_g = statistics.median(baselines), statistics.median(gan1s)
        with capsys.disabled():
            print(f"    gan trend: baseline median {med_b:.3f}, gan1 median {med_g:.3f}, "
                  f"gan2 (reported, ungated) {gan2s[0]:.3f}")
        assert med_g >= med_b, f"gan1 {med_g:.3f} < baseline {med_b:.3f}"
        assert time.monotonic() - start < 3600
        ok = True
    finally:
        announce(9, name, ok)


def test_criterion_10_fusion_properties(announce, desk_data, capsys):
    name = "vote laws (1000 triples), 512-pattern morphology oracle, fused F1 >= mean - 0.01"
    ok = False
    try:
        rng = np.random.default_rng(2024)
        legend = np.array([0, 1, 2, 3, 4, 255], dtype=np.uint8)
        triples = rng.choice(legend, size=(1000, 3))
        import itertools

        for a, b, c in triples:
            masks = [np.full((1, 1), v, np.uint8) for v in (a, b, c)]
            reference = majority_vote(masks)
            for perm in itertools.permutations(masks):
                assert (majority_vote(list(perm)) == reference).all()
            assert majority_vote([masks[0], masks[0], masks[2]])[0, 0] == a

        config = MorphologyConfig(side=3, min_region_area=0)
        for bits in range(512):
            m = np.zeros((9, 9), np.uint8)
            patch = np.array([(bits >> i) & 1 for i in range(9)], np.uint8).reshape(3, 3)
            m[3:6, 3:6] = patch * 4
            assert (morph_filter(m, config) == brute_morph_filter(m, 3, 0)).all()

        train_pool, _, val = desk_data
        member_f1s, fused_f1, _ = fusion_experiment(train_pool, val, seeds=(0, 1, 2), epochs=60)
        mean_member = sum(member_f1s) / len(member_f1s)
        with capsys.disabled():
            print(f"    fusion: members {[f'{v:.3f}' for v in member_f1s]}, fused {fused_f1:.3f}")
        assert fused_f1 >= mean_member - 0.01, f"fused {fused_f1:.3f} < mean {mean_member:.3f} - 0.01"
        ok = True
    finally:
        announce(10, name, ok)


def test_criterion_11_end_to_end_smoke(announce, tmp_path):
    name = "CLI synth-data -> train-seg x3 -> fuse -> eval -> render exits 0"
    ok = False
    try:
        start = time.monotonic()
        from clifgan.cli import run

        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "synthetic": {"canvas_size": 64},
            "schedule": {"max_epochs": 10, "batch_size": 8, "eval_every": 5},
            "train_fraction": 0.75,
        }))
        out = tmp_path / "out"
        base = ["--config", str(cfg), "--out", str(out)]
        assert run(base + ["synth-data", "--count", "16"]) == 0
        for tag in ("a", "b", "c"):
            assert run(base + ["--seed", str(ord(tag)), "train-seg", "--data", str(out / "data"), "--tag", tag]) == 0
        members = [str(out / f"segnet_{t}.pt") for t in ("a", "b", "c")]
        assert run(base + ["fuse", "--members"] + members) == 0
        assert run(base + ["eval", "--data", str(out / "data"), "--method", str(out / "ensemble.json")]) == 0
        report = EvalReport.from_json((out / "eval_report.json").read_text())
        assert 0.0 <= report.segmentation_f1 <= 1.0

        from PIL import Image

        img_path = tmp_path / "black.png"
        mask_path = tmp_path / "mask.png"
        Image.fromarray(np.zeros((8, 8, 3), np.uint8)).save(img_path)
        mask = np.zeros((8, 8), np.uint8)
        mask[0:4, :] = 1
        mask[4:8, :] = 4
        Image.fromarray(mask).save(mask_path)
        overlay_path = out / "overlay.png"
        assert run(base + ["render", "--image", str(img_path), "--mask", str(mask_path),
                           "--out-file", str(overlay_path)]) == 0
        overlay = np.asarray(Image.open(overlay_path).convert("RGB")).astype(int)
        # alpha 0.5 over black: class 1 -> half red, class 4 -> half yellow
        r1, g1, b1 = overlay[1, 1]
        r4, g4, b4 = overlay[6, 6]
        assert r1 > 100 and g1 < 20 and b1 < 20, f"class-1 overlay not red: {(r1, g1, b1)}"
        assert r4 > 100 and g4 > 100 and b4 < 20, f"class-4 overlay not yellow: {(r4, g4, b4)}"

        assert time.monotonic() - start < 1800
        ok = True
    finally:
        announce(11, name, ok)


def test_criterion_12_size_reporting(announce, tmp_path, four_tiles):
    name = "model_size_bytes equals file size; table reproduces published values"
    ok = False
    try:
        model = build_segmodel(SegModelConfig(backbone=BackboneConfig(width_multiplier=0.125)))
        ckpt = ModelCheckpoint(
            weights={k: v.cpu() for k, v in model.state_dict().items()},
            arch_config={"kind": "segmodel", "config": model.config.to_dict()},
            provenance="vanilla",
        )
        path = tmp_path / "model.pt"
        ckpt.save(path)
        assert ckpt.size_bytes == path.stat().st_size
        test_set = DatasetManifest(list(four_tiles.entries), "test", "toy")
        report = evaluate(ckpt, test_set)
        assert report.model_size_bytes == path.stat().st_size

        fixture = [
            EvalReport(0.814, 0.614, [0.6] * 4, 228_000_000, 0.0, method_tag="reproduced 1"),
            EvalReport(0.815, 0.497, [0.5] * 4, 441_000_000, 0.0, method_tag="reproduced 2"),
            EvalReport(0.910, 0.713, [0.7] * 4, 40_000_000, 0.0, method_tag="contrastive"),
            EvalReport(0.893, 0.664, [0.6] * 4, 9_700_000, 0.0, method_tag="transfer learning and fusion"),
        ]
        table = render_comparison_table(fixture)
        for value in ("0.910", "0.893", "0.713", "0.664", "40.0 MB", "9.7 MB"):
            assert value in table, f"missing {value}"
        ok = True
    finally:
        announce(12, name, ok)
