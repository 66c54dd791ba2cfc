import math

import numpy as np
import pytest
import torch

from clifgan.contrastive import (
    ContrastiveConfig,
    ModelWithHead,
    ProjectionHead,
    attach_projection_head,
    downsample_labels,
    remove_projection_head,
    sample_pixels,
    within_image_loss,
)
from clifgan.segnet import BackboneConfig, SegModelConfig, build_segmodel

from oracles import brute_within_image_loss


def _tiny_model():
    return build_segmodel(
        SegModelConfig(backbone=BackboneConfig(width_multiplier=0.125), aspp_channels=16, decoder_channels=16)
    )


def _unit(v):
    return v / np.linalg.norm(v)


def test_head_output_shape_and_norm():
    config = ContrastiveConfig(embedding_dim=32)
    model = attach_projection_head(_tiny_model(), config).eval()
    with torch.no_grad():
        out = model(torch.randn(2, 3, 32, 32))
    assert out.shape[:2] == (2, 32)
    norms = out.pow(2).sum(dim=1).sqrt()
    assert float((norms - 1).abs().max()) < 1e-5


def test_remove_head_restores_model():
    base = _tiny_model()
    with_head = attach_projection_head(base, ContrastiveConfig())
    restored = remove_projection_head(with_head)
    assert restored is base
    assert restored(torch.randn(1, 3, 32, 32)).shape == (1, 5, 32, 32)


def test_projection_head_is_three_pointwise_convs():
    head = ProjectionHead(16, 8)
    convs = [m for m in head.convs if isinstance(m, torch.nn.Conv2d)]
    assert len(convs) == 3
    assert all(c.kernel_size == (1, 1) for c in convs)


def test_loss_two_orthogonal_classes_closed_form():
    # n embeddings per class, same-class identical, cross-class orthogonal:
    # every anchor sees (n-1) positives at sim 1/tau and n negatives at 0
    tau = 0.1
    n = 4
    e1 = np.zeros(8); e1[0] = 1.0
    e2 = np.zeros(8); e2[1] = 1.0
    emb = np.stack([e1] * n + [e2] * n)
    classes = [0] * n + [1] * n
    expected = -math.log(
        (n - 1) * math.exp(1 / tau) / ((n - 1) * math.exp(1 / tau) + n * math.exp(0.0))
    )
    z = torch.from_numpy(emb.T.reshape(8, 2 * n, 1))[None]
    labels = np.array(classes, dtype=np.uint8).reshape(1, 2 * n, 1)
    config = ContrastiveConfig(temperature=tau, pixels_per_class=n)
    loss = within_image_loss(z, labels, config)
    assert float(loss) == pytest.approx(expected, rel=1e-9)


def test_loss_single_class_is_zero_with_warning():
    z = torch.randn(1, 8, 4, 4)
    z = z / z.norm(dim=1, keepdim=True)
    labels = np.ones((1, 4, 4), dtype=np.uint8)
    with pytest.warns(UserWarning):
        loss = within_image_loss(z, labels, ContrastiveConfig())
    assert float(loss) == 0.0


def test_loss_matches_brute_force(rng):
    config = ContrastiveConfig(temperature=0.1, pixels_per_class=3)
    for _ in range(50):
        h, w = 3, 3
        emb = rng.normal(size=(8, h * w))
        emb /= np.linalg.norm(emb, axis=0, keepdims=True)
        labels = rng.choice([1, 2, 3], size=(h, w)).astype(np.uint8)
        z = torch.from_numpy(emb.reshape(8, h, w))[None]
        sample_rng = np.random.default_rng(7)
        loss = within_image_loss(z, labels[None], config, rng=sample_rng)
        # replay the sampling to feed the oracle the same pixels
        groups = sample_pixels(labels, config.pixels_per_class, np.random.default_rng(7))
        if len(groups) < 2:
            continue
        idx = np.concatenate([g[1] for g in groups])
        cls = np.concatenate([np.full(len(g[1]), g[0]) for g in groups])
        expected = brute_within_image_loss(emb[:, idx].T, cls, 0.1)
        assert float(loss) == pytest.approx(expected, rel=1e-6)


def test_loss_invariant_under_pixel_permutation(rng):
    config = ContrastiveConfig(temperature=0.2, pixels_per_class=64)
    emb = rng.normal(size=(8, 16))
    emb /= np.linalg.norm(emb, axis=0, keepdims=True)
    labels = np.array([1] * 8 + [2] * 8, dtype=np.uint8)
    perm = rng.permutation(16)
    z1 = torch.from_numpy(emb.reshape(8, 4, 4)).float()[None]
    z2 = torch.from_numpy(emb[:, perm].reshape(8, 4, 4)).float()[None]
    l1 = within_image_loss(z1, labels.reshape(1, 4, 4), config)
    l2 = within_image_loss(z2, labels[perm].reshape(1, 4, 4), config)
    assert float(l1) == pytest.approx(float(l2), rel=1e-6)


def test_loss_invariant_under_global_rotation(rng):
    config = ContrastiveConfig(temperature=0.1, pixels_per_class=64)
    emb = rng.normal(size=(8, 16))
    emb /= np.linalg.norm(emb, axis=0, keepdims=True)
    q, _ = np.linalg.qr(rng.normal(size=(8, 8)))
    labels = rng.choice([1, 2], size=16).astype(np.uint8).reshape(1, 4, 4)
    l1 = within_image_loss(torch.from_numpy(emb.reshape(8, 4, 4)).float()[None], labels, config)
    l2 = within_image_loss(torch.from_numpy((q @ emb).reshape(8, 4, 4)).float()[None], labels, config)
    assert float(l1) == pytest.approx(float(l2), rel=1e-5)


def test_loss_decomposes_over_images(rng):
    # pixels_per_class exceeds every class count, so sampling is exhaustive
    # and the batch loss must be the mean of single-image losses
    config = ContrastiveConfig(temperature=0.1, pixels_per_class=64)
    emb = rng.normal(size=(2, 8, 4, 4))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    labels = np.stack(
        [np.array([1] * 8 + [2] * 8).reshape(4, 4), np.array([3] * 6 + [4] * 10).reshape(4, 4)]
    ).astype(np.uint8)
    z = torch.from_numpy(emb).float()
    batch = float(within_image_loss(z, labels, config))
    l0 = float(within_image_loss(z[:1], labels[:1], config))
    l1 = float(within_image_loss(z[1:], labels[1:], config))
    assert batch == pytest.approx((l0 + l1) / 2, rel=1e-6)
    # and image 0's term is untouched by what image 1 contains
    z_alt = z.clone()
    z_alt[1] = torch.from_numpy(_unit(rng.normal(size=8))).float()[:, None, None]
    batch_alt = float(within_image_loss(z_alt, labels, config))
    l1_alt = float(within_image_loss(z_alt[1:], labels[1:], config))
    assert batch_alt == pytest.approx((l0 + l1_alt) / 2, rel=1e-6)


def test_ignore_pixels_never_sampled(rng):
    labels = np.full((4, 4), 255, dtype=np.uint8)
    labels[0, :2] = 1
    labels[1, :2] = 2
    groups = sample_pixels(labels, 8, rng)
    picked = np.concatenate([g[1] for g in groups])
    assert all(labels.reshape(-1)[i] != 255 for i in picked)


def test_downsample_labels_nearest():
    mask = np.arange(16, dtype=np.uint8).reshape(4, 4) % 5
    down = downsample_labels(mask, (2, 2))
    assert down.shape == (2, 2)
    assert set(np.unique(down)) <= set(np.unique(mask))


def test_config_validation():
    with pytest.raises(ValueError):
        ContrastiveConfig(temperature=0)
    with pytest.raises(ValueError):
        ContrastiveConfig(pixels_per_class=1)


def test_gradient_flows_through_head():
    config = ContrastiveConfig(embedding_dim=16, pixels_per_class=8)
    model = attach_projection_head(_tiny_model(), config)
    emb = model(torch.randn(1, 3, 32, 32))
    labels = np.zeros((1, 8, 8), dtype=np.uint8)
    labels[0, :4] = 1
    labels[0, 4:] = 2
    loss = within_image_loss(emb, labels, config)
    loss.backward()
    head_grads = [p.grad for p in model.head.parameters()]
    assert all(g is not None for g in head_grads)
    assert any(float(g.abs().sum()) > 0 for g in head_grads)
