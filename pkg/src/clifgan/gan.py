"""Paired image-to-image GANs for disaster data augmentation.

Variant gan1 ("mask controllable") maps (pre-image RGB, damage-mask channel)
to a post-disaster image; variant gan2 ("random disaster creator") emits a
4-channel (post-image, post-mask) output. U-Net generator, patch
discriminator, BCE adversarial loss plus weighted L1."""

import warnings
from dataclasses import dataclass

import cv2
import numpy as np
import scipy.ndimage as ndi
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import ModelCheckpoint
from .data.masks import IGNORE
from .data.samples import Provenance, TileSample
from .data.manifest import DatasetManifest
from .segnet import _derive_rng


@dataclass
class GeneratorConfig:
    variant: str = "gan1"  # gan1 | gan2
    depth: int = 4
    base_channels: int = 32

    def __post_init__(self):
        if self.variant not in ("gan1", "gan2"):
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def in_channels(self) -> int:
        return 4

    @property
    def out_channels(self) -> int:
        return 3 if self.variant == "gan1" else 4


@dataclass
class DiscriminatorConfig:
    layers: int = 3
    base_channels: int = 32


@dataclass
class GanTrainConfig:
    adversarial_loss: str = "bce"  # bce | lsgan
    l1_weight: float = 100.0
    lr: float = 2e-4
    beta1: float = 0.5
    epochs: int = 40
    batch_size: int = 4
    image_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.l1_weight < 0:
            raise ValueError("l1_weight must be >= 0")


@dataclass
class MaskEditSpec:
    mode: str = "set_all"  # set_all | per_building_map | randomize
    target_level: int = 4
    mapping: dict = None
    level_distribution: tuple = (0.25, 0.25, 0.25, 0.25)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("set_all", "per_building_map", "randomize"):
            raise ValueError(f"unknown edit mode {self.mode!r}")
        if not 1 <= self.target_level <= 4:
            raise ValueError("target_level must be in 1..4")
        if abs(sum(self.level_distribution) - 1.0) > 1e-9:
            raise ValueError("level_distribution must sum to 1")


def edit_mask(mask: np.ndarray, footprints: np.ndarray, spec: MaskEditSpec, rng: np.random.Generator) -> np.ndarray:
    """Assign a damage level to every building (connected footprint component)."""
    if not set(np.unique(footprints)) <= {0, 1}:
        raise ValueError("footprints must be binary")
    if not footprints.any():
        warnings.warn("edit_mask: empty footprint mask, returned unchanged")
        return mask.copy()
    components, n = ndi.label(footprints)
    out = np.zeros_like(mask)
    for b in range(1, n + 1):
        region = components == b
        if spec.mode == "set_all":
            level = spec.target_level
        elif spec.mode == "per_building_map":
            if spec.mapping and b in spec.mapping:
                level = spec.mapping[b]
            else:
                existing = mask[region]
                existing = existing[(existing >= 1) & (existing <= 4)]
                level = int(np.bincount(existing).argmax()) if existing.size else 1
        else:
            level = int(rng.choice([1, 2, 3, 4], p=np.asarray(spec.level_distribution)))
        out[region] = level
    return out


def _norm_image(img: np.ndarray) -> np.ndarray:
    """[0,1] image -> [-1,1]."""
    return img.astype(np.float32) * 2.0 - 1.0


def _denorm_image(img: np.ndarray) -> np.ndarray:
    return np.clip((img + 1.0) / 2.0, 0.0, 1.0).astype(np.float32)


def _norm_mask(mask: np.ndarray) -> np.ndarray:
    """Legend level -> level/4 -> [-1,1]; ignore pixels treated as background."""
    m = mask.astype(np.float32)
    m[mask == IGNORE] = 0.0
    return m / 4.0 * 2.0 - 1.0


def _discretize_mask(channel: np.ndarray) -> np.ndarray:
    """Inverse of _norm_mask with nearest-level rounding."""
    levels = np.clip(np.round((channel + 1.0) / 2.0 * 4.0), 0, 4)
    return levels.astype(np.uint8)


class _Down(nn.Module):
    def __init__(self, in_ch, out_ch, norm=True):
        super().__init__()
        layers = [nn.Conv2d(in_ch, out_ch, 4, stride=2, padding=1, bias=not norm)]
        if norm:
            layers.append(nn.InstanceNorm2d(out_ch, affine=True))
        layers.append(nn.LeakyReLU(0.2, inplace=True))
        self.block = nn.Sequential(*layers)

    def forward(self, x):
        return self.block(x)


class _Up(nn.Module):
    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.block = nn.Sequential(
            nn.ConvTranspose2d(in_ch, out_ch, 4, stride=2, padding=1, bias=False),
            nn.InstanceNorm2d(out_ch, affine=True),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.block(x)


class UNetGenerator(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        b = config.base_channels
        chans = [min(b * 2**i, b * 8) for i in range(config.depth)]
        self.downs = nn.ModuleList()
        in_ch = config.in_channels
        for i, c in enumerate(chans):
            self.downs.append(_Down(in_ch, c, norm=i > 0))
            in_ch = c
        self.ups = nn.ModuleList()
        for i in reversed(range(1, config.depth)):
            self.ups.append(_Up(in_ch, chans[i - 1]))
            in_ch = chans[i - 1] * 2  # skip concat
        self.final = nn.ConvTranspose2d(in_ch, config.out_channels, 4, stride=2, padding=1)

    def forward(self, x):
        h, w = x.shape[-2:]
        d = 2**self.config.depth
        if h % d or w % d:
            raise ValueError(f"input H,W must be divisible by 2^depth = {d}, got {h}x{w}")
        skips = []
        for down in self.downs:
            x = down(x)
            skips.append(x)
        for i, up in enumerate(self.ups):
            x = up(x)
            x = torch.cat([x, skips[-2 - i]], dim=1)
        return torch.tanh(self.final(x))


class PatchDiscriminator(nn.Module):
    """Scores overlapping patches of a (condition, candidate) channel concat."""

    def __init__(self, config: DiscriminatorConfig, candidate_channels: int):
        super().__init__()
        b = config.base_channels
        layers = [_Down(4 + candidate_channels, b, norm=False)]
        ch = b
        for i in range(1, config.layers):
            nxt = min(b * 2**i, b * 8)
            layers.append(_Down(ch, nxt))
            ch = nxt
        layers.append(nn.Conv2d(ch, 1, 4, stride=1, padding=1))
        self.model = nn.Sequential(*layers)

    def forward(self, condition, candidate):
        return self.model(torch.cat([condition, candidate], dim=1))


def build_gan(variant: str, gen_config: GeneratorConfig = None, disc_config: DiscriminatorConfig = None):
    gen_config = gen_config or GeneratorConfig(variant=variant)
    disc_config = disc_config or DiscriminatorConfig()
    if gen_config.variant != variant:
        raise ValueError(f"generator config variant {gen_config.variant!r} != {variant!r}")
    return UNetGenerator(gen_config), PatchDiscriminator(disc_config, gen_config.out_channels)


def _sample_to_pair(sample: TileSample, variant: str, image_size: int):
    """(condition 4ch, target 3 or 4 ch) tensors in [-1,1] at image_size."""
    def rs(a, nearest=False):
        if a.shape[:2] == (image_size, image_size):
            return a
        interp = cv2.INTER_NEAREST if nearest else cv2.INTER_LINEAR
        return cv2.resize(a, (image_size, image_size), interpolation=interp)

    cond = np.concatenate(
        [_norm_image(rs(sample.pre_image)), _norm_mask(rs(sample.post_mask, nearest=True))[..., None]],
        axis=-1,
    )
    target = _norm_image(rs(sample.post_image))
    if variant == "gan2":
        target = np.concatenate([target, _norm_mask(rs(sample.post_mask, nearest=True))[..., None]], axis=-1)
    to_t = lambda a: torch.from_numpy(np.moveaxis(a, -1, 0)).float()
    return to_t(cond), to_t(target)


def train_gan(generator, discriminator, train, config: GanTrainConfig, checkpoint_dir=None):
    """Alternating D/G optimization; returns (generator, discriminator) checkpoints."""
    if len(train) == 0:
        raise ValueError("train manifest is empty")
    torch.manual_seed(config.seed)
    variant = generator.config.variant
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.lr, betas=(config.beta1, 0.999))
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=config.lr, betas=(config.beta1, 0.999))
    if config.adversarial_loss == "bce":
        adv = lambda scores, real: F.binary_cross_entropy_with_logits(
            scores, torch.full_like(scores, 1.0 if real else 0.0)
        )
    else:
        adv = lambda scores, real: F.mse_loss(scores, torch.full_like(scores, 1.0 if real else 0.0))

    pairs = [_sample_to_pair(s, variant, config.image_size) for s in train]
    log = []
    for epoch in range(config.epochs):
        order = _derive_rng(config.seed, "gan-order", epoch).permutation(len(pairs))
        epoch_g, epoch_d = [], []
        for start in range(0, len(order), config.batch_size):
            idxs = order[start : start + config.batch_size]
            cond = torch.stack([pairs[i][0] for i in idxs])
            target = torch.stack([pairs[i][1] for i in idxs])

            fake = generator(cond)
            # discriminator step
            opt_d.zero_grad()
            d_loss = 0.5 * (adv(discriminator(cond, target), True) + adv(discriminator(cond, fake.detach()), False))
            d_loss.backward()
            opt_d.step()
            # generator step
            opt_g.zero_grad()
            g_loss = adv(discriminator(cond, fake), True) + config.l1_weight * F.l1_loss(fake, target)
            g_loss.backward()
            opt_g.step()
            if not (torch.isfinite(d_loss) and torch.isfinite(g_loss)):
                raise RuntimeError(f"non-finite GAN loss at epoch {epoch}, batch {start // config.batch_size}")
            epoch_g.append(float(g_loss.detach()))
            epoch_d.append(float(d_loss.detach()))
        log.append((epoch, float(np.mean(epoch_g)), float(np.mean(epoch_d)), config.lr))
        if checkpoint_dir is not None:
            _gan_checkpoint(generator, variant, log).save(f"{checkpoint_dir}/gan_{variant}_gen_epoch{epoch}.pt")

    gen_ckpt = _gan_checkpoint(generator, variant, log)
    disc_ckpt = ModelCheckpoint(
        weights={k: v.detach().cpu().clone() for k, v in discriminator.state_dict().items()},
        arch_config={"kind": "patch_discriminator", "candidate_channels": generator.config.out_channels},
        provenance="gan_discriminator",
        train_log=log,
    )
    return gen_ckpt, disc_ckpt


def _gan_checkpoint(generator, variant, log):
    return ModelCheckpoint(
        weights={k: v.detach().cpu().clone() for k, v in generator.state_dict().items()},
        arch_config={"kind": "unet_generator", "config": generator.config.__dict__.copy()},
        provenance="gan_generator",
        train_log=list(log),
    )


def generator_from_checkpoint(ckpt: ModelCheckpoint) -> UNetGenerator:
    if ckpt.provenance != "gan_generator":
        raise ValueError(f"expected gan_generator checkpoint, got {ckpt.provenance}")
    gen = UNetGenerator(GeneratorConfig(**ckpt.arch_config["config"]))
    gen.load_state_dict(ckpt.weights)
    gen.eval()
    return gen


def synthesize(generator_ckpt, pre_image: np.ndarray, desired_mask: np.ndarray, sample_id: str = "synth") -> TileSample:
    """Run the generator; for gan1 the control mask IS the output label."""
    gen = generator_from_checkpoint(generator_ckpt) if isinstance(generator_ckpt, ModelCheckpoint) else generator_ckpt
    if pre_image.shape[:2] != desired_mask.shape:
        raise ValueError(f"size mismatch: image {pre_image.shape[:2]} vs mask {desired_mask.shape}")
    cond = np.concatenate([_norm_image(pre_image), _norm_mask(desired_mask)[..., None]], axis=-1)
    with torch.no_grad():
        out = gen(torch.from_numpy(np.moveaxis(cond, -1, 0)).float()[None])[0].numpy()
    out = np.moveaxis(out, 0, -1)
    variant = gen.config.variant
    if variant == "gan1":
        post_image = _denorm_image(out)
        post_mask = desired_mask.copy()
        provenance = Provenance.GAN1_SYNTHETIC
    else:
        post_image = _denorm_image(out[..., :3])
        post_mask = _discretize_mask(out[..., 3])
        provenance = Provenance.GAN2_SYNTHETIC
    footprints = ((desired_mask >= 1) & (desired_mask <= 4)).astype(np.uint8)
    return TileSample(
        id=sample_id,
        pre_image=pre_image.astype(np.float32),
        post_image=post_image,
        pre_mask=footprints,
        post_mask=post_mask,
        provenance=provenance,
    )


def augment_dataset(base: DatasetManifest, generator_ckpt, count: int, edit_spec: MaskEditSpec, rng: np.random.Generator) -> DatasetManifest:
    """Append `count` synthesized samples built from base pre-images with edited masks."""
    if count <= 0:
        raise ValueError("count must be > 0")
    if len(base) == 0:
        raise ValueError("base manifest is empty")
    gen = generator_from_checkpoint(generator_ckpt) if isinstance(generator_ckpt, ModelCheckpoint) else generator_ckpt
    tag = gen.config.variant
    entries = list(base.entries)
    for i in range(count):
        src = base.entries[i % len(base)]
        edited = edit_mask(src.post_mask, src.pre_mask, edit_spec, rng)
        entries.append(synthesize(gen, src.pre_image, edited, sample_id=f"{src.id}-{tag}-{i}"))
    return DatasetManifest(entries, base.split_tag, base.source_note + f" [+{count} {tag} synthetic]")
