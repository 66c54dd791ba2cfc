"""Lightweight DeepLabv3+-style segmentation net: inverted-residual
(mobilenet-class) backbone, depthwise-separable ASPP and decoder, plus the
supervised training loop (SGD + momentum, per-iteration polynomial LR,
cross-entropy ignoring label 255, patience-based early stopping)."""

import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import ModelCheckpoint
from .data.masks import IGNORE

# (expansion, channels, repeats, stride); overall output stride = 2 * prod(strides)
DEFAULT_STAGE_SPEC = [(1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 2, 2), (6, 64, 2, 2)]


@dataclass
class BackboneConfig:
    kind: str = "mobilenet_class"  # or resnet50_class
    width_multiplier: float = 0.25
    stage_spec: list = field(default_factory=lambda: [list(s) for s in DEFAULT_STAGE_SPEC])
    pretrained: bool = False

    def __post_init__(self):
        if self.width_multiplier <= 0:
            raise ValueError("width_multiplier must be > 0")
        if self.output_stride not in (8, 16):
            raise ValueError(f"backbone output stride must be 8 or 16, got {self.output_stride}")

    @property
    def output_stride(self) -> int:
        return 2 * int(np.prod([s[3] for s in self.stage_spec]))


@dataclass
class SegModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    aspp_rates: list = field(default_factory=lambda: [6, 12, 18])
    aspp_channels: int = 32
    decoder_channels: int = 32
    num_classes: int = 5
    separable_convs: bool = True

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = BackboneConfig(**self.backbone)
        if list(self.aspp_rates) != sorted(set(self.aspp_rates)) or min(self.aspp_rates) <= 0:
            raise ValueError("aspp_rates must be strictly increasing positive ints")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainSchedule:
    initial_lr: float = 0.01
    batch_size: int = 16
    momentum: float = 0.9
    weight_decay: float = 1e-4
    poly_power: float = 0.9
    max_epochs: int = 344
    early_stop_patience: int = 10
    eval_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if min(self.initial_lr, self.poly_power) <= 0 or self.batch_size < 1:
            raise ValueError("rates/powers must be > 0 and batch_size >= 1")


def poly_lr(iteration: int, total_iterations: int, initial_lr: float, power: float) -> float:
    """lr(it) = lr0 * (1 - it/total)^power."""
    if not 0 <= iteration <= total_iterations or total_iterations < 1:
        raise ValueError(f"need 0 <= iteration <= total_iterations >= 1, got {iteration}/{total_iterations}")
    return initial_lr * (1.0 - iteration / total_iterations) ** power


def _width(ch: int, multiplier: float) -> int:
    return max(4, int(round(ch * multiplier)))


def _sep_conv(in_ch, out_ch, kernel=3, dilation=1, separable=True):
    pad = dilation * (kernel // 2)
    if separable and kernel > 1:
        return nn.Sequential(
            nn.Conv2d(in_ch, in_ch, kernel, padding=pad, dilation=dilation, groups=in_ch, bias=False),
            nn.BatchNorm2d(in_ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(in_ch, out_ch, 1, bias=False),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
        )
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel, padding=pad, dilation=dilation, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class InvertedResidual(nn.Module):
    def __init__(self, in_ch, out_ch, expansion, stride):
        super().__init__()
        hidden = in_ch * expansion
        self.use_skip = stride == 1 and in_ch == out_ch
        layers = []
        if expansion != 1:
            layers += [nn.Conv2d(in_ch, hidden, 1, bias=False), nn.BatchNorm2d(hidden), nn.ReLU6(inplace=True)]
        layers += [
            nn.Conv2d(hidden, hidden, 3, stride=stride, padding=1, groups=hidden, bias=False),
            nn.BatchNorm2d(hidden),
            nn.ReLU6(inplace=True),
            nn.Conv2d(hidden, out_ch, 1, bias=False),
            nn.BatchNorm2d(out_ch),
        ]
        self.block = nn.Sequential(*layers)

    def forward(self, x):
        out = self.block(x)
        return x + out if self.use_skip else out


class Bottleneck(nn.Module):
    """Residual bottleneck for the resnet50_class backbone option."""

    def __init__(self, in_ch, out_ch, stride):
        super().__init__()
        mid = max(4, out_ch // 4)
        self.conv = nn.Sequential(
            nn.Conv2d(in_ch, mid, 1, bias=False),
            nn.BatchNorm2d(mid),
            nn.ReLU(inplace=True),
            nn.Conv2d(mid, mid, 3, stride=stride, padding=1, bias=False),
            nn.BatchNorm2d(mid),
            nn.ReLU(inplace=True),
            nn.Conv2d(mid, out_ch, 1, bias=False),
            nn.BatchNorm2d(out_ch),
        )
        self.proj = (
            nn.Sequential(nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False), nn.BatchNorm2d(out_ch))
            if stride != 1 or in_ch != out_ch
            else nn.Identity()
        )

    def forward(self, x):
        return F.relu(self.conv(x) + self.proj(x))


class Backbone(nn.Module):
    """Staged backbone emitting a stride-4 low-level map and the final map."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        w = config.width_multiplier
        stem_ch = _width(32, w)
        self.stem = nn.Sequential(
            nn.Conv2d(3, stem_ch, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(stem_ch),
            nn.ReLU6(inplace=True),
        )
        self.stages = nn.ModuleList()
        in_ch = stem_ch
        stride_so_far = 2
        self.low_level_index = None
        self.low_level_channels = None
        for i, (expansion, channels, repeats, stride) in enumerate(config.stage_spec):
            out_ch = _width(channels, w)
            blocks = []
            for j in range(repeats):
                s = stride if j == 0 else 1
                if config.kind == "resnet50_class":
                    blocks.append(Bottleneck(in_ch, out_ch, s))
                else:
                    blocks.append(InvertedResidual(in_ch, out_ch, expansion, s))
                in_ch = out_ch
            self.stages.append(nn.Sequential(*blocks))
            stride_so_far *= stride
            if stride_so_far == 4 and self.low_level_index is None:
                self.low_level_index = i
                self.low_level_channels = out_ch
        if self.low_level_index is None:
            # stride-4 never reached exactly; tap the first stage
            self.low_level_index = 0
            self.low_level_channels = _width(config.stage_spec[0][1], w)
        self.out_channels = in_ch
        self.output_stride = config.output_stride

    def forward(self, x):
        x = self.stem(x)
        low = None
        for i, stage in enumerate(self.stages):
            x = stage(x)
            if i == self.low_level_index:
                low = x
        return low, x


class ASPP(nn.Module):
    def __init__(self, in_ch, out_ch, rates, separable):
        super().__init__()
        self.branches = nn.ModuleList(
            [_sep_conv(in_ch, out_ch, kernel=1)]
            + [_sep_conv(in_ch, out_ch, kernel=3, dilation=r, separable=separable) for r in rates]
        )
        self.pool = nn.Sequential(
            nn.AdaptiveAvgPool2d(1),
            nn.Conv2d(in_ch, out_ch, 1, bias=False),
            nn.ReLU(inplace=True),
        )
        self.project = _sep_conv(out_ch * (len(self.branches) + 1), out_ch, kernel=1)

    def forward(self, x):
        feats = [b(x) for b in self.branches]
        pooled = F.interpolate(self.pool(x), size=x.shape[-2:], mode="bilinear", align_corners=False)
        return self.project(torch.cat(feats + [pooled], dim=1))


class SegModel(nn.Module):
    """Encoder-decoder segmentation model. `extract_features` returns the
    stride-4 decoder map consumed by the projection head and siamese nets."""

    def __init__(self, config: SegModelConfig):
        super().__init__()
        self.config = config
        self.backbone = Backbone(config.backbone)
        self.output_stride = self.backbone.output_stride
        self.aspp = ASPP(self.backbone.out_channels, config.aspp_channels, config.aspp_rates, config.separable_convs)
        low_red = max(8, config.decoder_channels // 2)
        self.low_project = _sep_conv(self.backbone.low_level_channels, low_red, kernel=1)
        self.decoder = nn.Sequential(
            _sep_conv(config.aspp_channels + low_red, config.decoder_channels, separable=config.separable_convs),
            _sep_conv(config.decoder_channels, config.decoder_channels, separable=config.separable_convs),
        )
        self.classifier = nn.Conv2d(config.decoder_channels, config.num_classes, 1)
        self.feature_channels = config.decoder_channels

    def _check_size(self, x):
        h, w = x.shape[-2:]
        s = self.output_stride
        if h % s or w % s:
            raise ValueError(f"input H,W must be divisible by output stride {s}, got {h}x{w}")

    def extract_features(self, x):
        self._check_size(x)
        low, high = self.backbone(x)
        aspp = self.aspp(high)
        aspp = F.interpolate(aspp, size=low.shape[-2:], mode="bilinear", align_corners=False)
        return self.decoder(torch.cat([aspp, self.low_project(low)], dim=1))

    def forward(self, x):
        feats = self.extract_features(x)
        logits = self.classifier(feats)
        return F.interpolate(logits, size=x.shape[-2:], mode="bilinear", align_corners=False)


def build_segmodel(config: SegModelConfig) -> SegModel:
    return SegModel(config)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def images_to_batch(images) -> torch.Tensor:
    """List of HxWx3 float arrays in [0,1] -> N,3,H,W float tensor."""
    return torch.from_numpy(np.stack([np.moveaxis(im, -1, 0) for im in images])).float()


def masks_to_batch(masks) -> torch.Tensor:
    return torch.from_numpy(np.stack(masks)).long()


def segmentation_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Pixel cross-entropy; label 255 contributes nothing."""
    return F.cross_entropy(logits, targets, ignore_index=IGNORE)


def _derive_rng(seed: int, *parts) -> np.random.Generator:
    import zlib

    key = zlib.crc32("/".join(str(p) for p in parts).encode()) & 0xFFFFFFFF
    return np.random.default_rng((seed, key))


class TrainingDiverged(RuntimeError):
    pass


def run_training(
    model,
    batches_fn,
    loss_fn,
    schedule: TrainSchedule,
    val_fn=None,
    params=None,
    epoch_hook=None,
):
    """Shared SGD training engine.

    batches_fn(epoch) yields batches; loss_fn(model, batch) returns a scalar
    loss; val_fn(model) returns the validation metric (higher is better).
    Keeps the best-validation weights; stops after `early_stop_patience`
    validation checks without improvement. Returns (best_state, train_log).
    """
    torch.manual_seed(schedule.seed)
    params = list(model.parameters()) if params is None else list(params)
    opt = torch.optim.SGD(
        params, lr=schedule.initial_lr, momentum=schedule.momentum, weight_decay=schedule.weight_decay
    )
    batches_per_epoch = max(1, len(list(batches_fn(0, count_only=True))))
    total_iters = schedule.max_epochs * batches_per_epoch
    it = 0
    best_metric = -math.inf
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    checks_without_improvement = 0
    train_log = []
    for epoch in range(schedule.max_epochs):
        model.train()
        epoch_losses = []
        for batch_idx, batch in enumerate(batches_fn(epoch)):
            lr = poly_lr(min(it, total_iters - 1), total_iters, schedule.initial_lr, schedule.poly_power)
            for g in opt.param_groups:
                g["lr"] = lr
            opt.zero_grad()
            loss = loss_fn(model, batch)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {batch_idx}")
            loss.backward()
            opt.step()
            epoch_losses.append(float(loss.detach()))
            it += 1
        mean_loss = float(np.mean(epoch_losses)) if epoch_losses else math.nan
        val_metric = None
        if val_fn is not None and (epoch + 1) % schedule.eval_every == 0:
            model.eval()
            with torch.no_grad():
                val_metric = float(val_fn(model))
            if val_metric > best_metric:
                best_metric = val_metric
                best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
                checks_without_improvement = 0
            else:
                checks_without_improvement += 1
        train_log.append((epoch, mean_loss, val_metric, lr))
        if epoch_hook is not None:
            epoch_hook(epoch, model)
        if val_fn is not None and checks_without_improvement >= schedule.early_stop_patience:
            break
    if val_fn is None:
        best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    return best_state, train_log


def _make_batches(manifest, schedule, image_attr, mask_attr, aug_config=None):
    """Seeded shuffled mini-batches of (images, masks) tensors per epoch."""
    from .data.augment import augment

    def batches(epoch, count_only=False):
        n = len(manifest)
        order = _derive_rng(schedule.seed, "order", epoch).permutation(n)
        idx_batches = [order[i : i + schedule.batch_size] for i in range(0, n, schedule.batch_size)]
        if count_only:
            yield from ([None] * len(idx_batches))
            return
        for idxs in idx_batches:
            images, targets = [], []
            for i in idxs:
                s = manifest.entries[i]
                if aug_config is not None:
                    s = augment(s, aug_config, _derive_rng(aug_config.seed, "aug", epoch, s.id))
                images.append(getattr(s, image_attr))
                targets.append(getattr(s, mask_attr))
            yield images_to_batch(images), masks_to_batch(targets)

    return batches


def validation_seg_f1(model, manifest, image_attr="post_image", mask_attr="post_mask"):
    from .metrics import aggregate_confusion, seg_f1_from_confusion

    conf = None
    for s in manifest:
        pred = predict_mask(model, getattr(s, image_attr))
        conf = aggregate_confusion(conf, pred, getattr(s, mask_attr))
    return seg_f1_from_confusion(conf)


def validation_cls_f1(model, manifest, image_attr="post_image", mask_attr="post_mask"):
    from .metrics import aggregate_confusion, cls_f1_from_confusion

    conf = None
    for s in manifest:
        pred = predict_mask(model, getattr(s, image_attr))
        conf = aggregate_confusion(conf, pred, getattr(s, mask_attr))
    overall, _ = cls_f1_from_confusion(conf)
    return overall


def train_vanilla(
    model: SegModel,
    train,
    val,
    schedule: TrainSchedule,
    aug_config=None,
    image_attr: str = "post_image",
    mask_attr: str = "post_mask",
    val_metric: str = "seg_f1",
) -> ModelCheckpoint:
    """Supervised cross-entropy training of a segmentation model."""
    if len(train) == 0:
        raise ValueError("train manifest is empty")
    if val is None or len(val) == 0:
        raise ValueError("validation manifest is required and must be nonempty")
    metric_fn = validation_seg_f1 if val_metric == "seg_f1" else validation_cls_f1

    def loss_fn(m, batch):
        images, targets = batch
        return segmentation_loss(m(images), targets)

    best_state, log = run_training(
        model,
        _make_batches(train, schedule, image_attr, mask_attr, aug_config),
        loss_fn,
        schedule,
        val_fn=lambda m: metric_fn(m, val, image_attr, mask_attr),
    )
    model.load_state_dict(best_state)
    return ModelCheckpoint(
        weights={k: v.cpu() for k, v in best_state.items()},
        arch_config={"kind": "segmodel", "config": model.config.to_dict()},
        provenance="vanilla",
        train_log=log,
    )


def model_from_checkpoint(ckpt: ModelCheckpoint) -> SegModel:
    if ckpt.arch_config.get("kind") != "segmodel":
        raise ValueError(f"not a segmentation checkpoint: {ckpt.arch_config.get('kind')}")
    model = build_segmodel(SegModelConfig(**ckpt.arch_config["config"]))
    model.load_state_dict(ckpt.weights)
    model.eval()
    return model


def predict_mask(model_or_ckpt, image) -> np.ndarray:
    """Per-pixel argmax; ties break toward the lower class index."""
    model = model_from_checkpoint(model_or_ckpt) if isinstance(model_or_ckpt, ModelCheckpoint) else model_or_ckpt
    was_training = model.training
    model.eval()
    with torch.no_grad():
        logits = model(images_to_batch([image]))
    if was_training:
        model.train()
    return logits_to_mask(logits[0])


def logits_to_mask(logits: torch.Tensor) -> np.ndarray:
    """C,H,W logits -> H,W argmax mask with lower-index tie-break."""
    arr = logits.detach().cpu().numpy()
    # np.argmax returns the first (lowest) index on ties
    return np.argmax(arr, axis=0).astype(np.uint8)
