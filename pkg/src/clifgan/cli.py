"""Command-line orchestration of the full pipeline, with JSON configs, run
manifests, and overlay/table rendering.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error."""

import argparse
import datetime
import hashlib
import json
import os
import sys
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as D
from .checkpoint import ModelCheckpoint
from .metrics import EvalReport, Timer, evaluate, render_comparison_table
from .render import render_overlay
from .segnet import SegModelConfig, TrainSchedule, build_segmodel, train_vanilla


class ConfigError(ValueError):
    pass


def stage_seed(global_seed: int, stage: str) -> int:
    """Fan one global seed out to deterministic per-stage seeds."""
    return (global_seed * 1000003 + zlib.crc32(stage.encode())) % 2**31


@dataclass
class PipelineConfig:
    """Per-stage sections of one JSON config file; flags override."""

    seed: int = 0
    out_dir: str = "out"
    data_fraction: float = 1.0
    synthetic: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    contrastive: dict = field(default_factory=dict)
    gan: dict = field(default_factory=dict)
    edit: dict = field(default_factory=dict)
    augmentation: dict = field(default_factory=dict)
    fusion: dict = field(default_factory=dict)
    synth_count: int = 100
    train_fraction: float = 0.9

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            raw = json.loads(Path(path).read_text())
            cfg = cls(**raw)
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"bad config {path}: {exc}") from exc
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            self.seg_model_config()
            self.train_schedule("validate")
            if self.synthetic:
                D.SyntheticSceneSpec(**self.synthetic)
            if self.augmentation:
                D.AugmentationConfig(**self.augmentation)
            if not 0 < self.data_fraction <= 1:
                raise ValueError(f"data_fraction must be in (0,1], got {self.data_fraction}")
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    def seg_model_config(self) -> SegModelConfig:
        return SegModelConfig(**self.model)

    def train_schedule(self, stage: str) -> TrainSchedule:
        return TrainSchedule(**{**self.schedule, "seed": stage_seed(self.seed, stage)})

    def aug_config(self, stage: str):
        if not self.augmentation:
            return None
        return D.AugmentationConfig(**{**self.augmentation, "seed": stage_seed(self.seed, stage + "-aug")})


def write_run_manifest(out_dir: Path, command, config: PipelineConfig, inputs, outputs, timer: Timer) -> Path:
    def file_hash(p):
        p = Path(p)
        if p.is_dir():
            p = p / "manifest.json"
        if not p.exists():
            return None
        return hashlib.sha256(p.read_bytes()).hexdigest()

    runs = out_dir / "runs"
    runs.mkdir(parents=True, exist_ok=True)
    stamp = datetime.datetime.now().strftime("%Y%m%dT%H%M%S%f")
    manifest = {
        "command": command,
        "config": config.__dict__,
        "input_hashes": {str(p): file_hash(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "started": datetime.datetime.fromtimestamp(timer.start_wall).isoformat(),
        "elapsed_seconds": timer.elapsed,
        "seed": config.seed,
    }
    path = runs / f"{stamp}-{command[0]}.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    out = args.out or os.environ.get("CLIFGAN_OUT")
    if out:
        cfg.out_dir = out
    if args.data_fraction is not None:
        cfg.data_fraction = args.data_fraction
        if not 0 < cfg.data_fraction <= 1:
            raise ConfigError(f"--data-fraction must be in (0,1], got {cfg.data_fraction}")
    return cfg


def _load_training_data(cfg: PipelineConfig, data_path, stage: str):
    manifest = D.load_manifest(data_path)
    if cfg.data_fraction < 1.0:
        manifest = D.subsample(manifest, cfg.data_fraction, stage_seed(cfg.seed, stage + "-sub"))
    return D.split_train_val(manifest, cfg.train_fraction, stage_seed(cfg.seed, stage + "-split"))


def cmd_synth_data(args, cfg: PipelineConfig, out_dir: Path):
    spec = D.SyntheticSceneSpec(**{**cfg.synthetic, "texture_seed": stage_seed(cfg.seed, "texture")})
    manifest = D.generate_synthetic_dataset(spec, args.count or cfg.synth_count, stage_seed(cfg.seed, "synth-data"))
    path = D.save_manifest(manifest, out_dir / "data")
    print(f"wrote {len(manifest)} synthetic tiles to {path.parent}")
    return [], [path.parent]


def cmd_ingest(args, cfg: PipelineConfig, out_dir: Path):
    manifest = D.ingest_xbd(args.labels, args.images)
    path = D.save_manifest(manifest, out_dir / "data")
    print(f"ingested {len(manifest)} samples to {path.parent}")
    return [args.labels, args.images], [path.parent]


def cmd_train_seg(args, cfg: PipelineConfig, out_dir: Path):
    train, val = _load_training_data(cfg, args.data, f"train-seg-{args.tag}")
    if args.gan in ("gan1", "gan2"):
        from .gan import MaskEditSpec, augment_dataset

        gen = ModelCheckpoint.load(args.gan_ckpt)
        spec = MaskEditSpec(**{**cfg.edit, "seed": stage_seed(cfg.seed, "edit")})
        rng = np.random.default_rng(stage_seed(cfg.seed, "gan-augment"))
        train = augment_dataset(train, gen, args.gan_count or len(train), spec, rng)
    model = build_segmodel(cfg.seg_model_config())
    with Timer() as t:
        ckpt = train_vanilla(
            model, train, val, cfg.train_schedule(f"train-seg-{args.tag}"), cfg.aug_config("train-seg")
        )
    path = out_dir / f"segnet_{args.tag}.pt"
    ckpt.save(path)
    print(f"trained segmentation model -> {path} ({t.elapsed:.1f}s)")
    return [args.data], [path]


def cmd_pretrain_cl(args, cfg: PipelineConfig, out_dir: Path):
    from .contrastive import ContrastiveConfig, attach_projection_head, pretrain

    manifest = D.load_manifest(args.data)
    ccfg = ContrastiveConfig(**{**cfg.contrastive, "seed": stage_seed(cfg.seed, "pretrain-cl")})
    model = attach_projection_head(build_segmodel(cfg.seg_model_config()), ccfg)
    with Timer() as t:
        ckpt = pretrain(model, manifest, ccfg, cfg.train_schedule("pretrain-cl"), cfg.aug_config("pretrain-cl"))
    path = out_dir / "pretrained.pt"
    ckpt.save(path)
    print(f"contrastive pre-training done -> {path} ({t.elapsed:.1f}s)")
    return [args.data], [path]


def cmd_finetune_cl(args, cfg: PipelineConfig, out_dir: Path):
    from .contrastive import finetune

    train, val = _load_training_data(cfg, args.data, "finetune-cl")
    pretrained = ModelCheckpoint.load(args.pretrained)
    with Timer() as t:
        ckpt = finetune(pretrained, train, val, cfg.train_schedule("finetune-cl"), cfg.aug_config("finetune-cl"))
    path = out_dir / "finetuned.pt"
    ckpt.save(path)
    print(f"fine-tuning done -> {path} ({t.elapsed:.1f}s)")
    return [args.data, args.pretrained], [path]


def cmd_train_gan(args, cfg: PipelineConfig, out_dir: Path):
    from .gan import GanTrainConfig, build_gan, train_gan

    manifest = D.load_manifest(args.data)
    gcfg = GanTrainConfig(**{**cfg.gan, "seed": stage_seed(cfg.seed, f"train-{args.variant}")})
    gen, disc = build_gan(args.variant)
    with Timer() as t:
        gen_ckpt, disc_ckpt = train_gan(gen, disc, manifest, gcfg)
    gpath = out_dir / f"{args.variant}_generator.pt"
    dpath = out_dir / f"{args.variant}_discriminator.pt"
    gen_ckpt.save(gpath)
    disc_ckpt.save(dpath)
    print(f"trained {args.variant} -> {gpath} ({t.elapsed:.1f}s)")
    return [args.data], [gpath, dpath]


def cmd_augment(args, cfg: PipelineConfig, out_dir: Path):
    from .gan import MaskEditSpec, augment_dataset

    manifest = D.load_manifest(args.data)
    gen = ModelCheckpoint.load(args.generator)
    spec = MaskEditSpec(**{**cfg.edit, "seed": stage_seed(cfg.seed, "edit")})
    rng = np.random.default_rng(stage_seed(cfg.seed, "augment"))
    augmented = augment_dataset(manifest, gen, args.count, spec, rng)
    path = D.save_manifest(augmented, out_dir / "augmented")
    print(f"augmented {len(manifest)} -> {len(augmented)} samples at {path.parent}")
    return [args.data, args.generator], [path.parent]


def cmd_train_cls(args, cfg: PipelineConfig, out_dir: Path):
    from .classify import build_siamese, train_classifier

    train, val = _load_training_data(cfg, args.data, "train-cls")
    seg_ckpt = ModelCheckpoint.load(args.seg_ckpt)
    classifier = build_siamese(seg_ckpt)
    with Timer() as t:
        ckpt = train_classifier(
            classifier, train, val, cfg.train_schedule("train-cls"),
            freeze_extractor=args.freeze_extractor, aug_config=cfg.aug_config("train-cls"),
        )
    path = out_dir / "siamese.pt"
    ckpt.save(path)
    print(f"trained siamese classifier -> {path} ({t.elapsed:.1f}s)")
    return [args.data, args.seg_ckpt], [path]


def cmd_fuse(args, cfg: PipelineConfig, out_dir: Path):
    from .fuse import Ensemble
    import json as _json

    members = [str(p) for p in args.members]
    Ensemble([ModelCheckpoint.load(p) for p in members])  # validates compatibility
    path = out_dir / "ensemble.json"
    path.write_text(_json.dumps({"members": members}, indent=2))
    print(f"wrote ensemble descriptor {path}")
    return members, [path]


def cmd_eval(args, cfg: PipelineConfig, out_dir: Path):
    from .fuse import MorphologyConfig, load_ensemble

    test = D.load_manifest(args.data)
    method_path = Path(args.method)
    if method_path.suffix == ".json":
        ensemble = load_ensemble(method_path)
        morph = MorphologyConfig(**cfg.fusion)
        method = _EnsembleWithMorph(ensemble, morph)
        tag = "ensemble+morphology"
    else:
        method = ModelCheckpoint.load(method_path)
        tag = method.provenance
    report = evaluate(method, test, train_time_seconds=args.train_time, dataset_tag=test.source_note, method_tag=tag)
    path = out_dir / "eval_report.json"
    report.save(path)
    print(report.to_json())
    return [args.data, args.method], [path]


class _EnsembleWithMorph:
    """Adapter so evaluate() runs vote + morphology as one method."""

    def __init__(self, ensemble, morph):
        from .fuse import Ensemble  # noqa: F401

        self._ensemble = ensemble
        self._morph = morph

    def predict(self, pre, post):
        return self._ensemble.predict(pre, post, morph_config=self._morph)

    def size_bytes(self):
        return self._ensemble.size_bytes()


def cmd_render(args, cfg: PipelineConfig, out_dir: Path):
    if args.reports:
        reports = [EvalReport.from_json(Path(p).read_text()) for p in args.reports]
        print(render_comparison_table(reports))
        return list(args.reports), []
    from PIL import Image

    image = np.asarray(Image.open(args.image).convert("RGB"), dtype=np.float32) / 255.0
    mask = np.asarray(Image.open(args.mask), dtype=np.uint8)
    out_path = Path(args.out_file or out_dir / "overlay.png")
    render_overlay(image, mask, out_path)
    print(f"wrote overlay {out_path}")
    return [args.image, args.mask], [out_path]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clifgan", description="Building damage assessment pipeline")
    p.add_argument("--config", help="JSON pipeline config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="output directory (default env CLIFGAN_OUT or ./out)")
    p.add_argument("--data-fraction", type=float, default=None, help="train on this fraction of the data")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth-data", help="generate a synthetic toy-disaster dataset")
    sp.add_argument("--count", type=int, default=None)
    sp.set_defaults(fn=cmd_synth_data)

    sp = sub.add_parser("ingest", help="ingest xBD-style labels and images")
    sp.add_argument("--labels", required=True)
    sp.add_argument("--images", required=True)
    sp.set_defaults(fn=cmd_ingest)

    sp = sub.add_parser("train-seg", help="train a segmentation model")
    sp.add_argument("--data", required=True, help="manifest dir or json")
    sp.add_argument("--tag", default="a", help="distinguishes ensemble members")
    sp.add_argument("--gan", choices=["none", "gan1", "gan2"], default="none")
    sp.add_argument("--gan-ckpt", help="generator checkpoint for --gan")
    sp.add_argument("--gan-count", type=int, default=None)
    sp.set_defaults(fn=cmd_train_seg)

    sp = sub.add_parser("pretrain-cl", help="contrastive pre-training")
    sp.add_argument("--data", required=True)
    sp.set_defaults(fn=cmd_pretrain_cl)

    sp = sub.add_parser("finetune-cl", help="fine-tune a pretrained model")
    sp.add_argument("--data", required=True)
    sp.add_argument("--pretrained", required=True)
    sp.set_defaults(fn=cmd_finetune_cl)

    sp = sub.add_parser("train-gan", help="train a pix2pix variant")
    sp.add_argument("--data", required=True)
    sp.add_argument("--variant", choices=["gan1", "gan2"], default="gan1")
    sp.set_defaults(fn=cmd_train_gan)

    sp = sub.add_parser("augment", help="extend a dataset with synthesized samples")
    sp.add_argument("--data", required=True)
    sp.add_argument("--generator", required=True)
    sp.add_argument("--count", type=int, required=True)
    sp.set_defaults(fn=cmd_augment)

    sp = sub.add_parser("train-cls", help="train the siamese damage classifier")
    sp.add_argument("--data", required=True)
    sp.add_argument("--seg-ckpt", required=True)
    sp.add_argument("--freeze-extractor", action="store_true")
    sp.set_defaults(fn=cmd_train_cls)

    sp = sub.add_parser("fuse", help="assemble a 3-member ensemble descriptor")
    sp.add_argument("--members", nargs=3, required=True)
    sp.set_defaults(fn=cmd_fuse)

    sp = sub.add_parser("eval", help="evaluate a checkpoint or ensemble")
    sp.add_argument("--data", required=True)
    sp.add_argument("--method", required=True, help="checkpoint .pt or ensemble .json")
    sp.add_argument("--train-time", type=float, default=0.0)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("render", help="render a damage overlay or a report table")
    sp.add_argument("--image")
    sp.add_argument("--mask")
    sp.add_argument("--out-file")
    sp.add_argument("--reports", nargs="+")
    sp.set_defaults(fn=cmd_render)
    return p


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        with Timer() as timer:
            inputs, outputs = args.fn(args, cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1
    write_run_manifest(out_dir, [args.command] + list(argv), cfg, inputs, outputs, timer)
    return 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))
