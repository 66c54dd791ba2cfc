"""Evaluation: pixel confusion matrices, segmentation F1 (building vs
background), classification F1 (harmonic mean of per-damage-class F1 over
truth-building pixels), and report rendering."""

import json
import time
import warnings
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .data.masks import IGNORE

NUM_CLASSES = 5  # 0 background + 4 damage levels


def confusion_matrix(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """5x5 counts, rows = truth, cols = pred; truth-255 pixels excluded."""
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    keep = truth != IGNORE
    t = truth[keep].astype(np.int64)
    p = pred[keep].astype(np.int64)
    p = np.clip(p, 0, NUM_CLASSES - 1)  # pred never carries 255 by contract
    return np.bincount(t * NUM_CLASSES + p, minlength=NUM_CLASSES**2).reshape(NUM_CLASSES, NUM_CLASSES)


def aggregate_confusion(conf, pred, truth):
    c = confusion_matrix(pred, truth)
    return c if conf is None else conf + c


def _f1(tp: float, fp: float, fn: float) -> float:
    if tp == 0 and fp == 0 and fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def seg_f1_from_confusion(conf: np.ndarray) -> float:
    """Binary building/background pixel F1 from a 5-class confusion matrix."""
    tp = conf[1:, 1:].sum()
    fp = conf[0, 1:].sum()
    fn = conf[1:, 0].sum()
    return _f1(tp, fp, fn)


def cls_f1_from_confusion(conf: np.ndarray):
    """Harmonic-mean per-class damage F1, scored over truth-building pixels.

    Per-class F1 treats class c as the positive indicator restricted to
    pixels whose truth label is a damage level. Classes absent from both
    pred and truth (inside that restriction) are excluded; if no class is
    defined the overall value is NaN.
    """
    sub = conf[1:, :]  # truth-building rows only
    per_class = []
    defined = []
    for c in range(1, NUM_CLASSES):
        tp = sub[c - 1, c]
        fn = sub[c - 1, :].sum() - tp
        fp = sub[:, c].sum() - tp
        present = (tp + fn) > 0 or (tp + fp) > 0
        f1 = _f1(tp, fp, fn) if present else float("nan")
        per_class.append(f1)
        if present:
            defined.append(f1)
    if not defined:
        warnings.warn("classification F1 undefined: no truth building pixels")
        return float("nan"), per_class
    if any(f == 0.0 for f in defined):
        return 0.0, per_class
    overall = len(defined) / sum(1.0 / f for f in defined)
    return overall, per_class


def seg_f1(pred: np.ndarray, truth: np.ndarray) -> float:
    return seg_f1_from_confusion(confusion_matrix(pred, truth))


def cls_f1(pred: np.ndarray, truth: np.ndarray):
    return cls_f1_from_confusion(confusion_matrix(pred, truth))


@dataclass
class EvalReport:
    segmentation_f1: float
    classification_f1: float
    per_class_f1: list
    model_size_bytes: int
    train_time_seconds: float
    dataset_tag: str = ""
    method_tag: str = ""
    notes: str = "pixel-level F1; micro-aggregated over tiles"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))

    def save(self, path):
        Path(path).write_text(self.to_json())


class _Predictor:
    """Adapts a checkpoint, model, or ensemble to a predict(pre, post) call."""

    def __init__(self, method):
        from .checkpoint import ModelCheckpoint

        self.size_bytes = 0
        if callable(getattr(method, "predict", None)):  # ensemble or adapter
            self.fn = method.predict
            size = getattr(method, "size_bytes", 0)
            self.size_bytes = size() if callable(size) else size
        elif isinstance(method, ModelCheckpoint):
            self.size_bytes = method.size_bytes
            if method.provenance == "siamese":
                from .classify import predict_damage, siamese_from_checkpoint

                model = siamese_from_checkpoint(method)
                self.fn = lambda pre, post: predict_damage(model, pre, post)
            else:
                from .segnet import model_from_checkpoint, predict_mask

                model = model_from_checkpoint(method)
                self.fn = lambda pre, post: predict_mask(model, post)
        else:  # bare segmentation model
            from .segnet import predict_mask

            self.fn = lambda pre, post: predict_mask(method, post)

    def __call__(self, pre, post):
        return self.fn(pre, post)


def evaluate(method, test, train_time_seconds: float = 0.0, dataset_tag: str = "", method_tag: str = "") -> EvalReport:
    """Micro-aggregated evaluation of a checkpoint/model/ensemble on a manifest."""
    if len(test) == 0:
        raise ValueError("test manifest is empty")
    predictor = _Predictor(method)
    conf = None
    for s in test:
        pred = predictor(s.pre_image, s.post_image)
        conf = aggregate_confusion(conf, pred, s.post_mask)
    overall, per_class = cls_f1_from_confusion(conf)
    return EvalReport(
        segmentation_f1=seg_f1_from_confusion(conf),
        classification_f1=overall,
        per_class_f1=per_class,
        model_size_bytes=predictor.size_bytes,
        train_time_seconds=train_time_seconds,
        dataset_tag=dataset_tag,
        method_tag=method_tag,
    )


def _fmt_size(n_bytes: int) -> str:
    return f"{n_bytes / 1e6:.1f} MB"


def render_comparison_table(reports: list) -> str:
    """Method-comparison layout: one column per report, rows = size / seg F1 / cls F1."""
    headers = [r.method_tag or f"method {i}" for i, r in enumerate(reports, 1)]
    rows = [
        ("size", [_fmt_size(r.model_size_bytes) for r in reports]),
        ("Segmentation F1", [f"{r.segmentation_f1:.3f}" for r in reports]),
        ("Classification F1", [f"{r.classification_f1:.3f}" for r in reports]),
    ]
    widths = [max(len(h), *(len(row[1][i]) for row in rows)) for i, h in enumerate(headers)]
    label_w = max(len(r[0]) for r in rows)
    lines = [" " * label_w + "  " + "  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    for label, cells in rows:
        lines.append(label.ljust(label_w) + "  " + "  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    return "\n".join(lines)


def _fmt_time(seconds: float) -> str:
    h, rem = divmod(int(round(seconds)), 3600)
    m = rem // 60
    return f"{h} hrs {m} mins" if h else f"{m} mins"


def render_data_efficiency_table(reports: list) -> str:
    """Data-regime layout: one row per report with training time and both F1s."""
    header = ["", "Training time", "classification F1", "segmentation F1"]
    rows = [
        [r.dataset_tag or f"run {i}", _fmt_time(r.train_time_seconds),
         f"{r.classification_f1:.3f}", f"{r.segmentation_f1:.3f}"]
        for i, r in enumerate(reports, 1)
    ]
    widths = [max(len(header[i]), *(len(row[i]) for row in rows)) for i in range(4)]
    lines = ["  ".join(header[i].ljust(widths[i]) for i in range(4))]
    for row in rows:
        lines.append("  ".join(row[i].ljust(widths[i]) for i in range(4)))
    return "\n".join(lines)


class Timer:
    """Wall-clock timer whose reading feeds EvalReport.train_time_seconds."""

    def __enter__(self):
        self.start = time.monotonic()
        self.start_wall = time.time()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.monotonic() - self.start
        return False
