"""Image-level verdicts from patch votes, and the confusion-matrix metrics."""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .patches import window_origins

PATCH_CUTOFF = 0.5


@dataclass
class PredictionMap:
    rows: np.ndarray
    cols: np.ndarray
    scores: np.ndarray
    stride: int
    patch_size: int
    image_shape: tuple


@dataclass
class ImageVerdict:
    image_id: int
    n_patches: int
    n_fake: int
    fraction: float
    threshold: float
    label: str
    map: PredictionMap | None = None

    @property
    def spliced(self):
        return self.label == "spliced"


def as_float_image(image):
    image = np.asarray(image)
    if image.dtype == np.uint8:
        return image.astype(np.float32) / 255.0
    return image.astype(np.float32)


def predict_windows(net, image, stride=32, size=None, batch_size=64):
    """Score every stride-aligned window of ``image`` with the network."""
    size = size or net.input_shape[0]
    img = as_float_image(image)
    h, w = img.shape[:2]
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} is smaller than a {size}x{size} patch")
    coords = [(r, c) for r in window_origins(h, size, stride) for c in window_origins(w, size, stride)]
    scores = []
    for i in range(0, len(coords), batch_size):
        batch = np.stack([img[r:r + size, c:c + size] for r, c in coords[i:i + batch_size]])
        scores.append(net.forward(batch).reshape(-1))
    rows = np.array([r for r, _ in coords])
    cols = np.array([c for _, c in coords])
    return PredictionMap(rows, cols, np.concatenate(scores), stride, size, (h, w))


def verdict_from_map(pmap, threshold, image_id=0, cutoff=PATCH_CUTOFF):
    """Spliced iff the fraction of windows scoring above ``cutoff`` is >= ``threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    n = len(pmap.scores)
    n_fake = int(np.count_nonzero(pmap.scores > cutoff))
    fraction = n_fake / n
    label = "spliced" if fraction >= threshold else "authentic"
    return ImageVerdict(image_id, n, n_fake, fraction, threshold, label, pmap)


def classify_image(net, image, threshold, stride=32, image_id=0):
    return verdict_from_map(predict_windows(net, image, stride), threshold, image_id)


@dataclass
class EvalReport:
    tp: int
    tn: int
    fp: int
    fn: int
    accuracy: float | None
    recall: float | None
    precision: float | None
    f1: float | None
    mcc: float | None
    threshold: float | None = None

    @property
    def positives(self):
        return self.tp + self.fn

    @property
    def negatives(self):
        return self.tn + self.fp


def _ratio(num, den):
    return num / den if den else None


def compute_metrics(tp, tn, fp, fn, threshold=None):
    """Accuracy, recall, precision, F1 and MCC; ``None`` marks an undefined value.

    precision = TP / (TP + FP) and MCC = (TP*TN - FP*FN) / sqrt(product of the
    four marginals).
    """
    for v in (tp, tn, fp, fn):
        if int(v) != v or v < 0:
            raise ValueError("confusion counts must be non-negative integers")
    tp, tn, fp, fn = int(tp), int(tn), int(fp), int(fn)
    if tp + tn + fp + fn == 0:
        raise ValueError("empty confusion matrix")
    accuracy = (tp + tn) / (tp + tn + fp + fn)
    recall = _ratio(tp, tp + fn)
    precision = _ratio(tp, tp + fp)
    f1 = None
    if recall is not None and precision is not None and precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = (tp * tn - fp * fn) / math.sqrt(den) if den else None
    return EvalReport(tp, tn, fp, fn, accuracy, recall, precision, f1, mcc, threshold)


def confusion(predicted, actual):
    """(TP, TN, FP, FN) from boolean/0-1 vectors, 1 = spliced."""
    p = np.asarray(predicted, dtype=bool)
    a = np.asarray(actual, dtype=bool)
    return (int(np.sum(p & a)), int(np.sum(~p & ~a)), int(np.sum(p & ~a)), int(np.sum(~p & a)))


def best_threshold(fractions, labels, grid):
    """Grid value maximising image-level accuracy; ties go to the smallest value."""
    grid = sorted(float(t) for t in grid)
    if not grid:
        raise ValueError("threshold grid is empty")
    fractions = np.asarray(fractions, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    best, best_acc = grid[0], -1.0
    for t in grid:
        acc = float(np.mean((fractions >= t) == labels)) if len(labels) else 0.0
        if acc > best_acc:
            best, best_acc = t, acc
    return best


def search_threshold(net, images, labels, grid, stride=32):
    fractions = [verdict_from_map(predict_windows(net, im, stride), 0.0).fraction for im in images]
    return best_threshold(fractions, labels, grid)


def evaluate_images(net, images, labels, threshold, stride=32, ids=None):
    """Classify each image; returns (EvalReport, verdicts)."""
    ids = ids if ids is not None else list(range(len(images)))
    verdicts = [classify_image(net, im, threshold, stride, i) for im, i in zip(images, ids)]
    counts = confusion([v.spliced for v in verdicts], labels)
    return compute_metrics(*counts, threshold=threshold), verdicts


# -- reports -------------------------------------------------------------

def _fmt(v):
    return "undef" if v is None else f"{v:.4f}"


def metrics_report(rows, timing=True):
    """Table of (model, dataset, iteration, report, seconds) rows, then key=value lines.

    The image-level threshold T is the fraction of windows scored fake above
    which an image is called spliced.
    """
    from .training import format_duration
    head = (f"{'Model':<8} {'Dataset':<10} {'Iter':>4} {'T':>6} {'Acc':>7} {'Recall':>7} "
            f"{'Prec':>7} {'F1':>7} {'MCC':>7} {'Time':>8}")
    lines = [head]
    kv = ["# T = threshold on the fraction of fake-scored windows (interpretation)"]
    for model, dataset, iteration, rep, seconds in rows:
        t = format_duration(seconds) if timing else "-"
        lines.append(
            f"{model:<8} {dataset:<10} {iteration:>4} {rep.threshold:>6.3f} {_fmt(rep.accuracy):>7} "
            f"{_fmt(rep.recall):>7} {_fmt(rep.precision):>7} {_fmt(rep.f1):>7} {_fmt(rep.mcc):>7} {t:>8}"
        )
        prefix = f"{model}.{dataset}"
        kv += [f"{prefix}.iteration={iteration}", f"{prefix}.threshold={rep.threshold}",
               f"{prefix}.tp={rep.tp}", f"{prefix}.tn={rep.tn}", f"{prefix}.fp={rep.fp}",
               f"{prefix}.fn={rep.fn}"]
        for name in ("accuracy", "recall", "precision", "f1", "mcc"):
            kv.append(f"{prefix}.{name}={_fmt(getattr(rep, name))}")
    return "\n".join(lines + [""] + kv) + "\n"
