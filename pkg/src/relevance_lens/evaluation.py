"""Occlusion-based faithfulness evaluation and agreement with annotation masks.

The erasure protocol: for every image, attribute the clean-image argmax class,
cluster the heatmap, then black out clusters 1..t cumulatively (in raw pixel
space) and re-classify for t = 1..T. Step 0 is the unmodified image.
"""

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attribution import attribute, normalize_heatmap
from .errors import InputError, UndefinedMetricError
from .nn.model import classify
from .selection import select

__all__ = [
    "DatasetItem",
    "occlude",
    "accuracy",
    "roc_auc",
    "softmax",
    "ImageRecord",
    "StepMetrics",
    "ErasureCurve",
    "erase_image",
    "erasure_curve",
    "steps_to_logit_drop",
    "agreement",
    "AgreementReport",
    "write_curve_csv",
    "write_detail_csv",
    "read_curve_csv",
    "agreement_to_json",
]

LEVEL_WEIGHTS = np.array([0.0, 1.0, 2.0, 3.0])


@dataclass(frozen=True, eq=False)
class DatasetItem:
    image_id: str
    raw: np.ndarray  # (C, H, W) in [0, 1]
    label: int


def _as_flat_indices(pixels, h, w):
    p = np.asarray(pixels if pixels is not None else [], dtype=np.int64)
    if p.size == 0:
        return np.empty(0, dtype=np.int64)
    if p.ndim == 2 and p.shape[1] == 2:
        r, c = p[:, 0], p[:, 1]
        if r.min() < 0 or c.min() < 0 or r.max() >= h or c.max() >= w:
            raise InputError("pixel coordinate outside the image")
        return r * w + c
    p = p.ravel()
    if p.min() < 0 or p.max() >= h * w:
        raise InputError(f"pixel index outside [0, {h * w})")
    return p


def occlude(image, pixels, mode="mask"):
    """Return a copy of a raw ``(C, H, W)`` image with ``pixels`` set to black.

    ``pixels`` holds row-major flat indices or ``(row, col)`` pairs. In
    ``square`` mode the bounding box of the set is blacked out instead.
    """
    img = np.array(image, dtype=np.float64, copy=True)
    _, h, w = img.shape
    flat = _as_flat_indices(pixels, h, w)
    if flat.size == 0:
        return img
    if mode == "mask":
        img.reshape(img.shape[0], -1)[:, flat] = 0.0
    elif mode == "square":
        rows, cols = flat // w, flat % w
        img[:, rows.min():rows.max() + 1, cols.min():cols.max() + 1] = 0.0
    else:
        raise InputError(f"unknown occlusion mode {mode!r}")
    return img


def accuracy(predictions, labels):
    p = np.asarray(predictions)
    y = np.asarray(labels)
    if p.shape != y.shape or p.ndim != 1:
        raise InputError("predictions and labels must be 1-D and the same length")
    if p.size == 0:
        raise InputError("accuracy of an empty set is undefined")
    return float(np.count_nonzero(p == y)) / p.size


def roc_auc(scores, labels):
    """Mann-Whitney AUC: P(s_pos > s_neg) + 0.5 P(s_pos == s_neg), via mid-ranks."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise InputError("scores and labels must be 1-D and the same length")
    if not np.all(np.isin(y, (0, 1))):
        raise InputError("labels must be binary 0/1")
    pos = y == 1
    n_pos = int(np.count_nonzero(pos))
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC needs at least one positive and one negative label")
    uniq, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    # mid-rank of tied group = rank before the group + (count + 1) / 2
    midranks = np.cumsum(counts) - (counts - 1) / 2.0
    rank_sum = midranks[inverse.ravel()][pos].sum()
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


@dataclass(frozen=True, eq=False)
class ImageRecord:
    image_id: str
    label: int
    target: int
    n_clusters: int
    logits: tuple  # per step 0..steps
    predicted: tuple
    occluded: tuple = ()  # pixel count per step


@dataclass(frozen=True)
class StepMetrics:
    step: int
    clusters_erased: int
    accuracy: float
    roc_auc: float
    mean_target_logit: float


@dataclass(frozen=True, eq=False)
class ErasureCurve:
    method: str
    selection: str
    steps: tuple
    records: tuple = field(repr=False)

    @property
    def T(self):
        return len(self.steps) - 1

    def mean_auc(self):
        """Mean ROC-AUC over steps 1..T (nan if T = 0 or undefined)."""
        vals = [s.roc_auc for s in self.steps[1:]]
        if not vals or any(math.isnan(v) for v in vals):
            return float("nan")
        return float(np.mean(vals))


def erase_image(model, raw, clusters, steps, mode="mask"):
    """Cumulatively occlude ``clusters`` and re-classify.

    Returns ``(logits, predicted, occluded_counts)``, each of length
    ``steps + 1``; entry 0 is the clean image. Once every cluster is erased
    later steps repeat the fully occluded result.
    """
    raw = np.asarray(raw, dtype=np.float64)
    pred, logits = classify(model, model.preprocess(raw))
    out_logits, out_pred, out_count = [logits], [pred], [0]
    erased = np.empty(0, dtype=np.int64)
    for t in range(1, int(steps) + 1):
        if t <= len(clusters):
            pix = np.asarray(getattr(clusters[t - 1], "pixels", clusters[t - 1]), dtype=np.int64)
            erased = np.union1d(erased, pix)
            pred, logits = classify(model, model.preprocess(occlude(raw, erased, mode)))
        out_logits.append(logits)
        out_pred.append(pred)
        out_count.append(int(erased.size))
    return out_logits, out_pred, out_count


def _image_pipeline(model, item, method, config, steps, mode):
    x0 = model.preprocess(item.raw)
    target, _ = classify(model, x0)
    h = normalize_heatmap(attribute(model, x0, target, method, item.image_id))
    sel = select(h, config)
    logits, preds, counts = erase_image(model, item.raw, sel.clusters, steps, mode)
    return ImageRecord(
        item.image_id,
        int(item.label),
        target,
        len(sel.clusters),
        tuple(logits),
        tuple(preds),
        tuple(counts),
    )


def _resolve_threads(threads):
    if threads in (None, "auto"):
        return os.cpu_count() or 1
    n = int(threads)
    if n < 1:
        raise InputError("threads must be >= 1")
    return n


def erasure_curve(model, dataset, method, config, steps=10, mode="mask", threads=1):
    """Erasing curve over a dataset.

    ``T = min(steps, largest cluster count over the dataset)``; images with fewer
    clusters stay fully occluded for the remaining steps. Per-step metrics are
    computed from records sorted by image id, so the result does not depend on
    ``threads``.
    """
    items = list(dataset)
    if not items:
        raise InputError("dataset is empty")
    for it in items:
        if not 0 <= int(it.label) < model.n_classes:
            raise InputError(f"{it.image_id}: label {it.label} outside model class range")
    steps = int(steps)
    if steps < 0:
        raise InputError("steps must be >= 0")
    n = min(_resolve_threads(threads), len(items))
    run = lambda it: _image_pipeline(model, it, method, config, steps, mode)  # noqa: E731
    if n == 1:
        records = [run(it) for it in items]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            records = list(pool.map(run, items))
    records.sort(key=lambda r: r.image_id)
    T = min(steps, max(r.n_clusters for r in records))
    records = tuple(
        ImageRecord(
            r.image_id, r.label, r.target, r.n_clusters,
            r.logits[:T + 1], r.predicted[:T + 1], r.occluded[:T + 1],
        )
        for r in records
    )
    pos = model.positive_class()
    labels = np.array([r.label for r in records])
    binary = (labels == pos).astype(np.int64)
    metrics = []
    for t in range(T + 1):
        preds = np.array([r.predicted[t] for r in records])
        scores = np.array([softmax(r.logits[t])[pos] for r in records])
        try:
            auc = roc_auc(scores, binary)
        except UndefinedMetricError:
            auc = float("nan")
        mean_logit = float(np.mean([r.logits[t][r.target] for r in records]))
        metrics.append(StepMetrics(t, t, accuracy(preds, labels), auc, mean_logit))
    return ErasureCurve(method.variant, config.method, tuple(metrics), records)


def steps_to_logit_drop(target_logits, fraction=0.9):
    """First step whose target logit fell by at least ``fraction`` of step 0's value.

    Returns ``None`` when the drop is never reached.
    """
    base = float(target_logits[0])
    for t, v in enumerate(target_logits):
        if t and base - float(v) >= fraction * base:
            return t
    return None


# --------------------------------------------------------------------------
# agreement with pathologist annotation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AgreementReport:
    steps: tuple  # one dict per cumulative pixel set

    def to_dict(self):
        return {"steps": [dict(s) for s in self.steps]}


def _iou(a, b):
    union = np.count_nonzero(a | b)
    return float(np.count_nonzero(a & b)) / union if union else 0.0


def agreement(pixel_sets, mask):
    """Compare cumulative occluded pixel sets with an annotation mask.

    ``mask`` holds levels 0 (none), 1 (blue), 2 (orange), 3 (red). For each
    set: fraction of occluded pixels at every level, IoU with red, red+orange
    and all annotated pixels, and the weighted agreement
    ``sum(level) / (3 * |occluded|)``.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise InputError("annotation mask must be 2-D")
    if np.setdiff1d(np.unique(mask), (0, 1, 2, 3)).size:
        raise InputError("annotation mask values must be in {0,1,2,3}")
    h, w = mask.shape
    flat_mask = mask.ravel().astype(np.int64)
    red = flat_mask == 3
    red_orange = flat_mask >= 2
    annotated = flat_mask >= 1
    out = []
    for t, pixels in enumerate(pixel_sets, start=1):
        idx = np.unique(_as_flat_indices(pixels, h, w))
        occ = np.zeros(h * w, dtype=bool)
        occ[idx] = True
        n = idx.size
        levels = np.bincount(flat_mask[idx], minlength=4)
        frac = [float(levels[k]) / n if n else 0.0 for k in range(4)]
        weighted = float(LEVEL_WEIGHTS[flat_mask[idx]].sum()) / (3.0 * n) if n else 0.0
        out.append(
            {
                "step": t,
                "occluded_pixels": int(n),
                "fraction_unannotated": frac[0],
                "fraction_blue": frac[1],
                "fraction_orange": frac[2],
                "fraction_red": frac[3],
                "iou_red": _iou(occ, red),
                "iou_red_orange": _iou(occ, red_orange),
                "iou_annotated": _iou(occ, annotated),
                "weighted_agreement": weighted,
            }
        )
    return AgreementReport(tuple(out))


def agreement_to_json(report):
    return json.dumps(report.to_dict(), indent=2) + "\n"


# --------------------------------------------------------------------------
# CSV output
# --------------------------------------------------------------------------

CURVE_HEADER = ["step", "clusters_erased", "accuracy", "roc_auc", "mean_target_logit"]
DETAIL_HEADER = ["image_id", "step", "target_logit", "predicted_class"]


def _fmt(x):
    return repr(float(x))


def write_curve_csv(curve, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for s in curve.steps:
            w.writerow([s.step, s.clusters_erased, _fmt(s.accuracy), _fmt(s.roc_auc), _fmt(s.mean_target_logit)])


def write_detail_csv(records, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DETAIL_HEADER)
        for r in records:
            for t, (lg, p) in enumerate(zip(r.logits, r.predicted)):
                w.writerow([r.image_id, t, _fmt(lg[r.target]), p])


def read_curve_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CURVE_HEADER:
            raise InputError(f"{path}: unexpected curve header {reader.fieldnames}")
        return [
            StepMetrics(
                int(r["step"]),
                int(r["clusters_erased"]),
                float(r["accuracy"]),
                float(r["roc_auc"]),
                float(r["mean_target_logit"]),
            )
            for r in reader
        ]
