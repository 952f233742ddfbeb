"""Segmentation evaluation: mDice, mIoU, MAE, weighted F-beta, S-measure, E-measure.

Overlap metrics run on predictions binarized at 0.5; MAE, the weighted
F-beta (soft confusion counts), the S-measure and the E-measure consume the
real-valued map directly. Empty-vs-empty pairs count as perfect matches so
synthetic negatives score sensibly.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError
from .tensor import ShapeError, Tensor

FBETA_SQ = 0.25          # beta = 1/2, favoring precision
SMEASURE_ALPHA = 0.5
SMEASURE_MU = 0.5
SMEASURE_LAMBDA = 1.0
EMEASURE_LEVELS = 256


@dataclass
class MetricReport:
    mDice: float
    mIoU: float
    MAE: float
    wFbeta: float
    Smeasure: float
    Emeasure: float
    n_samples: int

    def row(self):
        return [self.mDice, self.mIoU, self.MAE, self.wFbeta,
                self.Smeasure, self.Emeasure]


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} vs gt {gt.shape}")
    return pred, gt


def binarize(pred, threshold=0.5):
    return (np.asarray(pred) >= threshold).astype(np.float64)


def iou(pred_bin, gt):
    a, b = _check_pair(pred_bin, gt)
    inter = float((a * b).sum())
    union = float(a.sum() + b.sum()) - inter
    return 1.0 if union == 0 else inter / union


def dice(pred_bin, gt):
    a, b = _check_pair(pred_bin, gt)
    inter = float((a * b).sum())
    total = float(a.sum() + b.sum())
    return 1.0 if total == 0 else 2.0 * inter / total


def miou(pairs):
    return float(np.mean([iou(binarize(p), g) for p, g in pairs]))


def mdice(pairs):
    return float(np.mean([dice(binarize(p), g) for p, g in pairs]))


def mae(pairs):
    return float(np.mean([np.abs(_check_pair(p, g)[0] - g).mean() for p, g in pairs]))


def confusion(pred_bin, gt):
    d, g = _check_pair(pred_bin, gt)
    tp = float((d * g).sum())
    tn = float(((1 - d) * (1 - g)).sum())
    fp = float((d * (1 - g)).sum())
    fn = float(((1 - d) * g).sum())
    return tp, tn, fp, fn


def precision_recall(counts):
    tp, _, fp, fn = counts
    prec = 1.0 if tp + fp == 0 else tp / (tp + fp)
    rec = 1.0 if tp + fn == 0 else tp / (tp + fn)
    return prec, rec


def fbeta(precision, recall, beta_sq=FBETA_SQ):
    denom = beta_sq * precision + recall
    if denom == 0:
        return 0.0
    return (1.0 + beta_sq) * precision * recall / denom


def weighted_fbeta(pred, gt, beta_sq=FBETA_SQ):
    """F-beta over soft confusion counts (TP = sum P*G etc.), beta^2 = 1/4."""
    p, g = _check_pair(pred, gt)
    tp = float((p * g).sum())
    fp = float((p * (1 - g)).sum())
    fn = float(((1 - p) * g).sum())
    prec, rec = precision_recall((tp, 0.0, fp, fn))
    return fbeta(prec, rec, beta_sq)


# -- S-measure ---------------------------------------------------------------


def _object_score(values):
    if values.size == 0:
        return 0.0
    xbar = float(values.mean())
    sigma = float(values.std())        # population std
    return 2.0 * xbar / (xbar * xbar + 1.0 + 2.0 * SMEASURE_LAMBDA * sigma)


def _ssim_region(x, y):
    n = x.size
    if n == 0:
        return 1.0
    xbar, ybar = float(x.mean()), float(y.mean())
    if n == 1:
        varx = vary = cov = 0.0
    else:
        varx = float(((x - xbar) ** 2).sum() / (n - 1))
        vary = float(((y - ybar) ** 2).sum() / (n - 1))
        cov = float(((x - xbar) * (y - ybar)).sum() / (n - 1))
    num = 4.0 * xbar * ybar * cov
    den = (xbar * xbar + ybar * ybar) * (varx + vary)
    if num != 0.0:
        return num / (den + 1e-12)
    return 1.0 if den == 0.0 else 0.0


def _region_score(pred, gt):
    h, w = gt.shape
    fg = gt.sum()
    if fg == 0:
        cy, cx = h // 2, w // 2
    else:
        ys, xs = np.nonzero(gt)
        cy, cx = int(round(ys.mean())), int(round(xs.mean()))
    cy = min(max(cy, 1), h - 1)
    cx = min(max(cx, 1), w - 1)
    total = h * w
    score = 0.0
    for ysl, xsl in ((slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
                     (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w))):
        gq, pq = gt[ysl, xsl], pred[ysl, xsl]
        score += (gq.size / total) * _ssim_region(pq.ravel(), gq.ravel())
    return score


def s_measure(pred, gt):
    """Structure measure: alpha * object term + (1-alpha) * region term."""
    p, g = _check_pair(pred, gt)
    fg = g.sum()
    if fg == 0:
        # no foreground: only the background object term is meaningful
        return float(np.clip(_object_score(1.0 - p), 0.0, 1.0))
    if fg == g.size:
        return float(np.clip(_object_score(p), 0.0, 1.0))
    s_fg = _object_score(p[g == 1])
    s_bg = _object_score((1.0 - p)[g == 0])
    s0 = SMEASURE_MU * s_fg + (1.0 - SMEASURE_MU) * s_bg
    sr = _region_score(p, g)
    s = SMEASURE_ALPHA * s0 + (1.0 - SMEASURE_ALPHA) * sr
    return float(np.clip(s, 0.0, 1.0))


# -- E-measure ---------------------------------------------------------------


def _binarize_level(pred, tau):
    # tau = 0 would turn every map all-foreground under >=; use strict there
    return (pred > 0) if tau == 0 else (pred >= tau)


def _alignment(d, g):
    phi_g = g - g.mean()
    phi_d = d - d.mean()
    num = 2.0 * phi_g * phi_d
    den = phi_g * phi_g + phi_d * phi_d
    align = np.where(den == 0, 1.0, num / np.where(den == 0, 1.0, den))
    enhanced = (1.0 + align) ** 2 / 4.0
    return float(enhanced.mean())


def e_measure(pred, gt, levels=EMEASURE_LEVELS):
    """Mean enhanced-alignment score over a uniform threshold sweep."""
    p, g = _check_pair(pred, gt)
    taus = np.arange(levels) / (levels - 1)
    return float(np.mean([_alignment(_binarize_level(p, t).astype(np.float64), g)
                          for t in taus]))


# -- dataset-level -----------------------------------------------------------


def valid_prediction(pred, gt, threshold=0.5):
    """A prediction counts as valid when its IoU exceeds 0.5."""
    return iou(binarize(pred, threshold), gt) > 0.5


def report_for_pairs(pairs):
    pairs = list(pairs)
    if not pairs:
        raise DataError("cannot evaluate an empty dataset")
    return MetricReport(
        mDice=mdice(pairs),
        mIoU=miou(pairs),
        MAE=mae(pairs),
        wFbeta=float(np.mean([weighted_fbeta(p, g) for p, g in pairs])),
        Smeasure=float(np.mean([s_measure(p, g) for p, g in pairs])),
        Emeasure=float(np.mean([e_measure(p, g) for p, g in pairs])),
        n_samples=len(pairs),
    )


def evaluate(model, samples):
    """Run the full six-metric suite over (image, mask) samples with ``model``.

    ``model`` is called on a (1, C, H, W) input tensor and must return the
    (S_t, S_r, S_z) triple; only the fused map is scored.
    """
    samples = list(samples)
    if not samples:
        raise DataError("cannot evaluate an empty dataset")
    pairs = []
    for s in samples:
        out = model(Tensor(s.image[None]))
        pairs.append((out[2].data[0, 0], s.mask))
    return report_for_pairs(pairs)


def write_report_csv(path, rows):
    """``rows``: iterable of (dataset, model, MetricReport)."""
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["dataset", "model", "n", "mDice", "mIoU", "MAE",
                     "wFbeta", "Smeasure", "Emeasure"])
        for dataset, model_name, rep in rows:
            wr.writerow([dataset, model_name, rep.n_samples] +
                        [f"{v:.6f}" for v in rep.row()])
