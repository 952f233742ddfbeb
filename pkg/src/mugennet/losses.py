"""Composite segmentation loss: weighted IoU + weighted BCE with deep supervision.

A per-pixel weight map emphasizes pixels whose neighborhood disagrees with
them (object boundaries): w = 1 + 5 * |boxfilter_k(G) - G|, so w lies in
[1, 6]. The combined loss is L = L_iou_w + n * L_bce_w with n defaulting to
6/5, and the total loss weights the two branch maps and the fused map by
(alpha, beta, gamma).
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from . import tensor as T
from .tensor import ShapeError, Tensor

CLAMP = 1e-7


@dataclass
class LossConfig:
    n: float = 6.0 / 5.0
    alpha: float = 0.5
    beta: float = 0.5
    gamma: float = 1.0
    weight_kernel: int = 7

    def validate(self):
        if self.n < 0:
            raise ValueError(f"loss ratio n must be >= 0, got {self.n}")
        if min(self.alpha, self.beta, self.gamma) < 0 or \
           self.alpha + self.beta + self.gamma == 0:
            raise ValueError("supervision weights must be >= 0 and not all zero")
        if self.weight_kernel % 2 == 0:
            raise ValueError(f"weight_kernel must be odd, got {self.weight_kernel}")


def pixel_weights(gt, k=7):
    """Boundary-emphasis weight map, w in [1, 6]. ``gt``: (..., H, W) binary array."""
    if k % 2 == 0:
        raise ValueError(f"weight kernel must be odd, got {k}")
    g = np.asarray(gt, dtype=np.float64)
    size = (1,) * (g.ndim - 2) + (k, k)
    pooled = uniform_filter(g, size=size, mode="constant", cval=0.0)
    return 1.0 + 5.0 * np.abs(pooled - g)


def _prep(pred, gt, weights):
    if not isinstance(pred, Tensor):
        pred = Tensor(pred)
    g = np.asarray(gt, dtype=np.float64)
    if pred.shape != g.shape:
        raise ShapeError(f"prediction shape {pred.shape} != ground truth {g.shape}")
    w = np.ones_like(g) if weights is None else np.asarray(weights, dtype=np.float64)
    return pred, g, w


def weighted_bce(pred, gt, weights=None):
    """Weight-normalized pixelwise binary cross entropy (scalar Tensor)."""
    pred, g, w = _prep(pred, gt, weights)
    p = T.clamp(pred, CLAMP, 1.0 - CLAMP)
    per_pixel = T.log(p) * (-g * w) + T.log(1.0 - p) * (-(1.0 - g) * w)
    return per_pixel.sum() * (1.0 / w.sum())


def weighted_iou_loss(pred, gt, weights=None):
    """1 - weighted soft IoU (scalar Tensor). Empty-vs-empty counts as perfect."""
    pred, g, w = _prep(pred, gt, weights)
    inter = (pred * (w * g)).sum()
    union = (pred * w).sum() + float((w * g).sum()) - inter
    if union.item() == 0.0:
        return inter * 0.0          # G and P both empty: graph-connected zero
    return 1.0 - inter / union


def combined_loss(pred, gt, cfg=None):
    """L = weighted IoU loss + n * weighted BCE, sharing one weight map."""
    cfg = cfg or LossConfig()
    w = pixel_weights(gt, cfg.weight_kernel)
    return weighted_iou_loss(pred, gt, w) + weighted_bce(pred, gt, w) * cfg.n


def total_loss(s_t, s_r, s_z, gt, cfg=None):
    """Deep-supervised total: alpha*L(G,S_t) + beta*L(G,S_r) + gamma*L(G,S_z).

    All three maps must already be at the ground-truth resolution.
    """
    cfg = cfg or LossConfig()
    cfg.validate()
    g = np.asarray(gt, dtype=np.float64)
    parts = []
    for name, s, weight in (("s_t", s_t, cfg.alpha), ("s_r", s_r, cfg.beta),
                            ("s_z", s_z, cfg.gamma)):
        if s.shape != g.shape and s.size != g.size:
            raise ShapeError(f"{name} shape {s.shape} does not match ground truth {g.shape}")
        flat = s.reshape(g.shape) if s.shape != g.shape else s
        parts.append(combined_loss(flat, g, cfg) * weight)
    return parts[0] + parts[1] + parts[2]
