"""Segmentation quality and loss: Dice coefficient, soft Dice loss, Hausdorff.

The soft Dice loss carries its exact analytic gradient with respect to
the input logits, so the learner never needs autodiff.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatchError

DICE_SMOOTH = 1.0


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape {a.shape} vs {b.shape}")


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def dice_coefficient(a: np.ndarray, b: np.ndarray) -> float:
    """2|A∩B| / (|A|+|B|) over foreground pixels; 1.0 when both are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    _check_same_shape(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    inter = int(np.logical_and(a, b).sum())
    return 2.0 * inter / total


def dice_loss(logits: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Soft Dice loss and its gradient w.r.t. the logits.

    loss = 1 - (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps) with
    p = sigmoid(logits) and eps = 1. The gradient is the closed form
    d_loss/d_logit_i = ((num - 2*y_i*den) / den^2) * p_i * (1 - p_i).
    """
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_same_shape(logits, target)
    p = sigmoid(logits)
    num = 2.0 * float((p * target).sum()) + DICE_SMOOTH
    den = float(p.sum()) + float(target.sum()) + DICE_SMOOTH
    loss = 1.0 - num / den
    grad = ((num - 2.0 * target * den) / (den * den)) * p * (1.0 - p)
    return loss, grad


def dice_loss_batch(
    logits: np.ndarray, targets: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-entry soft Dice losses and gradients for a (B, H, W) batch."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    _check_same_shape(logits, targets)
    p = sigmoid(logits)
    axes = (1, 2)
    num = 2.0 * (p * targets).sum(axis=axes) + DICE_SMOOTH
    den = p.sum(axis=axes) + targets.sum(axis=axes) + DICE_SMOOTH
    losses = 1.0 - num / den
    nb = num[:, None, None]
    db = den[:, None, None]
    grads = ((nb - 2.0 * targets * db) / (db * db)) * p * (1.0 - p)
    return losses, grads


def hausdorff_distance(a: np.ndarray, b: np.ndarray, percentile: float = 100.0) -> float:
    """Symmetric Hausdorff distance between foreground pixel sets.

    Euclidean pixel distance; both empty -> 0.0; exactly one empty ->
    the image diagonal (distance between opposite corner pixels). The
    default is the exact (100th percentile) distance; pass e.g. 95 for
    the robust variant over each directed nearest-distance set.
    """
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    _check_same_shape(a, b)
    a_any = bool(a.any())
    b_any = bool(b.any())
    if not a_any and not b_any:
        return 0.0
    if a_any != b_any:
        h, w = a.shape
        return float(np.hypot(h - 1, w - 1))
    # Distance transform of the complement gives, at each pixel, the
    # exact distance to the nearest foreground pixel of that mask.
    dist_to_b = ndimage.distance_transform_edt(~b)
    dist_to_a = ndimage.distance_transform_edt(~a)
    if percentile >= 100.0:
        return float(max(dist_to_b[a].max(), dist_to_a[b].max()))
    return float(
        max(
            np.percentile(dist_to_b[a], percentile),
            np.percentile(dist_to_a[b], percentile),
        )
    )
