"""Training losses: masked self-adjusting smooth L1 for hands, L2 for
ego-motion, and their weighted combination.

Hand coordinates live in normalized image space (height = 1), but the smooth
L1 control point beta is meaningful on the 256-px display scale, so residuals
are rescaled by `pixel_scale` before entering the loss.  Masked target
entries contribute exactly zero value and zero gradient.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, where

PIXEL_SCALE = 256.0


class LossShapeError(ValueError):
    pass


def hand_loss(pred, target, mask, beta=5.0, pixel_scale=PIXEL_SCALE):
    """Masked self-adjusting smooth L1 over 4F hand coordinates.

    Per element: 0.5*w*r^2/beta inside |r| < beta, w*(|r| - beta/2) outside,
    with r the residual on the pixel scale; the two branches and their
    derivatives agree at |r| = beta.  Returns the mean over all 4F entries.
    """
    target = np.asarray(target, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if pred.shape != target.shape or pred.shape != mask.shape:
        raise LossShapeError(
            f"hand loss shapes differ: pred {pred.shape}, target {target.shape}, mask {mask.shape}"
        )
    r = (pred - target) * pixel_scale
    quadratic = r * r * (0.5 / beta)
    linear = r.abs() - 0.5 * beta
    branch = where(np.abs(r.data) < beta, quadratic, linear)
    return (branch * mask).mean()


def ego_loss(pred, target):
    """Mean squared error over 9F standardized homography elements."""
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise LossShapeError(
            f"ego loss shapes differ: pred {pred.shape}, target {target.shape}"
        )
    d = pred - target
    return (d * d).mean()


def total_loss(l_hand, l_ego=None, alpha=1.0):
    """l_hand + alpha * l_ego; the ego term is omitted when alpha is 0 or no
    ego prediction exists, leaving ego parameters out of the gradient path."""
    if l_ego is None or alpha == 0.0:
        return l_hand
    return l_hand + l_ego * alpha


def masked_targets(future_hands, F):
    """Flatten per-step optional (left, right) positions into the 4F target
    vector and its binary mask; unobserved entries are zero-padded.

    `future_hands` is a list of F (left, right) pairs where each element is
    an (x, y) tuple or None.
    """
    target = np.zeros(4 * F)
    mask = np.zeros(4 * F)
    for f, (left, right) in enumerate(future_hands):
        if left is not None:
            target[4 * f : 4 * f + 2] = left
            mask[4 * f : 4 * f + 2] = 1.0
        if right is not None:
            target[4 * f + 2 : 4 * f + 4] = right
            mask[4 * f + 2 : 4 * f + 4] = 1.0
    return target, mask
