"""Displacement-error metrics on the 256-px display scale.

Predictions and targets use normalized coordinates (image height = 1);
errors are reported after multiplying by the pixel scale.  Masked future
positions are excluded from the averages, and a sample with no observed
future positions at all yields None so callers can drop it rather than
dilute the aggregate.
"""

from __future__ import annotations

import numpy as np

from .losses import PIXEL_SCALE


def displacement_errors(pred, target, mask, pixel_scale=PIXEL_SCALE):
    """Per-hand-per-frame Euclidean errors in pixels.

    All inputs are flat 4F vectors ordered (left_x, left_y, right_x,
    right_y) per future frame; mask marks observed coordinates.  Returns
    (errors, observed) arrays of shape (F, 2) where observed is boolean.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 2, 2)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 2, 2)
    mask = np.asarray(mask, dtype=np.float64).reshape(-1, 2, 2)
    diff = (pred - target) * pixel_scale
    errors = np.sqrt((diff**2).sum(axis=-1))
    observed = mask.all(axis=-1) > 0
    return errors, observed


def sample_ade(pred, target, mask, pixel_scale=PIXEL_SCALE):
    """Mean pixel error over every observed hand position of one sample, or
    None when nothing is observed."""
    errors, observed = displacement_errors(pred, target, mask, pixel_scale)
    if not observed.any():
        return None
    return float(errors[observed].mean())


def sample_fde(pred, target, mask, pixel_scale=PIXEL_SCALE):
    """Mean pixel error over hands observed in the final future frame, or
    None when neither hand is observed there."""
    errors, observed = displacement_errors(pred, target, mask, pixel_scale)
    last_err, last_obs = errors[-1], observed[-1]
    if not last_obs.any():
        return None
    return float(last_err[last_obs].mean())


def aggregate(values):
    """Unweighted mean over samples, skipping None markers; None if all are
    excluded."""
    kept = [v for v in values if v is not None]
    if not kept:
        return None
    return float(np.mean(kept))
