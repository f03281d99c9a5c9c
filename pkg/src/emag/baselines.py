"""Training-free trajectory baselines: constant velocity and a Kalman filter.

Both consume per-hand observation tracks in normalized image coordinates
(height = 1) and emit F future center positions.  A track with zero
observations is unforecastable and returns None so the caller can exclude it
from metric aggregation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class HandTrack:
    """Observations for one hand over the T observed frames.

    `positions[t]` is an (x, y) center or None; `boxes[t]` is
    (x1, y1, x2, y2) or None.  Boxes are optional; the Kalman baseline
    synthesizes a nominal box around the center when only positions exist.
    """

    positions: list
    boxes: list = None
    side: str = "left"

    def __post_init__(self):
        if self.boxes is None:
            self.boxes = [None] * len(self.positions)
        for box in self.boxes:
            if box is not None:
                x1, y1, x2, y2 = box
                if not (x1 < x2 and y1 < y2):
                    raise ValueError(f"malformed box {box}")

    def last_observed(self):
        for p in reversed(self.positions):
            if p is not None:
                return p
        return None


def cvm_forecast(track: HandTrack, F: int):
    """Constant velocity: v between the last two frames, extrapolated F steps.

    Falls back to repeating the last observed position when either of the
    final two frames is missing; returns None for an empty track.
    """
    last = track.last_observed()
    if last is None:
        return None
    p_t = track.positions[-1]
    p_prev = track.positions[-2] if len(track.positions) >= 2 else None
    if p_t is None or p_prev is None:
        return [tuple(last)] * F
    v = (p_t[0] - p_prev[0], p_t[1] - p_prev[1])
    return [(p_t[0] + f * v[0], p_t[1] + f * v[1]) for f in range(1, F + 1)]


@dataclass
class KalmanParams:
    """Noise configuration following the SORT constant-velocity convention,
    rescaled for normalized image coordinates."""

    measurement_noise: float = 1e-2   # R = diag(1, 1, 10, 10) * this
    process_noise_vel: float = 1e-2   # Q velocity block scale
    initial_cov: float = 10.0
    initial_vel_cov_boost: float = 1000.0
    default_box_size: float = 0.1     # synthesized box when only centers exist


class KalmanBoxTracker:
    """Constant-velocity Kalman filter over (cx, cy, s, r) box measurements.

    State is [cx, cy, s, r, vcx, vcy, vs]; aspect ratio r has no velocity.
    The update uses the Joseph form so the covariance stays symmetric
    positive-definite.
    """

    def __init__(self, box, params: KalmanParams = None):
        p = params or KalmanParams()
        self.F = np.eye(7)
        self.F[0, 4] = self.F[1, 5] = self.F[2, 6] = 1.0
        self.H = np.zeros((4, 7))
        self.H[:4, :4] = np.eye(4)

        self.R = np.diag([1.0, 1.0, 10.0, 10.0]) * p.measurement_noise
        self.Q = np.eye(7)
        self.Q[4:, 4:] *= p.process_noise_vel
        self.Q[-1, -1] *= p.process_noise_vel
        self.P = np.eye(7)
        self.P[4:, 4:] *= p.initial_vel_cov_boost
        self.P *= p.initial_cov

        self.x = np.zeros(7)
        self.x[:4] = self._box_to_z(box)

    @staticmethod
    def _box_to_z(box):
        x1, y1, x2, y2 = box
        w, h = x2 - x1, y2 - y1
        return np.array([(x1 + x2) / 2.0, (y1 + y2) / 2.0, w * h, w / h])

    def predict(self):
        self.x = self.F @ self.x
        self.P = self.F @ self.P @ self.F.T + self.Q
        return self.x[:2].copy()

    def update(self, box):
        z = self._box_to_z(box)
        y = z - self.H @ self.x
        S = self.H @ self.P @ self.H.T + self.R
        K = self.P @ self.H.T @ np.linalg.inv(S)
        self.x = self.x + K @ y
        ikh = np.eye(7) - K @ self.H
        self.P = ikh @ self.P @ ikh.T + K @ self.R @ K.T
        self.P = (self.P + self.P.T) / 2.0


def kalman_forecast(track: HandTrack, F: int, params: KalmanParams = None):
    """SORT-style forecast: filter through the observed frames, then predict
    F steps with no updates, reading the (cx, cy) center each step.

    Missing intermediate frames coast (predict only).  Returns None for a
    track with zero observations.
    """
    p = params or KalmanParams()
    half = p.default_box_size / 2.0

    def observed_box(t):
        if track.boxes[t] is not None:
            return track.boxes[t]
        pos = track.positions[t]
        if pos is None:
            return None
        return (pos[0] - half, pos[1] - half, pos[0] + half, pos[1] + half)

    tracker = None
    for t in range(len(track.positions)):
        box = observed_box(t)
        if tracker is None:
            if box is not None:
                tracker = KalmanBoxTracker(box, p)
            continue
        tracker.predict()
        if box is not None:
            tracker.update(box)
    if tracker is None:
        return None
    return [tuple(tracker.predict()) for _ in range(F)]
