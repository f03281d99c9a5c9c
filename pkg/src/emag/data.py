"""Synthetic egocentric sequences for training and evaluation.

Each sequence covers T observed and F future frames of a camera that only
rotates, so frame-to-frame background motion is an exact homography
H = K R K^-1 in pixel space.  Two hands move by attractor dynamics in the
reference plane of the first frame and are composed with the cumulative
camera homography to get image positions; detections are dropped at random
to mimic an unreliable hand detector.  Appearance features carry a
per-domain signature so that models leaning on them transfer poorly across
domains, while flow features are computed from the rendered flow field and
carry no signature.

Sequences are seeded individually from (dataset_seed, index), so any subset
of a dataset can be regenerated without producing the rest.  Serialization
is canonical JSON lines; writing the same sequences twice yields identical
bytes (gzip members are written with a zeroed timestamp).
"""

from __future__ import annotations

import gzip
import io
import json
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np

from .ego_motion import StandardizationStats, normalize_homography

Point = Optional[tuple]
Box = Optional[tuple]

# Fixed projection mixing true hand positions into appearance features.
# Shared across domains: the recoverable signal is the same everywhere,
# only the signature channels shift between domains.
_POSITION_MIXER = np.random.default_rng(61250).normal(size=(12, 4)) * 1.5


@dataclass
class ScenarioConfig:
    """Generator knobs for one recording domain."""

    name: str
    observed_steps: int = 8
    future_steps: int = 4
    image_size: int = 256
    focal: float = 256.0
    num_objects: int = 2
    rgb_dim: int = 32
    flow_dim: int = 32
    flow_grid: int = 32
    # Camera angular velocity follows an AR(1) walk; axis scales damp pitch
    # and roll relative to yaw.
    rotation_std: float = 0.01
    rotation_smooth: float = 0.9
    axis_scales: tuple = (1.0, 0.7, 0.25)
    # Hand dynamics in the reference plane, pixel units.
    hand_accel: float = 0.12
    hand_damping: float = 0.75
    hand_jitter: float = 0.8
    hand_speed_cap: float = 6.0
    pause_prob: float = 0.1
    pause_hold: float = 0.7
    target_switch_prob: float = 0.15
    hand_region: tuple = (0.3, 0.35, 0.7, 0.85)
    hand_box_size: float = 0.11
    object_size: float = 0.12
    hand_missing_prob: float = 0.25
    # Appearance and flow rendering.
    signature: tuple = (1.5, -1.5, 1.5, -1.5, 1.5, -1.5, 1.5, -1.5)
    signature_noise: float = 0.25
    rgb_noise: float = 0.15
    flow_feature_noise: float = 0.05
    flow_noise: float = 0.05
    flow_outlier_prob: float = 0.02

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("axis_scales", "hand_region", "signature"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def kitchen_config(**overrides):
    """Slow, close-range manipulation: small camera rotations, short hand
    strokes with frequent pauses."""
    cfg = ScenarioConfig(
        name="kitchen",
        rotation_std=0.006,
        rotation_smooth=0.85,
        hand_accel=0.08,
        hand_damping=0.7,
        hand_jitter=0.5,
        hand_speed_cap=3.5,
        pause_prob=0.25,
        pause_hold=0.8,
        target_switch_prob=0.12,
        hand_region=(0.32, 0.45, 0.68, 0.82),
        signature=(1.5, -1.5, 1.5, -1.5, 1.5, -1.5, 1.5, -1.5),
    )
    return replace(cfg, **overrides) if overrides else cfg


def outdoor_config(**overrides):
    """Locomotion and reaching: sweeping camera rotations, fast hands, few
    pauses."""
    cfg = ScenarioConfig(
        name="outdoor",
        rotation_std=0.022,
        rotation_smooth=0.93,
        hand_accel=0.16,
        hand_damping=0.8,
        hand_jitter=1.2,
        hand_speed_cap=9.0,
        pause_prob=0.03,
        pause_hold=0.5,
        target_switch_prob=0.2,
        hand_region=(0.2, 0.3, 0.8, 0.85),
        signature=(-1.5, 1.5, -1.5, 1.5, -1.5, 1.5, -1.5, 1.5),
    )
    return replace(cfg, **overrides) if overrides else cfg


DOMAIN_CONFIGS = {"kitchen": kitchen_config, "outdoor": outdoor_config}


@dataclass
class SequenceSample:
    """One generated sequence: observed tokens plus future targets.

    Positions and boxes are in normalized coordinates (image height = 1);
    homographies are 3x3 row-major in pixel space with h33 = 1.  `ego[t]`
    maps frame t-1 to frame t, with the identity at t = 0; `future_ego[f]`
    maps frame T+f-1 to T+f.
    """

    sequence_id: str
    domain: str
    seed: int
    index: int
    image_size: int
    left: list  # T entries of (x, y) or None
    right: list
    left_boxes: list  # T entries of (x1, y1, x2, y2) or None
    right_boxes: list
    object_boxes: np.ndarray  # (T, k, 4)
    rgb: np.ndarray  # (T, D_rgb)
    flow: np.ndarray  # (T, D_flow)
    ego: np.ndarray  # (T, 9)
    future_left: list  # F entries of (x, y) or None
    future_right: list
    future_ego: np.ndarray  # (F, 9)
    flow_grids: Optional[np.ndarray] = None  # (T, g, g, 2) pixel units
    # Observed steps whose homography estimation fell back to identity.
    failed_frames: Optional[list] = None

    @property
    def observed_steps(self):
        return len(self.left)

    @property
    def future_steps(self):
        return len(self.future_left)

    def to_dict(self):
        d = {
            "sequence_id": self.sequence_id,
            "domain": self.domain,
            "seed": self.seed,
            "index": self.index,
            "image_size": self.image_size,
            "left": [list(p) if p is not None else None for p in self.left],
            "right": [list(p) if p is not None else None for p in self.right],
            "left_boxes": [list(b) if b is not None else None for b in self.left_boxes],
            "right_boxes": [list(b) if b is not None else None for b in self.right_boxes],
            "object_boxes": self.object_boxes.tolist(),
            "rgb": self.rgb.tolist(),
            "flow": self.flow.tolist(),
            "ego": self.ego.tolist(),
            "future_left": [list(p) if p is not None else None for p in self.future_left],
            "future_right": [list(p) if p is not None else None for p in self.future_right],
            "future_ego": self.future_ego.tolist(),
        }
        if self.flow_grids is not None:
            d["flow_grids"] = self.flow_grids.tolist()
        if self.failed_frames is not None:
            d["failed_frames"] = list(self.failed_frames)
        return d

    @classmethod
    def from_dict(cls, d):
        def points(entries):
            return [tuple(p) if p is not None else None for p in entries]

        grids = d.get("flow_grids")
        return cls(
            sequence_id=d["sequence_id"],
            domain=d["domain"],
            seed=d["seed"],
            index=d["index"],
            image_size=d["image_size"],
            left=points(d["left"]),
            right=points(d["right"]),
            left_boxes=points(d["left_boxes"]),
            right_boxes=points(d["right_boxes"]),
            object_boxes=np.asarray(d["object_boxes"], dtype=np.float64),
            rgb=np.asarray(d["rgb"], dtype=np.float64),
            flow=np.asarray(d["flow"], dtype=np.float64),
            ego=np.asarray(d["ego"], dtype=np.float64),
            future_left=points(d["future_left"]),
            future_right=points(d["future_right"]),
            future_ego=np.asarray(d["future_ego"], dtype=np.float64),
            flow_grids=np.asarray(grids, dtype=np.float64) if grids is not None else None,
            failed_frames=d.get("failed_frames"),
        )

    def future_targets(self):
        """Flat 4F target vector and mask ordered (left, right) per frame."""
        F = self.future_steps
        target = np.zeros(4 * F)
        mask = np.zeros(4 * F)
        for f in range(F):
            if self.future_left[f] is not None:
                target[4 * f : 4 * f + 2] = self.future_left[f]
                mask[4 * f : 4 * f + 2] = 1.0
            if self.future_right[f] is not None:
                target[4 * f + 2 : 4 * f + 4] = self.future_right[f]
                mask[4 * f + 2 : 4 * f + 4] = 1.0
        return target, mask


def apply_homography(H, points):
    """Map (..., 2) points through a 3x3 homography."""
    pts = np.asarray(points, dtype=np.float64)
    ones = np.ones(pts.shape[:-1] + (1,))
    homo = np.concatenate([pts, ones], axis=-1) @ H.T
    return homo[..., :2] / homo[..., 2:3]


def _rotation(yaw, pitch, roll):
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    rz = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
    return rz @ rx @ ry


def simulate_camera(cfg, rng):
    """Rotation-only camera walk.

    Returns (steps, cumulative): lists of T+F homographies where steps[t]
    maps frame t-1 to t (identity at t = 0) and cumulative[t] maps frame 0
    to t.
    """
    n = cfg.observed_steps + cfg.future_steps
    c = cfg.image_size / 2.0
    K = np.array([[cfg.focal, 0.0, c], [0.0, cfg.focal, c], [0.0, 0.0, 1.0]])
    K_inv = np.linalg.inv(K)
    scales = np.asarray(cfg.axis_scales, dtype=np.float64)

    angles = np.zeros(3)
    velocity = np.zeros(3)
    rotation_prev = np.eye(3)
    steps = [np.eye(3)]
    cumulative = [np.eye(3)]
    for _ in range(1, n):
        velocity = cfg.rotation_smooth * velocity + rng.normal(size=3) * (
            cfg.rotation_std * scales
        )
        angles = angles + velocity
        rotation = _rotation(*angles)
        steps.append(normalize_homography(K @ rotation @ rotation_prev.T @ K_inv))
        cumulative.append(normalize_homography(K @ rotation @ K_inv))
        rotation_prev = rotation
    return steps, cumulative


def simulate_hands(cfg, cumulative, rng):
    """Attractor-driven hand trajectories.

    Hands live in the reference plane of frame 0 and accelerate toward
    targets inside `hand_region`; image positions are the reference
    positions pushed through the cumulative camera homography, normalized
    by image size.  Returns (image_positions, box_sizes) with positions of
    shape (T+F, 2, 2).
    """
    n = len(cumulative)
    S = cfg.image_size
    x1, y1, x2, y2 = cfg.hand_region

    def sample_target(side):
        # Keep the left hand left of center and vice versa so hands rarely
        # cross, as real egocentric footage mostly shows.
        mid = (x1 + x2) / 2.0
        lo, hi = (x1, mid) if side == 0 else (mid, x2)
        return np.array([rng.uniform(lo, hi), rng.uniform(y1, y2)]) * S

    positions = np.zeros((n, 2, 2))
    velocity = np.zeros((2, 2))
    targets = np.stack([sample_target(0), sample_target(1)])
    paused = np.zeros(2, dtype=bool)
    positions[0] = targets + rng.normal(size=(2, 2)) * 0.03 * S

    for t in range(1, n):
        for side in range(2):
            if paused[side]:
                paused[side] = rng.random() < cfg.pause_hold
            else:
                paused[side] = rng.random() < cfg.pause_prob
            if rng.random() < cfg.target_switch_prob:
                targets[side] = sample_target(side)
            if paused[side]:
                velocity[side] *= 0.2
            else:
                pull = cfg.hand_accel * (targets[side] - positions[t - 1, side])
                velocity[side] = (
                    cfg.hand_damping * velocity[side]
                    + pull
                    + rng.normal(size=2) * cfg.hand_jitter
                )
                speed = np.linalg.norm(velocity[side])
                if speed > cfg.hand_speed_cap:
                    velocity[side] *= cfg.hand_speed_cap / speed
        positions[t] = positions[t - 1] + velocity

    image_positions = np.stack(
        [apply_homography(cumulative[t], positions[t]) / S for t in range(n)]
    )
    box_sizes = cfg.hand_box_size * rng.uniform(0.9, 1.1, size=2)
    return image_positions, box_sizes


def _center_box(center, size):
    half = size / 2.0
    return (center[0] - half, center[1] - half, center[0] + half, center[1] + half)


def render_flow_grid(cfg, step_h, hands_prev, hands_curr, hand_boxes, rng):
    """Dense flow for one transition, pixel units, shape (g, g, 2).

    Background cells move by the camera homography; cells inside a hand box
    move with that hand; a small fraction of cells are replaced by outliers.
    """
    g = cfg.flow_grid
    S = cfg.image_size
    stride = S / g
    coords = (np.arange(g) + 0.5) * stride
    xs, ys = np.meshgrid(coords, coords)
    centers = np.stack([xs, ys], axis=-1)
    flow = apply_homography(step_h, centers) - centers

    for side, box in enumerate(hand_boxes):
        if box is None:
            continue
        bx1, by1, bx2, by2 = (v * S for v in box)
        inside = (xs >= bx1) & (xs <= bx2) & (ys >= by1) & (ys <= by2)
        flow[inside] = (hands_curr[side] - hands_prev[side]) * S

    flow += rng.normal(size=flow.shape) * cfg.flow_noise
    outliers = rng.random((g, g)) < cfg.flow_outlier_prob
    flow[outliers] = rng.uniform(-8.0, 8.0, size=(int(outliers.sum()), 2))
    return flow


def flow_features(cfg, grid, hand_boxes, rng):
    """Summary statistics of a flow grid; no domain-specific channels."""
    g = cfg.flow_grid
    S = cfg.image_size
    stride = S / g
    coords = (np.arange(g) + 0.5) * stride
    xs, ys = np.meshgrid(coords, coords)
    flat = grid.reshape(-1, 2)
    norms = np.linalg.norm(flat, axis=1)

    half = g // 2
    quadrants = [
        grid[:half, :half],
        grid[:half, half:],
        grid[half:, :half],
        grid[half:, half:],
    ]
    background = np.ones((g, g), dtype=bool)
    hand_means = []
    for box in hand_boxes:
        if box is None:
            hand_means.extend([0.0, 0.0])
            continue
        bx1, by1, bx2, by2 = (v * S for v in box)
        inside = (xs >= bx1) & (xs <= bx2) & (ys >= by1) & (ys <= by2)
        background &= ~inside
        hand_means.extend(grid[inside].mean(axis=0) if inside.any() else [0.0, 0.0])
    bg = grid[background].mean(axis=0) if background.any() else np.zeros(2)

    core = np.concatenate(
        [
            flat.mean(axis=0),
            flat.std(axis=0),
            np.abs(flat).mean(axis=0),
            [norms.max(), norms.mean()],
            np.concatenate([q.reshape(-1, 2).mean(axis=0) for q in quadrants]),
            bg,
            hand_means,
        ]
    )
    core = core / 8.0
    extra = cfg.flow_dim - core.shape[0]
    if extra > 0:
        core = np.concatenate([core, rng.normal(size=extra) * cfg.flow_feature_noise])
    return core[: cfg.flow_dim]


def rgb_features(cfg, true_hands, rng):
    """Appearance vector: domain signature, a noisy encoding of the true
    hand positions, and distractor noise.

    Uses true positions, not detections: the hands are visible in the frame
    even when the detector misses them, which is what makes appearance
    worth attending to.
    """
    signature = np.asarray(cfg.signature, dtype=np.float64)
    signature = signature + rng.normal(size=signature.shape) * cfg.signature_noise
    pos = np.concatenate([true_hands[0], true_hands[1]]) - 0.5
    encoded = _POSITION_MIXER @ pos + rng.normal(size=12) * cfg.rgb_noise
    rest = cfg.rgb_dim - signature.shape[0] - 12
    distractor = rng.normal(size=max(rest, 0))
    return np.concatenate([signature, encoded, distractor])[: cfg.rgb_dim]


def generate_sequence(cfg, seed, index, include_flow_grids=False):
    """Generate one sequence, fully determined by (seed, index)."""
    rng = np.random.default_rng([seed, index])
    T, F = cfg.observed_steps, cfg.future_steps
    steps, cumulative = simulate_camera(cfg, rng)
    hands, box_sizes = simulate_hands(cfg, cumulative, rng)

    missing = rng.random((T + F, 2)) < cfg.hand_missing_prob

    object_ref = rng.uniform(0.2, 0.8, size=(cfg.num_objects, 2)) * cfg.image_size
    object_boxes = np.zeros((T, cfg.num_objects, 4))
    for t in range(T):
        centers = apply_homography(cumulative[t], object_ref) / cfg.image_size
        for k in range(cfg.num_objects):
            object_boxes[t, k] = _center_box(centers[k], cfg.object_size)

    left, right, left_boxes, right_boxes = [], [], [], []
    boxes_by_side = [left_boxes, right_boxes]
    points_by_side = [left, right]
    rgb = np.zeros((T, cfg.rgb_dim))
    flow = np.zeros((T, cfg.flow_dim))
    ego = np.zeros((T, 9))
    grids = np.zeros((T, cfg.flow_grid, cfg.flow_grid, 2)) if include_flow_grids else None

    for t in range(T):
        detected_boxes = []
        true_boxes = []
        for side in range(2):
            box = _center_box(hands[t, side], box_sizes[side])
            true_boxes.append(box)
            if missing[t, side]:
                points_by_side[side].append(None)
                boxes_by_side[side].append(None)
                detected_boxes.append(None)
            else:
                points_by_side[side].append(tuple(hands[t, side]))
                boxes_by_side[side].append(box)
                detected_boxes.append(box)

        if t == 0:
            grid = np.zeros((cfg.flow_grid, cfg.flow_grid, 2))
        else:
            # The hand disturbs the flow field whether or not the detector
            # fires; only the feature extractor is limited to detections.
            grid = render_flow_grid(
                cfg, steps[t], hands[t - 1], hands[t], true_boxes, rng
            )
        if grids is not None:
            grids[t] = grid
        ego[t] = steps[t].reshape(9)
        flow[t] = flow_features(cfg, grid, detected_boxes, rng)
        rgb[t] = rgb_features(cfg, hands[t], rng)

    future_left, future_right = [], []
    for f in range(F):
        t = T + f
        future_left.append(None if missing[t, 0] else tuple(hands[t, 0]))
        future_right.append(None if missing[t, 1] else tuple(hands[t, 1]))
    future_ego = np.stack([steps[T + f].reshape(9) for f in range(F)])

    return SequenceSample(
        sequence_id=f"{cfg.name}-{index:06d}",
        domain=cfg.name,
        seed=seed,
        index=index,
        image_size=cfg.image_size,
        left=left,
        right=right,
        left_boxes=left_boxes,
        right_boxes=right_boxes,
        object_boxes=object_boxes,
        rgb=rgb,
        flow=flow,
        ego=ego,
        future_left=future_left,
        future_right=future_right,
        future_ego=future_ego,
        flow_grids=grids,
    )


def generate_dataset(cfg, count, seed, start_index=0, include_flow_grids=False):
    """Generate `count` sequences with indices start_index..start_index+count."""
    return [
        generate_sequence(cfg, seed, start_index + i, include_flow_grids)
        for i in range(count)
    ]


def _canonical_line(d):
    return json.dumps(d, sort_keys=True, separators=(",", ":"))


def save_dataset(samples, path):
    """Write JSON lines; .gz paths are compressed with a zeroed mtime so the
    same samples always produce the same bytes."""
    path = str(path)
    text = "".join(_canonical_line(s.to_dict()) + "\n" for s in samples)
    if path.endswith(".gz"):
        buf = io.BytesIO()
        with gzip.GzipFile(filename="", mode="wb", fileobj=buf, mtime=0) as f:
            f.write(text.encode("utf-8"))
        payload = buf.getvalue()
    else:
        payload = text.encode("utf-8")
    with open(path, "wb") as f:
        f.write(payload)


def load_dataset(path):
    path = str(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rt", encoding="utf-8") as f:
        return [SequenceSample.from_dict(json.loads(line)) for line in f if line.strip()]


@dataclass
class DatasetStats:
    """Per-channel standardization statistics fitted on a training split.

    Future ego targets are standardized with the observed-ego statistics.
    """

    ego: StandardizationStats
    rgb: StandardizationStats
    flow: StandardizationStats

    @classmethod
    def fit(cls, samples):
        if not samples:
            raise ValueError("cannot fit stats on an empty dataset")
        return cls(
            ego=StandardizationStats.from_rows(np.concatenate([s.ego for s in samples])),
            rgb=StandardizationStats.from_rows(np.concatenate([s.rgb for s in samples])),
            flow=StandardizationStats.from_rows(
                np.concatenate([s.flow for s in samples])
            ),
        )

    def to_dict(self):
        return {"ego": self.ego.to_dict(), "rgb": self.rgb.to_dict(), "flow": self.flow.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(
            ego=StandardizationStats.from_dict(d["ego"]),
            rgb=StandardizationStats.from_dict(d["rgb"]),
            flow=StandardizationStats.from_dict(d["flow"]),
        )


def split_by_domain(samples):
    out = {}
    for s in samples:
        out.setdefault(s.domain, []).append(s)
    return out
