"""Camera ego-motion estimation from dense optical flow.

A frame pair's ego-motion is a 3x3 planar homography fitted to flow-derived
point correspondences: a normalized direct linear transform (DLT) gives the
least-squares solve, RANSAC makes it robust to flow cells that belong to
moving hands or are plain outliers.  Homographies are normalized so the
bottom-right element is one, then standardized per element with training-set
statistics before entering the forecaster.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STD_FLOOR = 1e-6


class EgoMotionError(ValueError):
    pass


class InsufficientDataError(EgoMotionError):
    pass


class DegenerateGeometryError(EgoMotionError):
    pass


class NormalizationError(EgoMotionError):
    """Pivot element too close to zero; caller should substitute identity."""


@dataclass
class FlowField:
    """Dense grid of per-cell (u, v) pixel displacements.

    `vectors` has shape (height, width, 2); cell (r, c) covers the pixel
    region [c*sx, (c+1)*sx) x [r*sy, (r+1)*sy) where sx = image_width/width.
    """

    width: int
    height: int
    vectors: np.ndarray
    image_width: float = None
    image_height: float = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64).reshape(
            self.height, self.width, 2
        )
        if not np.isfinite(self.vectors).all():
            raise EgoMotionError("flow field contains non-finite values")
        if self.image_width is None:
            self.image_width = float(self.width)
        if self.image_height is None:
            self.image_height = float(self.height)

    def cell_centers(self, stride=1):
        """Pixel coordinates of cell centers, sampled every `stride` cells."""
        sy = self.image_height / self.height
        sx = self.image_width / self.width
        rows = np.arange(0, self.height, stride)
        cols = np.arange(0, self.width, stride)
        cx, cy = np.meshgrid((cols + 0.5) * sx, (rows + 0.5) * sy)
        return np.stack([cx, cy], axis=-1)


@dataclass
class Correspondence:
    src: tuple
    dst: tuple


@dataclass
class StandardizationStats:
    """Per-element mean/std over the training split, std floored at 1e-6."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_rows(cls, rows):
        rows = np.asarray(rows, dtype=np.float64)
        if rows.size == 0:
            raise EgoMotionError("cannot compute standardization stats of empty split")
        return cls(
            mean=rows.mean(axis=0),
            std=np.maximum(rows.std(axis=0), STD_FLOOR),
        )

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float))


def standardize(values, stats):
    return (np.asarray(values, dtype=np.float64) - stats.mean) / stats.std


def inverse_standardize(values, stats):
    return np.asarray(values, dtype=np.float64) * stats.std + stats.mean


def flow_to_correspondences(flow, stride=8):
    """One (src, dst) pair per sampled grid cell: dst = src + displacement."""
    if flow.width == 0 or flow.height == 0:
        return []
    src = flow.cell_centers(stride).reshape(-1, 2)
    disp = flow.vectors[::stride, ::stride].reshape(-1, 2)
    return [
        Correspondence(tuple(s), tuple(s + d)) for s, d in zip(src, disp)
    ]


def _corr_arrays(corrs):
    src = np.array([c.src for c in corrs], dtype=np.float64)
    dst = np.array([c.dst for c in corrs], dtype=np.float64)
    return src, dst


def _hartley_normalization(points):
    """Translate centroid to origin, scale mean distance to sqrt(2)."""
    centroid = points.mean(axis=0)
    dist = np.sqrt(((points - centroid) ** 2).sum(axis=1)).mean()
    scale = np.sqrt(2.0) / dist if dist > 1e-12 else 1.0
    T = np.array(
        [
            [scale, 0.0, -scale * centroid[0]],
            [0.0, scale, -scale * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )
    return T


def _apply_h(h, points):
    ones = np.ones((points.shape[0], 1))
    proj = np.hstack([points, ones]) @ h.T
    w = proj[:, 2]
    if np.any(np.abs(w) < 1e-12):
        raise EgoMotionError("point projects to infinity")
    return proj[:, :2] / w[:, None]


def solve_homography_dlt(corrs):
    """Least-squares homography from >= 4 correspondences.

    Hartley-normalizes both point sets, solves the 2n x 9 DLT system by SVD
    null vector, denormalizes, and scales so element [2, 2] is one.
    """
    if len(corrs) < 4:
        raise InsufficientDataError(
            f"homography needs >= 4 correspondences, got {len(corrs)}"
        )
    src, dst = _corr_arrays(corrs)
    Ts, Td = _hartley_normalization(src), _hartley_normalization(dst)
    s = _apply_h(Ts, src)
    d = _apply_h(Td, dst)

    n = len(corrs)
    A = np.zeros((2 * n, 9))
    A[0::2, 0:2] = s
    A[0::2, 2] = 1.0
    A[0::2, 6:8] = -s * d[:, 0:1]
    A[0::2, 8] = -d[:, 0]
    A[1::2, 3:5] = s
    A[1::2, 5] = 1.0
    A[1::2, 6:8] = -s * d[:, 1:2]
    A[1::2, 8] = -d[:, 1]

    _, sv, vt = np.linalg.svd(A)
    # rank < 8 means the null space is not one-dimensional; sv[7] is the
    # second-smallest singular value both for the minimal 8x9 system and for
    # overdetermined ones
    if sv[7] < sv[0] * 1e-9:
        raise DegenerateGeometryError("rank-deficient correspondence configuration")
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ Hn @ Ts
    return normalize_homography(H)


def normalize_homography(h):
    """Divide all elements by h[2, 2] so the bottom-right element is one."""
    h = np.asarray(h, dtype=np.float64).reshape(3, 3)
    pivot = h[2, 2]
    if abs(pivot) < 1e-12:
        raise NormalizationError("homography pivot h33 is near zero")
    return h / pivot


def reprojection_error(h, corr):
    """Euclidean pixel distance between h applied to src and dst."""
    projected = _apply_h(np.asarray(h, float), np.array([corr.src], float))[0]
    return float(np.hypot(*(projected - np.asarray(corr.dst, float))))


def _reprojection_errors(h, src, dst):
    ones = np.ones((src.shape[0], 1))
    proj = np.hstack([src, ones]) @ h.T
    w = proj[:, 2]
    bad = np.abs(w) < 1e-12
    w = np.where(bad, 1.0, w)
    err = np.hypot(*(proj[:, :2] / w[:, None] - dst).T)
    err[bad] = np.inf
    return err


def _has_collinear_triplet(points, tol=1e-9):
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            for k in range(j + 1, len(points)):
                a, b, c = points[i], points[j], points[k]
                cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
                if abs(cross) < tol:
                    return True
    return False


def ransac_homography(corrs, iterations=500, inlier_threshold_px=1.0, rng_seed=0):
    """Robust homography fit: best minimal model by inlier count, then a DLT
    refit on that model's inliers.

    Ties on inlier count break toward lower mean inlier reprojection error.
    Deterministic for a fixed `rng_seed`.  Returns (H, inlier_mask).
    """
    if len(corrs) < 4:
        raise InsufficientDataError(
            f"RANSAC needs >= 4 correspondences, got {len(corrs)}"
        )
    if iterations < 1 or inlier_threshold_px <= 0:
        raise EgoMotionError("iterations must be >= 1 and threshold > 0")

    src, dst = _corr_arrays(corrs)
    n = len(corrs)
    rng = np.random.default_rng(rng_seed)

    best_count = -1
    best_mean_err = np.inf
    best_mask = None
    for _ in range(iterations):
        sample = None
        for _ in range(50):  # resample degenerate minimal sets
            idx = rng.choice(n, size=4, replace=False)
            if not _has_collinear_triplet(src[idx]) and not _has_collinear_triplet(dst[idx]):
                sample = idx
                break
        if sample is None:
            continue
        try:
            h = solve_homography_dlt([corrs[i] for i in sample])
        except EgoMotionError:
            continue
        err = _reprojection_errors(h, src, dst)
        mask = err < inlier_threshold_px
        count = int(mask.sum())
        if count < 4:
            continue
        mean_err = float(err[mask].mean())
        if count > best_count or (count == best_count and mean_err < best_mean_err):
            best_count = count
            best_mean_err = mean_err
            best_mask = mask
    if best_mask is None:
        raise DegenerateGeometryError("all RANSAC iterations degenerate")
    refit = solve_homography_dlt([c for c, m in zip(corrs, best_mask) if m])
    return refit, best_mask


def background_flow_ego(flow, hand_boxes=()):
    """Mean displacement over cells whose centers lie outside all hand boxes.

    Falls back to the mean over every cell when the boxes cover the grid.
    Boxes are (x1, y1, x2, y2) in the flow's pixel coordinates.
    """
    centers = flow.cell_centers().reshape(-1, 2)
    vectors = flow.vectors.reshape(-1, 2)
    outside = np.ones(len(centers), dtype=bool)
    for x1, y1, x2, y2 in hand_boxes:
        inside = (
            (centers[:, 0] >= x1)
            & (centers[:, 0] <= x2)
            & (centers[:, 1] >= y1)
            & (centers[:, 1] <= y2)
        )
        outside &= ~inside
    if not outside.any():
        outside[:] = True
    u, v = vectors[outside].mean(axis=0)
    return float(u), float(v)
