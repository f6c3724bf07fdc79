import math

import numpy as np


def unit_ball_volume(dim: int) -> float:
    return math.pi ** (dim / 2) / math.gamma(dim / 2 + 1)


def interval_overlap(lo, hi, a, b):
    """Length of [lo, hi] ∩ [a, b], elementwise."""
    return np.maximum(0.0, np.minimum(hi, b) - np.maximum(lo, a))


def _quadrant_area(x, y, r):
    """Area of {0 <= u <= x, 0 <= v <= y} inside the disk of radius r, odd in x and in y."""
    sx, sy = np.sign(x), np.sign(y)
    a = np.minimum(np.abs(x), r)
    b = np.minimum(np.abs(y), r)
    inside = a * a + b * b <= r * r
    u_star = np.sqrt(np.clip(r * r - b * b, 0.0, None))
    u_star = np.minimum(u_star, a)

    def primitive(u):
        return 0.5 * (u * np.sqrt(np.clip(r * r - u * u, 0.0, None)) + r * r * np.arcsin(np.clip(u / r, -1.0, 1.0)))

    curved = b * u_star + primitive(a) - primitive(u_star)
    return sx * sy * np.where(inside, a * b, curved)


def disk_rect_area(cx, cy, r, x0, x1, y0, y1):
    """Exact area of the disk B_r((cx, cy)) intersected with [x0, x1] x [y0, y1], elementwise."""
    r = np.asarray(r, dtype=float)
    r_safe = np.maximum(r, 1e-300)
    x0, x1 = np.asarray(x0) - cx, np.asarray(x1) - cx
    y0, y1 = np.asarray(y0) - cy, np.asarray(y1) - cy
    area = (_quadrant_area(x1, y1, r_safe) - _quadrant_area(x0, y1, r_safe)
            - _quadrant_area(x1, y0, r_safe) + _quadrant_area(x0, y0, r_safe))
    return np.where(r > 0, np.maximum(area, 0.0), 0.0)


def box_distance_range(center, lo, hi):
    """Nearest and farthest Euclidean distance from center to each box [lo_i, hi_i]."""
    nearest = np.maximum(0.0, np.maximum(lo - center, center - hi))
    farthest = np.maximum(np.abs(lo - center), np.abs(hi - center))
    return np.linalg.norm(nearest, axis=-1), np.linalg.norm(farthest, axis=-1)


def ball_box_overlap(center, lo, hi, r, subsamples: int = 4):
    """Volume of B_r(center) ∩ box for each box given by rows of lo, hi.

    r is a scalar or one radius per box. Exact for one and two space dimensions;
    higher dimensions classify whole boxes exactly and sample boundary boxes on a
    subsamples^N midpoint lattice.
    """
    center = np.asarray(center, dtype=float)
    lo = np.atleast_2d(np.asarray(lo, dtype=float))
    hi = np.atleast_2d(np.asarray(hi, dtype=float))
    dim = center.shape[-1]
    r = np.broadcast_to(np.asarray(r, dtype=float), (lo.shape[0],))
    r_pos = np.maximum(r, 0.0)
    if dim == 1:
        return interval_overlap(lo[:, 0], hi[:, 0], center[..., 0] - r_pos, center[..., 0] + r_pos)
    if dim == 2:
        cx, cy = center[..., 0], center[..., 1]
        area = disk_rect_area(cx, cy, r_pos, lo[:, 0], hi[:, 0], lo[:, 1], hi[:, 1])
        return np.where(r > 0, area, 0.0)

    volume = np.prod(hi - lo, axis=1)
    nearest, farthest = box_distance_range(center, lo, hi)
    overlap = np.where(farthest <= r_pos, volume, 0.0)
    boundary = np.flatnonzero((nearest < r_pos) & (farthest > r_pos))
    if boundary.size:
        offsets = (np.arange(subsamples) + 0.5) / subsamples
        lattice = np.stack(np.meshgrid(*([offsets] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
        centers = np.broadcast_to(center, lo.shape)
        for start in range(0, boundary.size, 256):
            rows = boundary[start:start + 256]
            points = lo[rows, None, :] + lattice[None, :, :] * (hi[rows] - lo[rows])[:, None, :]
            hits = np.linalg.norm(points - centers[rows, None, :], axis=-1) < r_pos[rows, None]
            overlap[rows] = hits.mean(axis=1) * volume[rows]
    return overlap


def parabolic_diameter(xs, ts) -> float:
    """Upper bound of the parabolic diameter of a finite point set (bounding-box based)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ts = np.asarray(ts, dtype=float)
    if xs.shape[0] == 0:
        return 0.0
    spatial = float(np.linalg.norm(xs.max(axis=0) - xs.min(axis=0)))
    temporal = math.sqrt(2.0 * float(ts.max() - ts.min()))
    return max(spatial, temporal)
