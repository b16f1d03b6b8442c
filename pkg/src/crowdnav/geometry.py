"""Small planar geometry helpers shared across the package."""
from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta):
    """Wrap angle(s) into (-pi, pi]; values already inside are returned unchanged."""
    if np.ndim(theta) == 0:
        th = float(theta)
        if -math.pi < th <= math.pi:
            return th
        t = math.fmod(th + math.pi, TWO_PI)
        if t <= 0.0:
            t += TWO_PI
        return t - math.pi
    arr = np.asarray(theta, dtype=float)
    t = np.fmod(arr + math.pi, TWO_PI)
    t = np.where(t <= 0.0, t + TWO_PI, t) - math.pi
    inside = (arr > -math.pi) & (arr <= math.pi)
    return np.where(inside, arr, t)


def angdiff(a, b):
    """Signed smallest difference a - b, wrapped into (-pi, pi]."""
    return wrap_angle(np.subtract(a, b))


def rotate(vec, theta):
    """Rotate 2D vector(s) of shape (..., 2) counter-clockwise by theta."""
    v = np.asarray(vec, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    x, y = v[..., 0], v[..., 1]
    return np.stack([c * x - s * y, s * x + c * y], axis=-1)


def compose(pose, delta):
    """Apply a body-frame increment (dx, dy, dth) to pose(s) (x, y, th).

    Works for a single pose of shape (3,) or a batch (n, 3).
    """
    p = np.asarray(pose, dtype=float)
    d = np.asarray(delta, dtype=float)
    th = p[..., 2]
    c, s = np.cos(th), np.sin(th)
    x = p[..., 0] + c * d[..., 0] - s * d[..., 1]
    y = p[..., 1] + s * d[..., 0] + c * d[..., 1]
    return np.stack([x, y, wrap_angle(th + d[..., 2])], axis=-1)


def relative(pose_from, pose_to):
    """Body-frame increment taking pose_from to pose_to (inverse of compose)."""
    a = np.asarray(pose_from, dtype=float)
    b = np.asarray(pose_to, dtype=float)
    dp = b[..., :2] - a[..., :2]
    local = rotate(dp, -a[..., 2])
    return np.concatenate([local, np.asarray(angdiff(b[..., 2], a[..., 2]))[..., None]], axis=-1)


def octile(di: int, dj: int) -> float:
    di, dj = abs(di), abs(dj)
    return max(di, dj) + (math.sqrt(2.0) - 1.0) * min(di, dj)


def rect_closest(points: np.ndarray, rect: tuple[float, float, float, float]) -> np.ndarray:
    x0, y0, x1, y1 = rect
    return np.stack([np.clip(points[..., 0], x0, x1), np.clip(points[..., 1], y0, y1)], axis=-1)


def segments_hit_rect(a: np.ndarray, b: np.ndarray, rect) -> np.ndarray:
    """Liang-Barsky slab test for segments a[k] -> b[k] against an AABB."""
    x0, y0, x1, y1 = rect
    d = b - a
    t0 = np.zeros(len(a))
    t1 = np.ones(len(a))
    hit = np.ones(len(a), dtype=bool)
    for axis, lo, hi in ((0, x0, x1), (1, y0, y1)):
        da = d[:, axis]
        pa = a[:, axis]
        par = np.abs(da) < 1e-12
        hit &= ~(par & ((pa < lo) | (pa > hi)))
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (lo - pa) / da
            tb = (hi - pa) / da
        tmin = np.where(par, -np.inf, np.minimum(ta, tb))
        tmax = np.where(par, np.inf, np.maximum(ta, tb))
        t0 = np.maximum(t0, tmin)
        t1 = np.minimum(t1, tmax)
    return hit & (t0 <= t1)


def segments_hit_circle(a: np.ndarray, b: np.ndarray, center, radius: float) -> np.ndarray:
    c = np.asarray(center, dtype=float)
    d = b - a
    dd = np.einsum("ij,ij->i", d, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(dd > 0, np.einsum("ij,ij->i", c - a, d) / dd, 0.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[:, None] * d
    return np.hypot(*(closest - c).T) < radius
