"""Binary PPM frames from a trajectory log, for figure reproduction."""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

from .scenario import Circle, Rect, Scenario

# legend
BACKGROUND = (255, 255, 255)
OBSTACLE = (64, 64, 64)
TRAIL = (190, 190, 190)
GOAL = (0, 160, 0)
ESTIMATE = (0, 0, 255)
ROBOT = (255, 0, 0)

REQUIRED = ("t", "true_x", "true_y")


class LogFormatError(ValueError):
    pass


def read_trajectory_log(text: str) -> np.ndarray:
    """Parse a trajectory CSV; returns an (n, k) float array with the file's columns.

    The header must contain at least t, true_x, true_y.  An empty file or a
    header-only file yields an empty array.
    """
    if not text.strip():
        return np.zeros((0, len(REQUIRED)))
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    missing = [c for c in REQUIRED if c not in header]
    if missing:
        raise LogFormatError(f"log header lacks columns: {', '.join(missing)}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise LogFormatError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            vals = [float(v) for v in row]
        except ValueError as exc:
            raise LogFormatError(f"line {lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in vals):
            raise LogFormatError(f"line {lineno}: non-finite value")
        rows.append(vals)
    cols = {name: k for k, name in enumerate(header)}
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    order = [cols[c] for c in REQUIRED]
    extra = [cols[c] for c in ("est_x", "est_y") if c in cols]
    return arr[:, order + (extra if len(extra) == 2 else [])]


class Canvas:
    def __init__(self, width_m: float, height_m: float, scale: float, origin=(0.0, 0.0)):
        self.scale = scale
        self.origin = origin
        self.w = max(1, int(math.ceil(width_m * scale)))
        self.h = max(1, int(math.ceil(height_m * scale)))
        self.img = np.empty((self.h, self.w, 3), dtype=np.uint8)
        self.img[:] = BACKGROUND

    def pixel(self, x: float, y: float) -> tuple[int, int]:
        """(row, col) of a world point; north is up."""
        col = int(math.floor((x - self.origin[0]) * self.scale))
        row = self.h - 1 - int(math.floor((y - self.origin[1]) * self.scale))
        return row, col

    def disc(self, x: float, y: float, radius_px: int, color) -> None:
        r0, c0 = self.pixel(x, y)
        for dr in range(-radius_px, radius_px + 1):
            for dc in range(-radius_px, radius_px + 1):
                if dr * dr + dc * dc <= radius_px * radius_px:
                    r, c = r0 + dr, c0 + dc
                    if 0 <= r < self.h and 0 <= c < self.w:
                        self.img[r, c] = color

    def ppm(self) -> bytes:
        return f"P6\n{self.w} {self.h}\n255\n".encode() + self.img.tobytes()


def _base(scenario: Scenario | None, traj: np.ndarray, scale: float) -> Canvas:
    if scenario is not None:
        canvas = Canvas(scenario.width, scenario.height, scale)
        ys, xs = np.mgrid[0:canvas.h, 0:canvas.w]
        wx = (xs + 0.5) / scale
        wy = (canvas.h - ys - 0.5) / scale
        for o in scenario.obstacles:
            if isinstance(o, Rect):
                m = (wx >= o.x0) & (wx <= o.x1) & (wy >= o.y0) & (wy <= o.y1)
            elif isinstance(o, Circle):
                m = np.hypot(wx - o.cx, wy - o.cy) <= o.r
            else:  # pragma: no cover
                continue
            canvas.img[m] = OBSTACLE
        canvas.disc(*scenario.robot_goal, max(1, int(scale // 2)), GOAL)
        return canvas
    lo = traj[:, 1:3].min(axis=0) - 1.0
    hi = traj[:, 1:3].max(axis=0) + 1.0
    return Canvas(hi[0] - lo[0], hi[1] - lo[1], scale, origin=(float(lo[0]), float(lo[1])))


def render_frames(traj: np.ndarray, scenario: Scenario | None = None, scale: float = 4.0):
    """Yield one PPM image per log row: trail so far, estimate, then the true robot on top."""
    traj = np.asarray(traj, dtype=float)
    if len(traj) == 0:
        return
    base = _base(scenario, traj, scale)
    trail = base.img.copy()
    has_est = traj.shape[1] >= 5
    for k in range(len(traj)):
        frame = Canvas.__new__(Canvas)
        frame.__dict__.update(base.__dict__)
        r, c = base.pixel(traj[k, 1], traj[k, 2])
        if 0 <= r < base.h and 0 <= c < base.w:
            trail[r, c] = TRAIL
        frame.img = trail.copy()
        if has_est:
            frame.disc(traj[k, 3], traj[k, 4], 1, ESTIMATE)
        frame.disc(traj[k, 1], traj[k, 2], 1, ROBOT)
        yield frame.ppm()


def write_frames(traj: np.ndarray, out_dir: str | Path, scenario: Scenario | None = None,
                 scale: float = 4.0) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for k, data in enumerate(render_frames(traj, scenario, scale)):
        (out / f"frame_{k:05d}.ppm").write_bytes(data)
        n += 1
    return n
