"""Grid-based crowd-flow map built from pedestrian movement observations.

Each cell keeps a bounded buffer of observed velocity vectors.  Periodically
the buffer is clustered with K-means (cluster count picked by an elbow rule)
and the cluster means are quantized into at most eight direction bins.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .geometry import wrap_angle
from .crowd_sim import MovementObservation, Observations

MAP_SCHEMA = 1
N_BINS = 8
BIN_WIDTH = math.pi / 4
BIN_CENTERS = np.arange(N_BINS) * BIN_WIDTH
BIN_UNIT = np.stack([np.cos(BIN_CENTERS), np.sin(BIN_CENTERS)], axis=-1)
BIN_UNIT[np.abs(BIN_UNIT) < 1e-15] = 0.0


class MapFormatError(ValueError):
    pass


@dataclass
class MapperConfig:
    resolution: float = 1.0
    n_clusters: int = 4
    wss_threshold: float = 0.5
    relative_drop: float = 0.25
    buffer_capacity: int = 256
    refresh_every: int = 16
    max_iter: int = 50


# --------------------------------------------------------------------- bins
def quantize_direction(theta: float) -> int:
    """Direction bin 0..7; bin k is centred on k*pi/4.

    Exact half-way headings, (2k+1)*pi/8, go to the larger of the two
    neighbouring bin indices.
    """
    if not math.isfinite(theta):
        raise ValueError("heading must be finite")
    x = float(wrap_angle(theta)) / BIN_WIDTH
    lo = math.floor(x)
    frac = x - lo
    if abs(frac - 0.5) <= 1e-9:  # half-way, up to rounding of (2k+1)*pi/8
        return max(lo % N_BINS, (lo + 1) % N_BINS)
    return (lo + 1) % N_BINS if frac > 0.5 else lo % N_BINS


def bin_angle(b: int) -> float:
    return float(wrap_angle(b * BIN_WIDTH))


# ------------------------------------------------------------------ k-means
def _lex_sorted(samples: np.ndarray) -> np.ndarray:
    order = np.lexsort((samples[:, 1], samples[:, 0]))
    return samples[order]


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int) -> tuple[np.ndarray, np.ndarray, float]:
    k = len(centers)
    labels = None
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        new = np.argmin(d2, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        cnt = np.bincount(labels, minlength=k)
        sx = np.bincount(labels, weights=x[:, 0], minlength=k)
        sy = np.bincount(labels, weights=x[:, 1], minlength=k)
        has = cnt > 0
        centers[has, 0] = sx[has] / cnt[has]
        centers[has, 1] = sy[has] / cnt[has]
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
    labels = np.argmin(d2, axis=1)
    wss = float(d2[np.arange(len(x)), labels].sum())
    return centers, labels, wss


def _subset(n: int, max_candidates: int) -> list[int]:
    if n <= max_candidates:
        return list(range(n))
    return np.unique(np.linspace(0, n - 1, max_candidates).round().astype(int)).tolist()


def _greedy_centers(x: np.ndarray, first: int, k: int) -> np.ndarray:
    """k-center greedy: start at sample ``first``, repeatedly add the farthest sample."""
    centers = [x[first]]
    d2 = ((x - x[first]) ** 2).sum(-1)
    for _ in range(1, k):
        far = int(np.argmax(d2))
        centers.append(x[far])
        d2 = np.minimum(d2, ((x - x[far]) ** 2).sum(-1))
    return np.array(centers)


def iter_kmeans(samples, k_max: int, max_iter: int = 50, max_candidates: int = 12):
    """Deterministic K-means for k = 1..k_max, yielding (centers, labels, wss) per k.

    Samples are sorted lexicographically first, so the result does not depend
    on input order.  For each k several deterministic starts are tried and the
    lowest WSS wins (ties go to the earlier start):

    * the chosen k-1 centres plus the sample farthest from them,
    * the chosen k-1 centres plus each candidate sample,
    * k-center greedy seeded at each candidate sample.

    Candidates are all samples, or an evenly spaced subset of the sorted
    order for large buffers.  Every start extending the k-1 solution begins
    at or below its WSS, so WSS is non-increasing in k.
    """
    x = np.asarray(samples, dtype=float).reshape(-1, 2)
    if len(x) == 0:
        return
    x = _lex_sorted(x)
    n_distinct = len(np.unique(x, axis=0))
    k_top = min(k_max, n_distinct)
    cand = _subset(len(x), max_candidates)
    centers, labels, wss = _lloyd(x, x[:1].copy(), max_iter)
    yield centers.copy(), labels, wss
    for k in range(2, k_top + 1):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(-1).min(axis=1)
        starts = [np.vstack([centers, x[int(np.argmax(d2))]])]
        starts += [np.vstack([centers, x[i]]) for i in cand if d2[i] > 0]
        starts += [_greedy_centers(x, i, k) for i in cand]
        best = None
        for init in starts:
            trial = _lloyd(x, init.copy(), max_iter)
            if best is None or trial[2] < best[2] - 1e-12:
                best = trial
        centers, labels, wss = best
        yield centers.copy(), labels, wss


def kmeans_ladder(samples, k_max: int, max_iter: int = 50,
                  max_candidates: int = 12) -> list[tuple[np.ndarray, np.ndarray, float]]:
    """All rungs of :func:`iter_kmeans` as a list."""
    return list(iter_kmeans(samples, k_max, max_iter, max_candidates))


def elbow_select(wss: list[float], wss_threshold: float, relative_drop: float = 0.25) -> int:
    """Pick a cluster count (1-based) from a WSS ladder."""
    for k, w in enumerate(wss, start=1):
        if w <= wss_threshold:
            return k
    for k in range(1, len(wss)):
        w, w_next = wss[k - 1], wss[k]
        if w > 0 and (w - w_next) / w < relative_drop:
            return k
    return len(wss)


def cluster_cell(samples, n_clusters: int = 4, wss_threshold: float = 0.5, relative_drop: float = 0.25,
                 max_iter: int = 50) -> list[tuple[np.ndarray, int]]:
    """Cluster velocity samples; returns (mean velocity, support) per non-empty cluster.

    The ladder is evaluated lazily: rung k+1 is only computed when the elbow
    rule cannot decide at k, which gives the same choice as
    ``elbow_select`` on the full ladder.
    """
    if n_clusters < 1 or wss_threshold < 0:
        raise ValueError("need n_clusters >= 1 and wss_threshold >= 0")
    rungs = []
    chosen = None
    for rung in iter_kmeans(samples, n_clusters, max_iter):
        rungs.append(rung)
        if rung[2] <= wss_threshold:
            chosen = rung
            break
    if not rungs:
        return []
    if chosen is None:
        wss = [w for _, _, w in rungs]
        chosen = rungs[elbow_select(wss, wss_threshold, relative_drop) - 1]
    centers, labels, _ = chosen
    result = []
    for c in range(len(centers)):
        support = int(np.sum(labels == c))
        if support:
            result.append((centers[c].copy(), support))
    return result


# -------------------------------------------------------------------- cells
@dataclass
class FlowComponent:
    direction_bin: int
    mean_speed: float
    support: int

    @property
    def angle(self) -> float:
        return bin_angle(self.direction_bin)


@dataclass
class FlowCell:
    components: list[FlowComponent] = field(default_factory=list)
    samples: deque = field(default_factory=lambda: deque(maxlen=256))
    samples_since_cluster: int = 0
    total_assigned: int = 0

    @property
    def bins(self) -> list[int]:
        return [c.direction_bin for c in self.components]

    def directions(self) -> list[float]:
        return [c.angle for c in self.components]


def components_from_clusters(clusters: list[tuple[np.ndarray, int]]) -> list[FlowComponent]:
    merged: dict[int, list[float]] = {}
    for mean, support in clusters:
        speed = float(math.hypot(mean[0], mean[1]))
        b = quantize_direction(math.atan2(mean[1], mean[0]))
        acc = merged.setdefault(b, [0.0, 0])
        acc[0] += speed * support
        acc[1] += support
    return [FlowComponent(b, min(3.0, s / n), int(n)) for b, (s, n) in sorted(merged.items())]


def refresh_cell(cell: FlowCell, n_clusters: int = 4, wss_threshold: float = 0.5,
                 relative_drop: float = 0.25) -> FlowCell:
    if cell.samples:
        clusters = cluster_cell(np.array(cell.samples), n_clusters, wss_threshold, relative_drop)
        cell.components = components_from_clusters(clusters)
    else:
        cell.components = []
    cell.samples_since_cluster = 0
    return cell


# ---------------------------------------------------------------------- map
class CrowdFlowMap:
    def __init__(self, width: int, height: int, resolution: float = 1.0, origin=(0.0, 0.0),
                 config: MapperConfig | None = None):
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        if width <= 0 or height <= 0:
            raise ValueError("map needs at least one cell")
        self.width = int(width)
        self.height = int(height)
        self.resolution = float(resolution)
        self.origin = (float(origin[0]), float(origin[1]))
        self.config = config or MapperConfig(resolution=self.resolution)
        cap = self.config.buffer_capacity
        self.cells = [[FlowCell(samples=deque(maxlen=cap)) for _ in range(self.height)] for _ in range(self.width)]
        self.bin_mask = np.zeros((self.width, self.height, N_BINS), dtype=bool)
        self.dropped = 0
        self.version = 0

    @classmethod
    def for_extent(cls, width_m: float, height_m: float, config: MapperConfig | None = None) -> CrowdFlowMap:
        cfg = config or MapperConfig()
        return cls(math.ceil(width_m / cfg.resolution - 1e-9), math.ceil(height_m / cfg.resolution - 1e-9),
                   cfg.resolution, (0.0, 0.0), cfg)

    # indexing
    def cell_index(self, x: float, y: float) -> tuple[int, int] | None:
        i = math.floor((x - self.origin[0]) / self.resolution)
        j = math.floor((y - self.origin[1]) / self.resolution)
        if 0 <= i < self.width and 0 <= j < self.height:
            return (i, j)
        return None

    def cell_indices(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized floor indexing; returns (i, j, in_bounds)."""
        pts = np.asarray(pts, dtype=float)
        i = np.floor((pts[..., 0] - self.origin[0]) / self.resolution).astype(np.int64)
        j = np.floor((pts[..., 1] - self.origin[1]) / self.resolution).astype(np.int64)
        ok = (i >= 0) & (i < self.width) & (j >= 0) & (j < self.height)
        return i, j, ok

    def cell(self, i: int, j: int) -> FlowCell:
        return self.cells[i][j]

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        return (self.origin[0] + (i + 0.5) * self.resolution, self.origin[1] + (j + 0.5) * self.resolution)

    def in_bounds(self, i: int, j: int) -> bool:
        return 0 <= i < self.width and 0 <= j < self.height

    def nonempty_cells(self) -> list[tuple[int, int]]:
        return [(i, j) for i in range(self.width) for j in range(self.height) if self.cells[i][j].components]

    def is_empty(self) -> bool:
        return not self.bin_mask.any()

    # fusion
    def assign(self, observations) -> int:
        """Append observation velocities to their cells; returns how many were dropped."""
        obs = _as_batch(observations)
        if len(obs) == 0:
            return 0
        vel = obs.velocities()
        i, j, ok = self.cell_indices(obs.starts)
        for k in np.nonzero(ok)[0]:
            c = self.cells[i[k]][j[k]]
            c.samples.append((float(vel[k, 0]), float(vel[k, 1])))
            c.samples_since_cluster += 1
            c.total_assigned += 1
        dropped = int((~ok).sum())
        self.dropped += dropped
        return dropped

    def refresh(self, i: int, j: int) -> list[FlowComponent]:
        cfg = self.config
        cell = refresh_cell(self.cells[i][j], cfg.n_clusters, cfg.wss_threshold, cfg.relative_drop)
        self._sync(i, j)
        return cell.components

    def _sync(self, i: int, j: int) -> None:
        mask = np.zeros(N_BINS, dtype=bool)
        for c in self.cells[i][j].components:
            mask[c.direction_bin] = True
        if not np.array_equal(mask, self.bin_mask[i, j]):
            self.bin_mask[i, j] = mask
            self.version += 1

    def refresh_due(self, force: bool = False) -> list[tuple[int, int]]:
        """Re-cluster cells with enough new samples (any new sample if ``force``).

        Returns the cells whose direction set changed.
        """
        threshold = 1 if force else self.config.refresh_every
        changed = []
        for i in range(self.width):
            col = self.cells[i]
            for j in range(self.height):
                if col[j].samples_since_cluster >= threshold:
                    before = self.bin_mask[i, j].copy()
                    self.refresh(i, j)
                    if not np.array_equal(before, self.bin_mask[i, j]):
                        changed.append((i, j))
        return changed

    def fuse(self, observations, force: bool = False) -> list[tuple[int, int]]:
        self.assign(observations)
        return self.refresh_due(force)

    def set_components(self, i: int, j: int, components: list[FlowComponent]) -> None:
        self.cells[i][j].components = sorted(components, key=lambda c: c.direction_bin)
        self._sync(i, j)

    def copy(self) -> CrowdFlowMap:
        m = CrowdFlowMap(self.width, self.height, self.resolution, self.origin, self.config)
        for i in range(self.width):
            for j in range(self.height):
                src = self.cells[i][j]
                dst = m.cells[i][j]
                dst.components = [FlowComponent(c.direction_bin, c.mean_speed, c.support) for c in src.components]
                dst.samples.extend(src.samples)
                dst.samples_since_cluster = src.samples_since_cluster
                dst.total_assigned = src.total_assigned
        m.bin_mask = self.bin_mask.copy()
        m.dropped = self.dropped
        return m

    def component_equal(self, other: CrowdFlowMap) -> bool:
        if (self.width, self.height, self.resolution, self.origin) != (
                other.width, other.height, other.resolution, other.origin):
            return False
        for i in range(self.width):
            for j in range(self.height):
                a = [(c.direction_bin, c.mean_speed, c.support) for c in self.cells[i][j].components]
                b = [(c.direction_bin, c.mean_speed, c.support) for c in other.cells[i][j].components]
                if a != b:
                    return False
        return True


def _as_batch(observations) -> Observations:
    if isinstance(observations, Observations):
        return observations
    obs = list(observations)
    if obs and not isinstance(obs[0], MovementObservation):
        raise TypeError("expected MovementObservation items")
    return Observations.from_list(obs)


def assign_to_cells(fmap: CrowdFlowMap, observations) -> CrowdFlowMap:
    fmap.assign(observations)
    return fmap


# ------------------------------------------------------------------ quality
def min_angle_to_bins(directions: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Smallest |angle difference| between each direction and the set bins of its mask (pi if none)."""
    d = np.abs(wrap_angle(np.asarray(directions)[..., None] - BIN_CENTERS))
    d = np.where(masks, d, math.pi)
    return d.min(axis=-1)


def cell_scores(fmap: CrowdFlowMap, reference_observations) -> dict[tuple[int, int], float]:
    obs = _as_batch(reference_observations)
    i, j, ok = fmap.cell_indices(obs.starts)
    if not ok.any():
        return {}
    i, j = i[ok], j[ok]
    theta_m = min_angle_to_bins(obs.directions[ok], fmap.bin_mask[i, j])
    qhat = (math.pi - theta_m) / math.pi
    flat = i * fmap.height + j
    keys, inv = np.unique(flat, return_inverse=True)
    sums = np.bincount(inv, weights=qhat)
    counts = np.bincount(inv)
    return {(int(k // fmap.height), int(k % fmap.height)): float(s / c) for k, s, c in zip(keys, sums, counts)}


def map_quality(fmap: CrowdFlowMap, reference_observations) -> float:
    """Mean over referenced cells of the mean angular match score (pi - theta_m)/pi."""
    obs = _as_batch(reference_observations)
    if len(obs) == 0:
        raise ValueError("map_quality needs at least one reference observation")
    scores = cell_scores(fmap, obs)
    if not scores:
        return 0.0
    return float(np.mean(list(scores.values())))


# ------------------------------------------------------------ serialization
def save_map(fmap: CrowdFlowMap, include_samples: bool = False) -> bytes:
    cells = []
    for i in range(fmap.width):
        for j in range(fmap.height):
            c = fmap.cells[i][j]
            if not c.components and not (include_samples and c.samples):
                continue
            entry = {"i": i, "j": j, "components": [
                {"bin": comp.direction_bin, "speed": comp.mean_speed, "support": comp.support}
                for comp in c.components
            ]}
            if include_samples:
                entry["samples"] = [list(s) for s in c.samples]
                entry["samples_since_cluster"] = c.samples_since_cluster
                entry["total_assigned"] = c.total_assigned
            cells.append(entry)
    cfg = fmap.config
    doc = {
        "schema": MAP_SCHEMA,
        "origin": list(fmap.origin),
        "resolution": fmap.resolution,
        "width": fmap.width,
        "height": fmap.height,
        "samples_included": include_samples,
        "mapper": {"n_clusters": cfg.n_clusters, "wss_threshold": cfg.wss_threshold,
                   "relative_drop": cfg.relative_drop, "buffer_capacity": cfg.buffer_capacity,
                   "refresh_every": cfg.refresh_every},
        "cells": cells,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def load_map(payload: bytes | str) -> CrowdFlowMap:
    try:
        doc = json.loads(payload)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MapFormatError(f"corrupt map payload: {exc}") from exc
    if not isinstance(doc, dict):
        raise MapFormatError("corrupt map payload: expected an object")
    if doc.get("schema") != MAP_SCHEMA:
        raise MapFormatError(f"unsupported map schema {doc.get('schema')!r}, expected {MAP_SCHEMA}")
    try:
        mp = doc.get("mapper", {})
        cfg = MapperConfig(resolution=float(doc["resolution"]), **{k: mp[k] for k in mp})
        fmap = CrowdFlowMap(int(doc["width"]), int(doc["height"]), cfg.resolution, tuple(doc["origin"]), cfg)
        for entry in doc["cells"]:
            i, j = int(entry["i"]), int(entry["j"])
            if not fmap.in_bounds(i, j):
                raise MapFormatError(f"cell ({i}, {j}) outside the grid")
            comps = []
            for comp in entry["components"]:
                b = int(comp["bin"])
                if not 0 <= b < N_BINS:
                    raise MapFormatError(f"bad direction bin {b}")
                comps.append(FlowComponent(b, float(comp["speed"]), int(comp["support"])))
            if len({c.direction_bin for c in comps}) != len(comps):
                raise MapFormatError(f"duplicate bins in cell ({i}, {j})")
            fmap.set_components(i, j, comps)
            if "samples" in entry:
                cell = fmap.cells[i][j]
                cell.samples.extend(tuple(map(float, s)) for s in entry["samples"])
                cell.samples_since_cluster = int(entry.get("samples_since_cluster", 0))
                cell.total_assigned = int(entry.get("total_assigned", len(cell.samples)))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, MapFormatError):
            raise
        raise MapFormatError(f"corrupt map payload: {exc}") from exc
    return fmap


def heatmap_pgm(fmap: CrowdFlowMap, reference_observations) -> bytes:
    """Binary PGM, one pixel per cell (north up); gray = 255 * cell score, black where unreferenced."""
    scores = cell_scores(fmap, reference_observations) if len(_as_batch(reference_observations)) else {}
    img = np.zeros((fmap.height, fmap.width), dtype=np.uint8)
    for (i, j), s in scores.items():
        img[fmap.height - 1 - j, i] = int(round(255 * max(0.0, min(1.0, s))))
    header = f"P5\n{fmap.width} {fmap.height}\n255\n".encode("ascii")
    return header + img.tobytes()
