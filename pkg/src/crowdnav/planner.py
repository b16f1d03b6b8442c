"""Crowd-aware grid planning on the flow map.

Edge costs add a resistance term (moving against local flow) and a
lubrication term (moving across it) to the plain move length.  Costs are
clamped from below at ``eps_min * |move|`` so that every edge is positive
and A* / D* Lite stay optimal.
"""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .flow_map import BIN_UNIT, CrowdFlowMap, FlowCell

SQRT2 = math.sqrt(2.0)
MOVES = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))
MOVE_VEC = np.array(MOVES, dtype=float)
MOVE_LEN = np.hypot(MOVE_VEC[:, 0], MOVE_VEC[:, 1])
# Per (move, bin) contributions; moves are in cell units, flows are unit vectors.
RC_TABLE = -(MOVE_VEC @ BIN_UNIT.T)
LC_TABLE = np.abs(MOVE_VEC[:, 0:1] * BIN_UNIT[:, 1][None, :] - MOVE_VEC[:, 1:2] * BIN_UNIT[:, 0][None, :])


@dataclass
class CostWeights:
    w_rc: float = 1.0
    w_lc: float = 0.5
    eps_min: float = 0.05

    def __post_init__(self):
        if self.w_rc < 0 or self.w_lc < 0:
            raise ValueError("cost weights must be non-negative")
        if not 0.0 < self.eps_min < 1.0:
            raise ValueError("eps_min must lie in (0, 1)")


@dataclass
class PlannerConfig:
    weights: CostWeights = field(default_factory=CostWeights)
    v_max: float = 1.0
    lookahead: float = 1.5
    replan_period: float = 1.0
    cost_cell: str = "target"  # or "source"
    speed_scaled: bool = False
    goal_tolerance: float = 0.3
    avoid_half_angle: float = math.radians(60.0)
    avoid_range: float = 1.5
    tangential_gain: float = 0.5
    wall_margin: float = 0.5  # obstacle distance (beyond clearance) where wall sliding starts
    smooth_window: int = 3  # half-width (vertices) of the path smoothing window; 0 disables
    stall_ratio: float = 0.35  # slid/intended speed below which the robot follows the blocking edge
    release_steps: int = 20  # follow() calls without boundary following before the circulation sense is dropped


@dataclass
class AvoidState:
    """Boundary-following memory carried between ``follow`` calls of one robot."""
    sense: int = 0  # +1 keeps the obstacle on the right, -1 on the left, 0 uncommitted
    idle: int = 0  # consecutive calls without boundary following


@dataclass
class GridPath:
    cells: list[tuple[int, int]]
    total_cost: float
    world_points: np.ndarray
    edge_costs: list[float] = field(default_factory=list)
    expansions: int = 0

    def __len__(self) -> int:
        return len(self.cells)


def rc_lc(v_robot, flows) -> tuple[float, float]:
    """Resistance and lubrication sums of a move against a set of flow vectors."""
    v = np.asarray(v_robot, dtype=float)
    f = np.asarray(flows, dtype=float).reshape(-1, 2)
    if len(f) == 0:
        return 0.0, 0.0
    rc = float(np.sum(-(f @ v)))
    lc = float(np.sum(np.abs(v[0] * f[:, 1] - v[1] * f[:, 0])))
    return rc, lc


def cell_flow_vectors(cell: FlowCell, speed_scaled: bool = False) -> np.ndarray:
    if not cell.components:
        return np.zeros((0, 2))
    vecs = BIN_UNIT[[c.direction_bin for c in cell.components]]
    if speed_scaled:
        vecs = vecs * np.array([c.mean_speed for c in cell.components])[:, None]
    return vecs


def edge_cost(v_robot, cell: FlowCell | np.ndarray | list, weights: CostWeights | None = None,
              speed_scaled: bool = False) -> float:
    """Crowd-aware cost of one grid move evaluated against one cell's flows."""
    w = weights or CostWeights()
    flows = cell_flow_vectors(cell, speed_scaled) if isinstance(cell, FlowCell) else cell
    v = np.asarray(v_robot, dtype=float)
    norm = float(math.hypot(v[0], v[1]))
    rc, lc = rc_lc(v, flows)
    raw = norm + w.w_rc * rc + w.w_lc * lc
    return max(w.eps_min * norm, raw)


def cell_cost_table(fmap: CrowdFlowMap, weights: CostWeights, social: bool = True,
                    speed_scaled: bool = False) -> np.ndarray:
    """cost[i, j, m]: cost of move m evaluated against cell (i, j)'s flows."""
    base = np.broadcast_to(MOVE_LEN, (fmap.width, fmap.height, 8)).copy()
    if not social:
        return base
    flows = fmap.bin_mask.astype(float)
    if speed_scaled:
        speeds = np.zeros_like(flows)
        for i, j in fmap.nonempty_cells():
            for c in fmap.cells[i][j].components:
                speeds[i, j, c.direction_bin] = c.mean_speed
        flows = speeds
    raw = base + weights.w_rc * (flows @ RC_TABLE.T) + weights.w_lc * (flows @ LC_TABLE.T)
    return np.maximum(weights.eps_min * MOVE_LEN, raw)


def edge_table(cell_costs: np.ndarray, cost_cell: str = "target", blocked: np.ndarray | None = None) -> np.ndarray:
    """edge[i, j, m]: cost of leaving (i, j) by move m (inf when leaving the grid or entering a blocked cell)."""
    if cost_cell not in ("target", "source"):
        raise ValueError("cost_cell must be 'target' or 'source'")
    w, h, _ = cell_costs.shape
    edge = np.full((w, h, 8), np.inf)
    for m, (di, dj) in enumerate(MOVES):
        si = slice(max(0, -di), w - max(0, di))
        sj = slice(max(0, -dj), h - max(0, dj))
        ti = slice(max(0, di), w + min(0, di))
        tj = slice(max(0, dj), h + min(0, dj))
        src = cell_costs[ti, tj, m] if cost_cell == "target" else cell_costs[si, sj, m]
        if blocked is not None:
            src = np.where(blocked[ti, tj], np.inf, src)
        edge[si, sj, m] = src
    return edge


def _octile(a: tuple[int, int], b: tuple[int, int]) -> float:
    di, dj = abs(a[0] - b[0]), abs(a[1] - b[1])
    return max(di, dj) + (SQRT2 - 1.0) * min(di, dj)


def _make_path(fmap: CrowdFlowMap, cells: list[tuple[int, int]], edge: np.ndarray, expansions: int) -> GridPath:
    costs = []
    for a, b in zip(cells, cells[1:]):
        m = MOVES.index((b[0] - a[0], b[1] - a[1]))
        costs.append(float(edge[a[0], a[1], m]))
    pts = np.array([fmap.cell_center(i, j) for i, j in cells], dtype=float).reshape(-1, 2)
    return GridPath(cells, float(sum(costs)), pts, costs, expansions)


def astar_on_edges(edge: np.ndarray, start: tuple[int, int], goal: tuple[int, int],
                   h_scale: float) -> tuple[list[tuple[int, int]] | None, int]:
    """A* over a precomputed edge table; returns (cells or None, expansions)."""
    w, h, _ = edge.shape
    e = edge.tolist()
    g = {start: 0.0}
    parent: dict[tuple[int, int], tuple[int, int]] = {}
    closed = set()
    tie = itertools.count()
    heap = [(h_scale * _octile(start, goal), next(tie), start)]
    expansions = 0
    while heap:
        _, _, u = heapq.heappop(heap)
        if u in closed:
            continue
        closed.add(u)
        expansions += 1
        if u == goal:
            cells = [u]
            while u in parent:
                u = parent[u]
                cells.append(u)
            return cells[::-1], expansions
        gu = g[u]
        eu = e[u[0]][u[1]]
        for m, (di, dj) in enumerate(MOVES):
            c = eu[m]
            if c == math.inf:
                continue
            v = (u[0] + di, u[1] + dj)
            if v in closed:
                continue
            nv = gu + c
            if nv < g.get(v, math.inf):
                g[v] = nv
                parent[v] = u
                heapq.heappush(heap, (nv + h_scale * _octile(v, goal), next(tie), v))
    return None, expansions


def plan_astar(fmap: CrowdFlowMap, start_cell: tuple[int, int], goal_cell: tuple[int, int],
               weights: CostWeights | None = None, social: bool = True, cost_cell: str = "target",
               blocked: np.ndarray | None = None, speed_scaled: bool = False) -> GridPath | None:
    """Optimal 8-connected path; ``social=False`` gives the plain shortest-distance baseline.

    Returns None when the goal is unreachable.
    """
    weights = weights or CostWeights()
    start_cell, goal_cell = tuple(start_cell), tuple(goal_cell)
    if start_cell == goal_cell:
        raise ValueError("start and goal must differ")
    for c in (start_cell, goal_cell):
        if not fmap.in_bounds(*c):
            raise ValueError(f"cell {c} outside the map")
    edge = edge_table(cell_cost_table(fmap, weights, social, speed_scaled), cost_cell, blocked)
    h_scale = weights.eps_min if social else 1.0
    cells, expansions = astar_on_edges(edge, start_cell, goal_cell, h_scale)
    if cells is None:
        return None
    return _make_path(fmap, cells, edge, expansions)


class DStarLite:
    """Incremental backward search (D* Lite) on the 8-connected flow grid."""

    def __init__(self, fmap: CrowdFlowMap, start: tuple[int, int], goal: tuple[int, int],
                 weights: CostWeights | None = None, cost_cell: str = "target",
                 blocked: np.ndarray | None = None, speed_scaled: bool = False):
        self.fmap = fmap
        self.weights = weights or CostWeights()
        self.cost_cell = cost_cell
        self.speed_scaled = speed_scaled
        self.blocked = None if blocked is None else np.asarray(blocked, dtype=bool).copy()
        self.cell_costs = cell_cost_table(fmap, self.weights, True, speed_scaled)
        self.edge = edge_table(self.cell_costs, cost_cell, self.blocked)
        self._e = self.edge.tolist()
        self.w, self.h = fmap.width, fmap.height
        self.start = tuple(start)
        self.goal = tuple(goal)
        self.h_scale = self.weights.eps_min
        self.km = 0.0
        self.g: dict[tuple[int, int], float] = {}
        self.rhs: dict[tuple[int, int], float] = {self.goal: 0.0}
        self._open: dict[tuple[int, int], tuple[float, float]] = {}
        self._heap: list = []
        self.expansions = 0
        self._push(self.goal)
        self.compute_shortest_path()

    # helpers
    def _h(self, s: tuple[int, int]) -> float:
        return self.h_scale * _octile(self.start, s)

    def _key(self, s: tuple[int, int]) -> tuple[float, float]:
        m = min(self.g.get(s, math.inf), self.rhs.get(s, math.inf))
        return (m + self._h(s) + self.km, m)

    def _push(self, s: tuple[int, int]) -> None:
        k = self._key(s)
        self._open[s] = k
        heapq.heappush(self._heap, (k, s))

    def _top(self):
        while self._heap:
            k, s = self._heap[0]
            if self._open.get(s) == k:
                return k, s
            heapq.heappop(self._heap)
        return (math.inf, math.inf), None

    def _succ_cost(self, u: tuple[int, int]):
        eu = self._e[u[0]][u[1]]
        for m, (di, dj) in enumerate(MOVES):
            c = eu[m]
            if c != math.inf:
                yield (u[0] + di, u[1] + dj), c

    def _preds(self, s: tuple[int, int]):
        for di, dj in MOVES:
            u = (s[0] - di, s[1] - dj)
            if 0 <= u[0] < self.w and 0 <= u[1] < self.h:
                yield u

    def _update_vertex(self, u: tuple[int, int]) -> None:
        if u != self.goal:
            best = math.inf
            g = self.g
            for v, c in self._succ_cost(u):
                val = c + g.get(v, math.inf)
                if val < best:
                    best = val
            self.rhs[u] = best
        self._open.pop(u, None)
        if self.g.get(u, math.inf) != self.rhs.get(u, math.inf):
            self._push(u)

    def compute_shortest_path(self) -> int:
        count = 0
        while True:
            k_top, u = self._top()
            if u is None:
                break
            g_s = self.g.get(self.start, math.inf)
            rhs_s = self.rhs.get(self.start, math.inf)
            if not (k_top < self._key(self.start) or rhs_s != g_s):
                break
            heapq.heappop(self._heap)
            del self._open[u]
            k_new = self._key(u)
            if k_top < k_new:
                self._push(u)
                continue
            count += 1
            g_u = self.g.get(u, math.inf)
            rhs_u = self.rhs.get(u, math.inf)
            if g_u > rhs_u:
                self.g[u] = rhs_u
                for p in self._preds(u):
                    self._update_vertex(p)
            else:
                self.g[u] = math.inf
                self._update_vertex(u)
                for p in self._preds(u):
                    self._update_vertex(p)
        self.expansions = count
        return count

    def update_cells(self, changed_cells) -> None:
        """Recompute costs for cells whose flow components changed and repair affected vertices."""
        touched = set()
        for i, j in changed_cells:
            i, j = int(i), int(j)
            new = cell_cost_table(_CellView(self.fmap, i, j), self.weights, True, self.speed_scaled)[0, 0]
            self.cell_costs[i, j] = new
            if self.cost_cell == "target":
                for m, (di, dj) in enumerate(MOVES):
                    u = (i - di, j - dj)
                    if 0 <= u[0] < self.w and 0 <= u[1] < self.h:
                        c = math.inf if (self.blocked is not None and self.blocked[i, j]) else float(new[m])
                        self.edge[u[0], u[1], m] = c
                        self._e[u[0]][u[1]][m] = c
                        touched.add(u)
            else:
                for m, (di, dj) in enumerate(MOVES):
                    v = (i + di, j + dj)
                    if 0 <= v[0] < self.w and 0 <= v[1] < self.h:
                        blocked = self.blocked is not None and self.blocked[v]
                        c = math.inf if blocked else float(new[m])
                        self.edge[i, j, m] = c
                        self._e[i][j][m] = c
                touched.add((i, j))
        for u in sorted(touched):
            self._update_vertex(u)

    def replan(self, changed_cells=(), new_start: tuple[int, int] | None = None) -> GridPath | None:
        if new_start is not None and tuple(new_start) != self.start:
            new_start = tuple(new_start)
            self.km += self.h_scale * _octile(self.start, new_start)
            self.start = new_start
        if changed_cells:
            self.update_cells(changed_cells)
        self.compute_shortest_path()
        return self.path()

    def path(self) -> GridPath | None:
        if self.g.get(self.start, math.inf) == math.inf:
            return None
        cells = [self.start]
        s = self.start
        limit = self.w * self.h
        while s != self.goal:
            best, nxt = math.inf, None
            for v, c in self._succ_cost(s):
                val = c + self.g.get(v, math.inf)
                if val < best:
                    best, nxt = val, v
            if nxt is None or len(cells) > limit:
                return None
            cells.append(nxt)
            s = nxt
        return _make_path(self.fmap, cells, self.edge, self.expansions)


class _CellView:
    """One-cell slice of a flow map, enough for cell_cost_table."""

    def __init__(self, fmap: CrowdFlowMap, i: int, j: int):
        self.width = self.height = 1
        self.bin_mask = fmap.bin_mask[i:i + 1, j:j + 1]
        self.cells = [[fmap.cells[i][j]]]

    def nonempty_cells(self):
        return [(0, 0)] if self.cells[0][0].components else []


def plan_dstar(fmap: CrowdFlowMap, start_cell, goal_cell, weights: CostWeights | None = None,
               cost_cell: str = "target", blocked: np.ndarray | None = None) -> tuple[DStarLite, GridPath | None]:
    start_cell, goal_cell = tuple(start_cell), tuple(goal_cell)
    if start_cell == goal_cell:
        raise ValueError("start and goal must differ")
    for c in (start_cell, goal_cell):
        if not fmap.in_bounds(*c):
            raise ValueError(f"cell {c} outside the map")
    state = DStarLite(fmap, start_cell, goal_cell, weights, cost_cell, blocked)
    return state, state.path()


def replan(state: DStarLite, changed_cells, new_start) -> GridPath | None:
    return state.replan(changed_cells, new_start)


# -------------------------------------------------------------- following
def cells_cost(edge: np.ndarray, cells) -> float:
    """Cost of a cell sequence under an edge table (inf if any step is not a grid move)."""
    total = 0.0
    for a, b in zip(cells, cells[1:]):
        try:
            m = MOVES.index((b[0] - a[0], b[1] - a[1]))
        except ValueError:
            return math.inf
        total += float(edge[a[0], a[1], m])
    return total


def smooth_points(points: np.ndarray, half_window: int = 4, passes: int = 2) -> np.ndarray:
    """Centred moving average of path vertices with fixed endpoints.

    Removes the 45-degree staircase of 8-connected grid paths so the follower
    does not turn at every cell; the window shrinks near both ends.  Repeated
    passes give a smoother (triangular, then bell-shaped) kernel.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if n < 3 or half_window <= 0:
        return pts.copy()
    idx = np.arange(n)
    r = np.minimum(np.minimum(idx, n - 1 - idx), half_window)
    for _ in range(passes):
        csum = np.concatenate([np.zeros((1, 2)), np.cumsum(pts, axis=0)])
        pts = (csum[idx + r + 1] - csum[idx - r]) / (2 * r + 1)[:, None]
    return pts


def _lookahead_point(points: np.ndarray, pos: np.ndarray, lookahead: float) -> np.ndarray:
    """Point ``lookahead`` metres of arc past the projection of ``pos`` onto the polyline.

    Interpolating along the path (rather than jumping between grid vertices)
    keeps the commanded heading continuous on staircase paths.
    """
    if len(points) == 1:
        return points[0]
    a, b = points[:-1], points[1:]
    seg = b - a
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(seg_len > 0, np.einsum("ij,ij->i", pos - a, seg) / seg_len ** 2, 0.0)
    u = np.clip(u, 0.0, 1.0)
    proj = a + u[:, None] * seg
    k = int(np.argmin(np.hypot(proj[:, 0] - pos[0], proj[:, 1] - pos[1])))
    remaining = lookahead - (1.0 - u[k]) * seg_len[k]
    if remaining <= 0:
        return a[k] + (u[k] + lookahead / seg_len[k]) * seg[k]
    for m in range(k + 1, len(seg)):
        if remaining <= seg_len[m]:
            return a[m] + (remaining / seg_len[m]) * seg[m]
        remaining -= seg_len[m]
    return points[-1]


def follow(path, pose, pedestrians=None, obstacles=None, config: PlannerConfig | None = None,
           pedestrian_clearance: float = 0.45, obstacle_clearance: float = 0.2, outline=None,
           state: AvoidState | None = None) -> np.ndarray:
    """Velocity command (world frame of ``pose``) tracking ``path`` with a cone-based avoider.

    ``pedestrians`` and ``obstacles`` are hazard points in the same frame as
    ``pose``; obstacle points are nearest surface points.  ``outline`` holds
    optional scan samples of nearby obstacle outlines, used to pick the shorter
    way around an obstacle when the robot is pinned against it.  ``state``, when
    given, commits the robot to one circulation sense while it follows an
    obstacle boundary, so it cannot turn back at convex corners.  The last path
    point is the goal.
    """
    cfg = config or PlannerConfig()
    points = path.world_points if isinstance(path, GridPath) else np.asarray(path, dtype=float).reshape(-1, 2)
    if len(points) == 0:
        raise ValueError("empty path")
    pos = np.asarray(pose, dtype=float)[:2]
    goal = points[-1]
    to_goal = math.hypot(goal[0] - pos[0], goal[1] - pos[1])
    if to_goal < cfg.goal_tolerance:
        return np.zeros(2)
    target = _lookahead_point(points, pos, cfg.lookahead)
    heading = target - pos
    dist = math.hypot(heading[0], heading[1])
    if dist < 1e-9:
        heading = goal - pos
        dist = to_goal
    dhat = heading / dist
    speed = min(cfg.v_max, to_goal)

    has_outline = outline is not None and len(outline) > 0
    sense = state.sense if state is not None else 0
    engaged = False
    hazards = []
    for pts, clearance, solid in ((pedestrians, pedestrian_clearance, False), (obstacles, obstacle_clearance, True)):
        if pts is None or len(pts) == 0:
            continue
        rel = np.asarray(pts, dtype=float).reshape(-1, 2) - pos
        d = np.hypot(rel[:, 0], rel[:, 1])
        cosang = (rel @ dhat) / np.maximum(d, 1e-12)
        inside = (d <= cfg.avoid_range) & (cosang >= math.cos(cfg.avoid_half_angle))
        for k in np.nonzero(inside)[0]:
            hazards.append((float(d[k]), rel[k], clearance, solid))
    if not hazards:
        cmd = speed * dhat
    else:
        d, rel, clearance, solid = min(hazards, key=lambda x: x[0])
        span = max(cfg.avoid_range - clearance, 1e-9)
        scale = min(1.0, max(0.0, (d - clearance) / span))
        side = dhat[0] * rel[1] - dhat[1] * rel[0]  # > 0: hazard on the left
        perp = np.array([-dhat[1], dhat[0]])
        if solid and has_outline:
            # static obstacles are rounded at their nearer visible end
            away, sense = _edge_direction(rel[None, :], np.asarray(outline, dtype=float).reshape(-1, 2) - pos,
                                          dhat, sense)
            engaged = True
        else:
            away = -perp if side >= 0 else perp  # dead-ahead hazards are passed on the right
        cmd = scale * speed * dhat + (1.0 - scale) * cfg.tangential_gain * cfg.v_max * away
    if obstacles is not None and len(obstacles):
        rel = np.asarray(obstacles, dtype=float).reshape(-1, 2) - pos
        slid = _slide(cmd, rel, obstacle_clearance, cfg.wall_margin)
        want = math.hypot(cmd[0], cmd[1])
        if (has_outline and want > 1e-6
                and math.hypot(slid[0], slid[1]) < cfg.stall_ratio * want):
            edge, sense = _edge_direction(rel, np.asarray(outline, dtype=float).reshape(-1, 2) - pos, dhat, sense)
            slid = _slide(want * edge, rel, obstacle_clearance, cfg.wall_margin)
            engaged = True
        cmd = slid
    if state is not None:
        state.idle = 0 if engaged else state.idle + 1
        state.sense = 0 if state.idle >= cfg.release_steps else sense
    norm = math.hypot(cmd[0], cmd[1])
    if norm > cfg.v_max:
        cmd = cmd * (cfg.v_max / norm)
    return cmd


def _edge_direction(rel: np.ndarray, outline: np.ndarray, dhat: np.ndarray,
                    sense: int = 0) -> tuple[np.ndarray, int]:
    """Unit tangent of the nearest obstacle surface to travel along, and its circulation sense.

    A committed ``sense`` (+1: obstacle on the right, -1: on the left) is kept.
    Otherwise the robot heads for the nearer visible end of the outline; when
    both ends look alike (long walls, convex corners) a tangent clearly aligned
    with the travel direction ``dhat`` wins, else the obstacle is kept on the right.
    """
    k = int(np.argmin(np.hypot(rel[:, 0], rel[:, 1])))
    d = max(math.hypot(rel[k, 0], rel[k, 1]), 1e-12)
    n = rel[k] / d
    t = np.array([-n[1], n[0]])  # obstacle on the right
    if sense:
        return sense * t, sense
    beyond = outline[outline @ n >= d - 0.05]  # samples at or behind the blocking surface
    if len(beyond):
        ahead, back = float(np.max(beyond @ t)), float(np.max(-(beyond @ t)))
        if abs(ahead - back) > 0.2:
            return (t, 1) if ahead < back else (-t, -1)
    along = float(dhat @ t)
    if abs(along) > 0.5:
        return (t, 1) if along > 0 else (-t, -1)
    return t, 1


def _slide(cmd: np.ndarray, rel: np.ndarray, clearance: float, margin: float) -> np.ndarray:
    """Remove the part of ``cmd`` heading into nearby obstacle surfaces.

    The normal component is faded out linearly from ``clearance + margin`` down
    to ``clearance``, so the robot slides along walls instead of pushing into them.
    """
    cmd = cmd.copy()
    d = np.hypot(rel[:, 0], rel[:, 1])
    for k in np.argsort(d):
        if d[k] >= clearance + margin or d[k] < 1e-12:
            continue
        n = rel[k] / d[k]
        into = float(cmd @ n)
        if into > 0:
            cmd -= min(1.0, (clearance + margin - d[k]) / margin) * into * n
    return cmd
