"""``crowdnav`` command line: map, localize, plan, navigate, replay, report.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import eval as ev
from .flow_map import CrowdFlowMap, MapFormatError, MapperConfig, heatmap_pgm, load_map, save_map
from .localizer import LocalizerConfig, MatchParams, MotionNoise
from .planner import CostWeights, PlannerConfig, plan_astar, plan_dstar
from .render import LogFormatError, read_trajectory_log, write_frames
from .scenario import SHIPPED, Scenario, ScenarioError, load_scenario_file, shipped_scenario_path

log = logging.getLogger("crowdnav")

STAGES = ("map", "localize", "plan", "navigate", "full")
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ config
@dataclass
class ExperimentConfig:
    scenario_path: str | None = None
    seeds: list[int] = field(default_factory=lambda: [1])
    stage: str | None = None
    mapper: dict = field(default_factory=dict)
    localizer: dict = field(default_factory=dict)
    planner: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    output_dir: str | None = None

    def __post_init__(self):
        if not self.seeds:
            raise UsageError("config: seeds must be non-empty")
        if any((not isinstance(s, int)) or isinstance(s, bool) or s < 0 for s in self.seeds):
            raise UsageError("config: seeds must be non-negative integers")
        if self.stage is not None and self.stage not in STAGES:
            raise UsageError(f"config: stage must be one of {', '.join(STAGES)}")
        for name in ("mapper", "localizer", "planner", "eval"):
            if not isinstance(getattr(self, name), dict):
                raise UsageError(f"config: {name} must be an object")

    @classmethod
    def from_json(cls, text: str, source: str = "<config>") -> ExperimentConfig:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{source}: line {exc.lineno}: {exc.msg}") from None
        if not isinstance(doc, dict):
            raise UsageError(f"{source}: expected a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise UsageError(f"{source}: unknown keys {unknown}")
        if "seeds" in doc and isinstance(doc["seeds"], str):
            doc["seeds"] = parse_seeds(doc["seeds"])
        return cls(**doc)


def _build(kind, block: dict, what: str):
    try:
        return kind(**block)
    except TypeError as exc:
        raise UsageError(f"config: bad {what} block: {exc}") from None
    except ValueError as exc:
        raise UsageError(f"config: bad {what} block: {exc}") from None


def mapper_config(cfg: ExperimentConfig) -> MapperConfig:
    return _build(MapperConfig, cfg.mapper, "mapper")


def localizer_config(cfg: ExperimentConfig) -> LocalizerConfig:
    block = dict(cfg.localizer)
    match = _build(MatchParams, {k: block.pop(k) for k in ("gamma", "weight_floor") if k in block}, "localizer")
    noise_keys = ("trans_coef", "rot_coef", "rot_trans_coef", "inflation")
    noise = _build(MotionNoise, {k: block.pop(k) for k in noise_keys if k in block}, "localizer")
    return _build(LocalizerConfig, {**block, "match": match, "noise": noise}, "localizer")


def planner_config(cfg: ExperimentConfig) -> PlannerConfig:
    block = dict(cfg.planner)
    weights = _build(CostWeights, {k: block.pop(k) for k in ("w_rc", "w_lc", "eps_min") if k in block}, "planner")
    out = _build(PlannerConfig, {**block, "weights": weights}, "planner")
    if out.cost_cell not in ("target", "source"):
        raise UsageError("config: planner cost_cell must be 'target' or 'source'")
    return out


_EVAL_SESSION_KEYS = ("map_seed", "map_duration", "fuse_period", "localize_duration")


def episode_config(cfg: ExperimentConfig) -> ev.EpisodeConfig:
    block = {k: v for k, v in cfg.eval.items() if k not in _EVAL_SESSION_KEYS}
    return _build(ev.EpisodeConfig, {**block, "planner": planner_config(cfg), "localizer": localizer_config(cfg)},
                  "eval")


# ---------------------------------------------------------------- helpers
def parse_seeds(text: str) -> list[int]:
    """'7', '1..50' (inclusive) or comma lists of either."""
    out: list[int] = []
    try:
        for part in str(text).split(","):
            part = part.strip()
            if not part:
                continue
            if ".." in part:
                a, b = (int(x) for x in part.split("..", 1))
                if b < a:
                    raise UsageError(f"empty seed range {part!r}")
                out.extend(range(a, b + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise UsageError(f"bad seed list {text!r}") from None
    if not out or min(out) < 0:
        raise UsageError(f"bad seed list {text!r}")
    return sorted(dict.fromkeys(out))


def resolve_scenario(arg: str | None) -> Scenario:
    if not arg:
        raise UsageError("a scenario is required (--scenario PATH or one of " + ", ".join(SHIPPED) + ")")
    path = Path(arg)
    if not path.exists():
        stem = path.stem if path.suffix == ".json" else path.name
        if path.parent == Path(".") and stem in SHIPPED:
            path = shipped_scenario_path(stem)
        else:
            raise UsageError(f"scenario file not found: {arg}")
    return load_scenario_file(path)


def read_map(path: str) -> CrowdFlowMap:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"map file not found: {path}")
    return load_map(p.read_bytes())


def out_dir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out or cfg.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_text(path: Path, text: str) -> None:
    path.write_bytes(text.encode("utf-8"))


def load_config(args) -> ExperimentConfig:
    if args.config:
        p = Path(args.config)
        if not p.exists():
            raise UsageError(f"config file not found: {args.config}")
        cfg = ExperimentConfig.from_json(p.read_text(), str(p))
    else:
        cfg = ExperimentConfig()
    if cfg.stage not in (None, "full", args.command):
        raise UsageError(f"config stage {cfg.stage!r} does not match command {args.command!r}")
    return cfg


def seeds_from(args, cfg: ExperimentConfig) -> list[int]:
    if getattr(args, "seeds", None):
        return parse_seeds(args.seeds)
    if getattr(args, "seed", None) is not None:
        return [args.seed]
    return list(cfg.seeds)


def quality_csv(series) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "quality"])
    for t, q in series:
        w.writerow([f"{t:.1f}", f"{q:.6f}"])
    return buf.getvalue()


def build_map(scenario: Scenario, cfg: ExperimentConfig, seed: int, duration: float, out: Path):
    fuse_period = float(cfg.eval.get("fuse_period", 1.0))
    res = ev.mapping_session(scenario, seed, "lawnmower", duration, mapper_config(cfg), fuse_period=fuse_period)
    write_text(out / "quality.csv", quality_csv(res.quality_series))
    (out / "map.json").write_bytes(save_map(res.map))
    ref = res.final_reference if res.final_reference is not None else []
    (out / "heatmap.pgm").write_bytes(heatmap_pgm(res.map, ref))
    return res


def map_for(args, scenario, cfg, out: Path, required: bool) -> CrowdFlowMap | None:
    if args.map:
        return read_map(args.map)
    if required and cfg.stage == "full":
        seed = int(cfg.eval.get("map_seed", 1000))
        duration = float(cfg.eval.get("map_duration", 600.0))
        log.info("building map (seed %d, %.0f s)", seed, duration)
        return build_map(scenario, cfg, seed, duration, out).map
    return None


# --------------------------------------------------------------- commands
def cmd_map(args) -> int:
    cfg = load_config(args)
    scenario = resolve_scenario(args.scenario or cfg.scenario_path)
    seed = seeds_from(args, cfg)[0]
    duration = args.duration if args.duration is not None else float(cfg.eval.get("map_duration", 600.0))
    if duration < 0:
        raise UsageError("--duration must be non-negative")
    out = out_dir(args, cfg)
    res = build_map(scenario, cfg, seed, duration, out)
    final = res.quality_series[-1][1] if res.quality_series else 0.0
    print(f"map: {len(res.map.nonempty_cells())} cells, final quality {final:.3f} -> {out}")
    return EXIT_OK


def cmd_localize(args) -> int:
    cfg = load_config(args)
    scenario = resolve_scenario(args.scenario or cfg.scenario_path)
    out = out_dir(args, cfg)
    fmap = map_for(args, scenario, cfg, out, required=True)
    if fmap is None or fmap.is_empty():
        raise UsageError("localize needs a non-empty crowd-flow map (--map FILE)")
    duration = args.duration if args.duration is not None else float(cfg.eval.get("localize_duration", 300.0))
    lcfg = localizer_config(cfg)
    rows = []
    for seed in seeds_from(args, cfg):
        res = ev.localization_run(scenario, seed, fmap, duration, lcfg)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "est_x", "est_y", "est_th", "ess", "n_obs"])
        for r in res.filter_log:
            w.writerow([f"{r[0]:.1f}", f"{r[1]:.6f}", f"{r[2]:.6f}", f"{r[3]:.6f}", f"{r[4]:.3f}", int(r[5])])
        write_text(out / f"localization_seed{seed}.csv", buf.getvalue())
        write_text(out / f"trajectory_seed{seed}.csv", ev.trajectory_csv(res.trajectory))
        rows.append({"seed": seed, "mse_crowd": res.mse_crowd, "mse_odometry": res.mse_odometry})
        print(f"seed {seed}: crowd MSE {res.mse_crowd:.3f}  odometry MSE {res.mse_odometry:.3f}")
    summary = {
        "scenario": scenario.name, "runs": rows,
        "mse_crowd_mean": float(np.mean([r["mse_crowd"] for r in rows])),
        "mse_odometry_mean": float(np.mean([r["mse_odometry"] for r in rows])),
    }
    write_text(out / "localization_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _cell_arg(text: str | None, fmap: CrowdFlowMap, default) -> tuple[int, int]:
    if text is None:
        xy = default
    else:
        try:
            xy = tuple(float(v) for v in text.split(","))
        except ValueError:
            raise UsageError(f"bad point {text!r}; expected X,Y") from None
        if len(xy) != 2:
            raise UsageError(f"bad point {text!r}; expected X,Y")
    c = fmap.cell_index(xy[0], xy[1])
    if c is None:
        raise UsageError(f"point {xy} lies outside the map")
    return c


def cmd_plan(args) -> int:
    cfg = load_config(args)
    scenario = resolve_scenario(args.scenario or cfg.scenario_path)
    out = out_dir(args, cfg)
    planner = ev.normalize_planner(args.planner)
    fmap = map_for(args, scenario, cfg, out, required=planner != "astar_shortest")
    if fmap is None:
        if planner != "astar_shortest":
            raise UsageError(f"planner {args.planner!r} needs a crowd-flow map (--map FILE)")
        fmap = CrowdFlowMap.for_extent(scenario.width, scenario.height)
    pcfg = planner_config(cfg)
    start = _cell_arg(args.start, fmap, scenario.robot_start[:2])
    goal = _cell_arg(args.goal, fmap, scenario.robot_goal)
    if start == goal:
        raise UsageError("start and goal fall into the same cell")
    if planner == "dstar_crowd":
        _, path = plan_dstar(fmap, start, goal, pcfg.weights, pcfg.cost_cell)
    else:
        path = plan_astar(fmap, start, goal, pcfg.weights, planner == "astar_social", pcfg.cost_cell)
    if path is None:
        print("no path", file=sys.stderr)
        return EXIT_RUNTIME
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["idx", "cell_i", "cell_j", "x", "y", "edge_cost"])
    costs = [0.0] + list(path.edge_costs)
    for k, ((i, j), (x, y)) in enumerate(zip(path.cells, path.world_points)):
        w.writerow([k, i, j, f"{x:.3f}", f"{y:.3f}", f"{costs[k]:.6f}"])
    write_text(out / "path.csv", buf.getvalue())
    print(f"path: {len(path.cells)} cells, cost {path.total_cost:.4f}")
    return EXIT_OK


def cmd_navigate(args) -> int:
    cfg = load_config(args)
    scenario = resolve_scenario(args.scenario or cfg.scenario_path)
    out = out_dir(args, cfg)
    planner = ev.normalize_planner(args.planner)
    localizer = args.localizer
    needs_map = localizer == "crowd" or planner != "astar_shortest"
    fmap = map_for(args, scenario, cfg, out, required=needs_map)
    if needs_map and fmap is None:
        raise UsageError(f"localizer {localizer!r} with planner {args.planner!r} needs a crowd-flow map (--map FILE)")
    ecfg = episode_config(cfg)
    seeds = seeds_from(args, cfg)
    if args.trajectories:
        reports = []
        for seed in seeds:
            rep, traj = ev.run_episode(scenario, seed, localizer, planner, fmap, args.budget, ecfg, record=True)
            write_text(out / f"trajectory_seed{seed}.csv", ev.trajectory_csv(traj))
            reports.append(rep)
    else:
        reports = ev.run_batch(scenario, seeds, localizer, planner, fmap, args.budget, ecfg)
    write_text(out / "runs.csv", ev.reports_csv(reports))
    summary = ev.summarize(reports)
    write_text(out / "summary.json", ev.summary_json(summary))
    print(f"{scenario.name} {localizer}+{planner}: success {summary['success_rate']:.2%}, "
          f"#CA {summary['ca_mean']:.2f} ({summary['ca_std']:.2f}), MSE {summary['mse_mean']:.3f}")
    return EXIT_OK


def cmd_replay(args) -> int:
    cfg = load_config(args)
    p = Path(args.log)
    if not p.exists():
        raise UsageError(f"log file not found: {args.log}")
    traj = read_trajectory_log(p.read_text())
    scen_arg = args.scenario or cfg.scenario_path
    scenario = resolve_scenario(scen_arg) if scen_arg else None
    out = out_dir(args, cfg)
    n = write_frames(traj, out, scenario, args.scale)
    print(f"{n} frames -> {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = load_config(args)
    reports = []
    for name in args.runs:
        p = Path(name)
        if not p.exists():
            raise UsageError(f"runs file not found: {name}")
        try:
            reports.extend(ev.read_reports_csv(p.read_text()))
        except (KeyError, ValueError) as exc:
            raise UsageError(f"{name}: malformed runs file ({exc})") from None
    if not reports:
        raise UsageError("no runs to report")
    groups: dict[tuple, list] = {}
    for r in reports:
        groups.setdefault((r.scenario, r.localizer, r.planner), []).append(r)
    summaries = [ev.summarize(sorted(g, key=lambda r: r.seed)) for _, g in sorted(groups.items())]
    out = out_dir(args, cfg)
    table = ev.table2(summaries)
    write_text(out / "table2.md", table)
    write_text(out / "summaries.json", json.dumps(summaries, indent=2, sort_keys=True) + "\n")
    print(table, end="")
    return EXIT_OK


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="single seed")
    common.add_argument("--seeds", help="seed list, e.g. 1..50 or 1,2,7")
    common.add_argument("--out", "-o", help="output directory")
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--verbose", "-v", action="store_true")

    parser = argparse.ArgumentParser(prog="crowdnav", description="Crowd-flow mapping, localization and navigation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("map", parents=[common], help="build a crowd-flow map on a touring robot")
    p.add_argument("--scenario")
    p.add_argument("--duration", type=float, help="session length in seconds (default 600)")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("localize", parents=[common], help="tele-operated localization runs")
    p.add_argument("--scenario")
    p.add_argument("--map")
    p.add_argument("--duration", type=float, help="run length in seconds (default 300)")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("plan", parents=[common], help="single grid plan on a flow map")
    p.add_argument("--scenario")
    p.add_argument("--map")
    p.add_argument("--planner", default="dstar", choices=["astar-shortest", "astar-social", "dstar"])
    p.add_argument("--start", help="X,Y (default: scenario robot start)")
    p.add_argument("--goal", help="X,Y (default: scenario robot goal)")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("navigate", parents=[common], help="closed-loop navigation episodes")
    p.add_argument("--scenario")
    p.add_argument("--map")
    p.add_argument("--localizer", default="odometry", choices=list(ev.LOCALIZERS))
    p.add_argument("--planner", default="astar-shortest", choices=["astar-shortest", "astar-social", "dstar"])
    p.add_argument("--budget", type=float, help="episode budget in seconds (default 2x shortest-path time)")
    p.add_argument("--trajectories", action="store_true", help="also write one trajectory log per seed")
    p.set_defaults(func=cmd_navigate)

    p = sub.add_parser("replay", parents=[common], help="render PPM frames from a trajectory log")
    p.add_argument("--log", required=True)
    p.add_argument("--scenario")
    p.add_argument("--scale", type=float, default=4.0, help="pixels per meter")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("report", parents=[common], help="aggregate runs.csv files into a Table-2 style report")
    p.add_argument("runs", nargs="+")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ScenarioError, MapFormatError, LogFormatError, ev.ConfigError) as exc:
        print(f"crowdnav: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 1
        log.debug("runtime failure", exc_info=True)
        print(f"crowdnav: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
