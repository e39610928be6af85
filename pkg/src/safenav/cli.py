"""Command-line entry points: missions, benchmarks, artifact export.

Exit codes: 0 the command ran (mission failure is data, not a crash),
2 configuration error, 3 internal invariant violation.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import bench as bench_mod
from .config import load_mission_config
from .exports import (
    events_to_ndjson,
    execution_log_to_csv,
    map_to_csv,
    map_to_pgm,
    submap_to_csv,
    trajectory_to_csv,
)


@click.group()
def main():
    """Uncertainty-aware online mapping, planning, and benchmarking."""


def _fail_config(msg: str):
    click.echo(f"configuration error: {msg}", err=True)
    sys.exit(2)


@main.command("run-mission")
@click.argument("config_path", required=False, type=click.Path(exists=True, dir_okay=False))
@click.option("--set", "overrides", multiple=True, help="Override section.key=value.")
@click.option("--seed", type=int, default=None, help="Override the mission seed.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="mission_out")
def run_mission_cmd(config_path, overrides, seed, out_dir):
    """Run one mission and write its report and artifacts."""
    try:
        overrides = list(overrides)
        if seed is not None:
            overrides.append(f"mission.seed={seed}")
        cfg = load_mission_config(config_path, overrides)
    except (ValueError, KeyError, OSError) as e:
        _fail_config(str(e))

    from .fusion import build_cumulative
    from .manager import run_mission

    try:
        result = run_mission(cfg)
    except Exception as e:  # invariant violation inside the pipeline
        click.echo(f"internal error: {e}", err=True)
        sys.exit(3)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    events_path = events_to_ndjson(result.events, out / "events.ndjson")
    exec_path = execution_log_to_csv(result.executor_log, out / "execution.csv")

    report = {
        "mission": cfg.world,
        "seed": cfg.seed,
        "success": bool(result.success),
        "aborted": bool(result.aborted),
        "goal_time_s": result.goal_time,
        "sim_time_s": result.sim_time,
        "path_length_m": round(result.path_length, 6),
        "collision_count": result.collisions,
        "iterations": len(result.iterations),
        "planning_budget_s": cfg.delta_t_mp,
        "event_log": Path(events_path).name,
        "execution_log": Path(exec_path).name,
    }
    profile = [
        {
            "iteration": r.index,
            "solve_wall_s": round(r.solve_wall_time, 4),
            "other_wall_s": round(r.other_phases_wall_time, 4),
        }
        for r in result.iterations
    ]
    with open(out / "profile.json", "w") as f:
        json.dump(profile, f, indent=1)
    with open(out / "report.json", "w") as f:
        json.dump(report, f, indent=1, sort_keys=True)
    click.echo(json.dumps(report, indent=1, sort_keys=True))
    sys.exit(0)


@main.command("bench-collision")
@click.option("--grid", type=click.Choice(["desk", "paper"]), default="desk",
              help="desk: the reduced sweep; paper: the full published ranges.")
@click.option("--beliefs", type=int, default=1000)
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default="collision_bench.csv")
def bench_collision_cmd(grid, beliefs, seed, out_path):
    """Accuracy/timing sweep of the collision checkers."""
    if grid == "desk":
        spec = bench_mod.CollisionBenchSpec(beliefs_per_cell=beliefs, seed=seed)
    else:
        spec = bench_mod.CollisionBenchSpec(
            n_obstacles=tuple(range(0, 601, 100)),
            sigmas=tuple(np.arange(0.0, 5.01, 0.5)),
            p_safes=tuple(np.arange(0.5, 1.0, 0.05)),
            alphas=(0.9, 0.95, 0.99, 0.999),
            beliefs_per_cell=beliefs,
            seed=seed,
        )
    rows = bench_mod.run_collision_benchmark(
        spec, progress=lambda r: click.echo(
            f"n_o={r['n_o']} sigma={r['sigma']} p_safe={r['p_safe']} "
            f"{r['method']}: acc={r['accuracy']:.3f}", err=True)
    )
    with open(out_path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)
    click.echo(out_path)


@main.command("bench-planner")
@click.option("--scenario", default="corridor3d")
@click.option("--seeds", type=int, default=200)
@click.option("--strategies", default="slp,rigid:0,rigid:4,rigid:25,adaptive",
              help="Comma list of slp | rigid:D | biased:P | adaptive.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default="planner_bench.csv")
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False), default=None,
              help="Also write one solve's tree trace (nodes, edges, incumbents) as CSV.")
def bench_planner_cmd(scenario, seeds, strategies, out_path, trace_path):
    """Seeded lift-strategy comparison on a known world."""
    parsed = []
    try:
        for item in strategies.split(","):
            item = item.strip()
            if ":" in item:
                kind, val = item.split(":", 1)
                parsed.append((kind, float(val)))
            else:
                parsed.append((item, None))
        spec = bench_mod.PlannerBenchSpec(scenario=scenario, seeds=seeds, strategies=tuple(parsed))
    except ValueError as e:
        _fail_config(str(e))
    rows = bench_mod.run_planner_benchmark(
        spec, progress=lambda r: None
    )
    if trace_path:
        import numpy as _np

        from .bench import _bench_problem
        from .collision import SafetyConfig as _SC
        from .exports import tree_trace_to_csv
        from .models import make_model as _mm
        from .planner import LiftStrategy as _LS
        from .planner import MultiLayerPlanner as _MLP
        from .simworld import builtin_world as _bw
        from .simworld import map_from_world as _mfw

        world = _bw(spec.scenario)
        model = _mm("fixed_wing" if world.dimension == 3 else "unicycle")
        cfg = _SC(p_safe=spec.p_safe, alpha=spec.alpha, r_body=0.2, f_unknown=0.0)
        cmap = _mfw(world, 0.2 if world.dimension == 3 else 0.25)
        planner = _MLP(budget_mode="iterations", collect_trace=True)
        problem = _bench_problem(world, cmap, cfg, model, _LS(kind="adaptive"), spec)
        result = planner.solve(problem, _np.random.default_rng(0))
        tree_trace_to_csv(result.stats.nodes_csv, trace_path)
        n_nodes = sum(1 for r in result.stats.nodes_csv if r[0] == "node")
        click.echo(f"trace: {trace_path} nodes={n_nodes} (report n_nodes={result.stats.n_nodes})", err=True)
    with open(out_path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)
    solved = {}
    for r in rows:
        solved.setdefault(r["strategy"], []).append(r["solved"])
    for k, v in sorted(solved.items()):
        click.echo(f"{k}: {sum(v)}/{len(v)} solved", err=True)
    click.echo(out_path)


@main.command("export")
@click.argument("artifact", type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["pgm", "csv"]), required=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--world", default=None, help="Rebuild a ground-truth map of a named world.")
def export_cmd(artifact, fmt, out_path, world):
    """Re-export a stored artifact (CSV map dumps to PGM, logs to CSV)."""
    path = Path(artifact)
    if path.suffix == ".csv" and fmt == "pgm":
        rows = list(csv.DictReader(open(path)))
        if not rows or "i0" not in rows[0]:
            _fail_config(f"{artifact} is not a map dump")
        i0 = np.array([int(r["i0"]) for r in rows])
        i1 = np.array([int(r["i1"]) for r in rows])
        p = np.array([float(r["probability"]) for r in rows])
        img = np.full((i0.max() - i0.min() + 1, i1.max() - i1.min() + 1), 127.0)
        img[i0 - i0.min(), i1 - i1.min()] = p * 255.0
        from .exports import write_pgm

        write_pgm(out_path, img.T[::-1])
        click.echo(out_path)
        return
    _fail_config(f"unsupported export {path.suffix} -> {fmt}")


if __name__ == "__main__":
    main()
