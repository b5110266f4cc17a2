"""Command-line driver: terrain generation, single runs, batches and reports.

Exit codes: 0 success, 1 episode failure, 2 configuration error,
3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import glob
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import config as cfgmod
from . import io, nav, plotting, scenario as scmod
from .planner import InvariantError
from .world import Pose

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2, 3
SUMMARY_METRICS = ("v_avg", "path_length", "max_roll", "max_pitch")
TRIAL_COLUMNS = ("trial", "seed", "success", "failure", *SUMMARY_METRICS, "replan_count", "cycles", "duration")


# -- helpers --------------------------------------------------------------------


def resolve(args) -> tuple[nav.NavConfig, cfgmod.RunSettings, scmod.Scenario]:
    """Config file plus command-line overrides plus the scenario to drive."""
    if getattr(args, "config", None):
        cfg, run = cfgmod.load(args.config)
    else:
        cfg, run = nav.NavConfig(), cfgmod.RunSettings()
    if getattr(args, "seed", None) is not None:
        run = replace(run, seed=args.seed)
    if getattr(args, "trials", None) is not None:
        if args.trials < 1:
            raise cfgmod.ConfigError("--trials must be >= 1")
        run = replace(run, trials=args.trials)
    if getattr(args, "scenario", None):
        run = replace(run, scenario=args.scenario)
    if getattr(args, "preset", None):
        sc = scmod.generate(args.preset, args.terrain_seed)
    elif run.scenario:
        if not os.path.isfile(run.scenario):
            raise cfgmod.ConfigError(f"scenario file not found: {run.scenario}")
        sc = scmod.load(run.scenario)
    else:
        raise cfgmod.ConfigError("no scenario: pass --scenario, --preset or set [run] scenario")
    return cfg, run, sc


def start_pose(sc: scmod.Scenario) -> Pose:
    return Pose(sc.start[0], sc.start[1], 0.0, 0.0, 0.0, sc.start[2])


def cycle_dir(out: str, index: int) -> str:
    return os.path.join(out, "cycles", f"c{index:03d}")


def export_layers(maps, directory: str, tree=None, waypoints=None, plots: bool = True) -> None:
    os.makedirs(directory, exist_ok=True)
    for name, grid in maps.layers().items():
        io.write_pgm(os.path.join(directory, f"{name}.pgm"), grid)
        io.write_grid_csv(os.path.join(directory, f"{name}.csv"), grid)
    if plots:
        plotting.layers(maps, os.path.join(directory, "maps.png"), tree, waypoints)


def metrics_record(m: nav.EpisodeMetrics, sc: scmod.Scenario, cfg, run, seed: int) -> dict:
    timing = []
    for t in m.timing:
        t = dict(t)
        t["total"] = sum(t.values())
        timing.append(t)
    return {
        "success": m.success,
        "failure": m.failure,
        "v_avg": m.v_avg,
        "path_length": m.path_length,
        "max_roll": m.max_roll,
        "max_pitch": m.max_pitch,
        "replan_count": m.replan_count,
        "cycles": m.cycles,
        "duration": m.duration,
        "steps": max(len(m.trace) - 1, 0),
        "seed": seed,
        "goal": list(sc.goal),
        "scenario": {"name": sc.name, "text": scmod.dumps(sc)},
        "config": cfgmod.to_json_dict(cfg, run),
        "wall_time": m.wall_time,
        "timing": {
            "cycles": timing,
            "max_cycle_total": max((t["total"] for t in timing), default=0.0),
        },
    }


def run_one(sc, cfg, run, seed: int, out: str, export_maps: bool = False, plots: bool = True) -> dict:
    """One episode with all artifacts written under ``out``."""
    os.makedirs(out, exist_ok=True)
    scmod.save(sc, os.path.join(out, "scenario.scn"))
    with open(os.path.join(out, "config.ini"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(cfgmod.dumps(cfg, run))
    starts = []

    def on_cycle(c: nav.Cycle):
        starts.append((c.pose.x, c.pose.y))
        d = cycle_dir(out, c.index)
        os.makedirs(d, exist_ok=True)
        io.write_tree_csv(os.path.join(d, "tree.csv"), c.plan.tree)
        io.write_path_csv(os.path.join(d, "path.csv"), c.waypoints_world)
        if export_maps:
            io.write_cloud_csv(os.path.join(d, "cloud.csv"), c.cloud)
            wp_robot = nav.world_to_robot(c.estimate, c.waypoints_world)
            export_layers(c.maps, d, c.plan.tree, wp_robot, plots)

    m = nav.run_episode(sc.field, start_pose(sc), sc.goal, cfg, seed=seed, on_cycle=on_cycle)
    rec = metrics_record(m, sc, cfg, run, seed)
    io.write_trace_csv(os.path.join(out, "trace.csv"), m.trace)
    io.write_json(os.path.join(out, "metrics.json"), rec)
    if plots:
        plotting.trajectory(sc, m.trace, os.path.join(out, "trajectory.png"), starts)
        plotting.attitude(m.trace, os.path.join(out, "attitude.png"), cfg.episode.max_roll, cfg.episode.max_pitch)
    return rec


def _trial_job(job):
    text, cfg_dict, seed, out, export_maps, plots = job
    sc = scmod.loads(text)
    cfg, run = cfgmod.from_json_dict(cfg_dict)
    rec = run_one(sc, cfg, run, seed, out, export_maps, plots)
    return io.without_clock(rec)


# -- aggregation ----------------------------------------------------------------


def aggregate(records: list[dict]) -> dict:
    """Mean and population std over all trials, success rate kept separately."""
    if not records:
        raise ValueError("no trial records to aggregate")
    out = {"trials": len(records), "success_rate": float(np.mean([bool(r["success"]) for r in records]))}
    for name in SUMMARY_METRICS:
        vals = np.array([float(r[name]) for r in records])
        out[name] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    return out


def format_report(agg: dict) -> str:
    lines = [f"trials: {agg['trials']}", f"success_rate: {agg['success_rate']:.4f}"]
    for name in SUMMARY_METRICS:
        lines.append(f"{name}: {agg[name]['mean']:.4f} ± {agg[name]['std']:.4f}")
    return "\n".join(lines) + "\n"


def trial_rows(records: list[dict]) -> list[dict]:
    rows = []
    for i, r in enumerate(records):
        row = {k: r.get(k, "") for k in TRIAL_COLUMNS if k != "trial"}
        row["trial"] = i
        rows.append(row)
    return rows


def write_report(out: str, records: list[dict]) -> dict:
    agg = aggregate(records)
    rows = trial_rows(records)
    with open(os.path.join(out, "trials.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_COLUMNS)
        for row in rows:
            w.writerow([repr(row[k]) if isinstance(row[k], float) else row[k] for k in TRIAL_COLUMNS])
    with open(os.path.join(out, "summary.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_report(agg))
    io.write_json(os.path.join(out, "summary.json"), agg)
    plotting.batch_summary(rows, os.path.join(out, "summary.png"))
    return agg


def load_trial_records(directory: str) -> list[dict]:
    paths = sorted(glob.glob(os.path.join(directory, "trial_*", "metrics.json")))
    return [io.read_json(p) for p in paths]


# -- verbs ----------------------------------------------------------------------


def cmd_gen_terrain(args) -> int:
    sc = scmod.generate(args.preset, args.seed or 0)
    text = scmod.dumps(sc)
    if args.out:
        scmod.save(sc, args.out)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg, run, sc = resolve(args)
    out = args.out or "run_out"
    rec = run_one(sc, cfg, run, run.seed, out, args.export_maps, not args.no_plots)
    status = "success" if rec["success"] else f"failure ({rec['failure']})"
    print(
        f"{status}: path_length={rec['path_length']:.3f} m v_avg={rec['v_avg']:.3f} m/s "
        f"max_roll={rec['max_roll']:.3f} max_pitch={rec['max_pitch']:.3f} cycles={rec['cycles']}"
    )
    return EXIT_OK if rec["success"] else EXIT_FAIL


def cmd_batch(args) -> int:
    cfg, run, sc = resolve(args)
    out = args.out or "batch_out"
    os.makedirs(out, exist_ok=True)
    text = scmod.dumps(sc)
    cfg_dict = cfgmod.to_json_dict(cfg, run)
    jobs = [
        (text, cfg_dict, run.seed + i, os.path.join(out, f"trial_{i:04d}"), args.export_maps, not args.no_plots)
        for i in range(run.trials)
    ]
    if args.jobs and args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            records = list(ex.map(_trial_job, jobs))
    else:
        records = [_trial_job(j) for j in jobs]
    for i, r in enumerate(records):
        print(f"trial {i} seed {r['seed']}: {'ok' if r['success'] else 'FAIL ' + r['failure']}")
    agg = write_report(out, records)
    sys.stdout.write(format_report(agg))
    return EXIT_OK


def cmd_export_maps(args) -> int:
    """Re-render every cycle's layers from a run directory's trace."""
    rd = args.run_dir
    try:
        rec = io.read_json(os.path.join(rd, "metrics.json"))
        trace = io.read_trace_csv(os.path.join(rd, "trace.csv"))
    except OSError as exc:
        raise cfgmod.ConfigError(f"{rd}: not a run directory ({exc.strerror})") from None
    sc = scmod.loads(rec["scenario"]["text"])
    cfg, _ = cfgmod.from_json_dict(rec["config"])
    seed = int(rec["seed"])
    out = args.out or rd
    seen = set()
    count = 0
    for row in trace:
        phase = row[-1]
        if not phase.startswith("c") or phase in seen:
            continue
        seen.add(phase)
        index = int(phase[1:].split("-", 1)[0])
        pose = Pose(*row[1:7])
        _, _, maps, _ = nav.perceive(sc.field, pose, cfg, seed, index)
        export_layers(maps, cycle_dir(out, index), plots=not args.no_plots)
        count += 1
    print(f"exported {count} cycle(s) to {os.path.join(out, 'cycles')}")
    return EXIT_OK


def cmd_report(args) -> int:
    records = load_trial_records(args.dir)
    if not records:
        raise cfgmod.ConfigError(f"{args.dir}: no trial_*/metrics.json files")
    agg = write_report(args.dir, records)
    sys.stdout.write(format_report(agg))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="terranav", description="Mapless uneven-terrain navigation simulator")
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen-terrain", help="write a preset scenario file")
    g.add_argument("--preset", required=True, choices=scmod.PRESETS)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="scenario file to write (default: stdout)")
    g.set_defaults(func=cmd_gen_terrain)

    def common(sp):
        sp.add_argument("--config", help="INI configuration file")
        sp.add_argument("--scenario", help="scenario file (overrides [run] scenario)")
        sp.add_argument("--preset", choices=scmod.PRESETS, help="generate the scenario from a preset instead")
        sp.add_argument("--terrain-seed", type=int, default=0, help="preset seed when --preset is used")
        sp.add_argument("--seed", type=int, help="episode seed (batch: first seed)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--export-maps", action="store_true", help="write per-cycle PGM/CSV layers")
        sp.add_argument("--no-plots", action="store_true", help="skip PNG figures")

    r = sub.add_parser("run", help="run one episode")
    common(r)
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("batch", help="run seeded trials and aggregate")
    common(b)
    b.add_argument("--trials", type=int, help="number of trials (overrides [run] trials)")
    b.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    b.set_defaults(func=cmd_batch)

    e = sub.add_parser("export-maps", help="re-render cycle layers from a saved run")
    e.add_argument("run_dir")
    e.add_argument("--out", help="output directory (default: the run directory)")
    e.add_argument("--no-plots", action="store_true")
    e.set_defaults(func=cmd_export_maps)

    rp = sub.add_parser("report", help="re-aggregate a batch directory")
    rp.add_argument("dir")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (cfgmod.ConfigError, scmod.ScenarioError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantError as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
