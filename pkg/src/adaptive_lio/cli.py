"""Command-line entry point: dataset generation, odometry runs, trajectory
evaluation, and the three-way ablation table.

Exit codes: 0 success, 2 usage error, 3 data error, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import dataset as ds
from . import evaluation, simulator
from .config import METHOD_PRESETS, EstimatorConfig, load_config_file, merge_overrides
from .degeneracy import TRACE_HEADER, trace_row
from .estimator import MapOutcome, run_sequence

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4


def _data_error(msg: str) -> int:
    print(json.dumps({"error": "data", "detail": msg}), file=sys.stderr)
    return EXIT_DATA


# -- simulate -------------------------------------------------------------------


def cmd_simulate(args) -> int:
    params = {}
    if args.size:
        try:
            params["size"] = [float(x) for x in args.size.split(",")]
        except ValueError:
            return _data_error(f"bad --size value {args.size!r}")
    for name in ("length", "width", "height", "radius", "facets"):
        value = getattr(args, name)
        if value is not None:
            params[name] = value
    try:
        simulator.generate_dataset(args.out, args.preset, params, seed=args.seed,
                                   duration=args.duration,
                                   scan_rate_hz=args.scan_rate,
                                   imu_rate_hz=args.imu_rate,
                                   n_rays=args.rays, sigma=args.sigma)
    except simulator.InvalidDimensions as exc:
        return _data_error(str(exc))
    digest = ds.dataset_digest(args.out)
    print(f"dataset {args.out} digest {digest}")
    return EXIT_OK


# -- run ------------------------------------------------------------------------


def _build_config(config_path: str, overrides: list, method: str) -> EstimatorConfig:
    cfg = load_config_file(config_path) if config_path else EstimatorConfig()
    if overrides:
        parsed = {}
        for item in overrides:
            if "=" not in item:
                raise ValueError(f"--set expects key=value, got {item!r}")
            key, raw = item.split("=", 1)
            try:
                parsed[key] = json.loads(raw)
            except json.JSONDecodeError:
                parsed[key] = raw
        cfg = merge_overrides(cfg, parsed)
    return cfg.apply_method(method)


def _write_run_outputs(out_dir: str, result, cfg: EstimatorConfig, run_info: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    ds.write_tum(os.path.join(out_dir, "trajectory.txt"), result.trajectory)
    with open(os.path.join(out_dir, "degeneracy.csv"), "w") as f:
        f.write(TRACE_HEADER + "\n")
        for fr in result.frames:
            f.write(trace_row(fr.frame, fr.t, fr.report,
                              fr.map_outcome is MapOutcome.GATED_OUT) + "\n")
    with open(os.path.join(out_dir, "frames.csv"), "w") as f:
        f.write("frame,t,iters,converged,matched,cost_initial,cost_final,map_outcome\n")
        for fr in result.frames:
            f.write("%d,%.6f,%d,%d,%d,%.9g,%.9g,%s\n"
                    % (fr.frame, fr.t, fr.iterations, int(fr.converged),
                       fr.stats.matched, fr.cost_initial, fr.cost_final,
                       fr.map_outcome.value))
    with open(os.path.join(out_dir, "residuals.csv"), "w") as f:
        f.write("frame,kind,count,mean_abs,max_abs,skipped\n")
        for fr in result.frames:
            for row in fr.residual_summary:
                f.write("%d,%s,%d,%.9g,%.9g,%d\n"
                        % (row["frame"], row["kind"], row["count"],
                           row["mean_abs"], row["max_abs"], row["skipped"]))
    result.voxel_map.export_ply(os.path.join(out_dir, "map.ply"))
    with open(os.path.join(out_dir, "effective_config.json"), "w") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    with open(os.path.join(out_dir, "run_info.json"), "w") as f:
        json.dump(run_info, f, indent=2, sort_keys=True)
        f.write("\n")


def cmd_run(args) -> int:
    try:
        cfg = _build_config(args.config, args.set, args.method)
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        return _data_error(f"invalid config: {exc}")
    try:
        data = ds.read_dataset(args.dataset)
    except (ds.DatasetError, FileNotFoundError, ValueError) as exc:
        return _data_error(f"unreadable dataset: {exc}")
    result = run_sequence(data, cfg)
    _write_run_outputs(args.out, result, cfg,
                       {"dataset": os.path.abspath(args.dataset), "method": args.method})
    gated = sum(fr.map_outcome is MapOutcome.GATED_OUT for fr in result.frames)
    print(f"processed {len(result.frames)} frames ({gated} gated), "
          f"map voxels {len(result.voxel_map)}, outputs in {args.out}")
    return EXIT_OK


# -- evaluate -------------------------------------------------------------------


def cmd_evaluate(args) -> int:
    try:
        est = ds.read_tum(args.estimate)
        gt = ds.read_tum(args.groundtruth)
        pairs = evaluation.associate(est, gt, args.max_dt)
    except (ds.DatasetError, FileNotFoundError, evaluation.NoAssociations,
            ValueError) as exc:
        return _data_error(str(exc))
    if args.align == "first":
        pairs = evaluation.align_first_pose(pairs)
    elif args.align == "umeyama":
        pairs = evaluation.align_umeyama(pairs)
    summary = evaluation.ape(pairs)
    print(f"APE rmse {summary.rmse:.6f} m, mean {summary.mean:.6f} m, "
          f"max {summary.max:.6f} m over {summary.count} pairs")
    if args.out:
        with open(args.out, "w") as f:
            f.write(evaluation.COMPARISON_HEADER + "\n")
            f.write(evaluation.comparison_row(
                os.path.basename(os.path.dirname(os.path.abspath(args.estimate)))
                or "sequence", "estimate", summary) + "\n")
    return EXIT_OK


# -- ablate ---------------------------------------------------------------------


def _ablate_task(task) -> list:
    """Regenerate one (dataset, seed) realization and run every method preset.

    Runs in a worker process; returns plain row tuples for deterministic merging.
    """
    dataset_dir, seed, out_dir, cfg_dict = task
    name = os.path.basename(os.path.normpath(dataset_dir))
    rows = []
    try:
        meta = ds.read_dataset(dataset_dir).meta
        gen_dir = os.path.join(out_dir, "data", f"{name}__seed{seed}")
        simulator.generate_dataset(
            gen_dir, meta["preset"], meta["params"], seed=seed,
            duration=meta["duration"], scan_rate_hz=meta["scan_rate_hz"],
            imu_rate_hz=meta["imu_rate_hz"], n_rays=meta["n_rays"],
            sigma=meta["sigma"], gravity=tuple(meta["gravity"]))
        data = ds.read_dataset(gen_dir)
    except Exception as exc:
        for method in METHOD_PRESETS:
            rows.append((name, method, seed, "", "", "", "",
                         f"error:{type(exc).__name__}"))
        return rows

    base_cfg = EstimatorConfig.from_dict(cfg_dict)
    for method in METHOD_PRESETS:
        try:
            cfg = base_cfg.apply_method(method)
            result = run_sequence(data, cfg)
            run_dir = os.path.join(out_dir, "runs", f"{name}__{method}__seed{seed}")
            os.makedirs(run_dir, exist_ok=True)
            ds.write_tum(os.path.join(run_dir, "trajectory.txt"), result.trajectory)
            pairs = evaluation.associate(result.trajectory, data.groundtruth)
            summary = evaluation.ape(evaluation.align_first_pose(pairs))
            rows.append((name, method, seed, "%.6f" % summary.rmse,
                         "%.6f" % summary.mean, "%.6f" % summary.max,
                         str(summary.count), "ok"))
        except Exception as exc:
            rows.append((name, method, seed, "", "", "", "",
                         f"error:{type(exc).__name__}"))
    return rows


def cmd_ablate(args) -> int:
    try:
        cfg = _build_config(args.config, args.set, "full")
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        return _data_error(f"invalid config: {exc}")
    for d in args.datasets:
        if not os.path.isfile(os.path.join(d, "meta.json")):
            return _data_error(f"not a dataset directory: {d}")
    os.makedirs(args.out, exist_ok=True)

    tasks = [(d, seed, args.out, cfg.to_dict())
             for d in args.datasets for seed in args.seeds]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            all_rows = [row for rows in pool.map(_ablate_task, tasks) for row in rows]
    else:
        all_rows = [row for task in tasks for row in _ablate_task(task)]
    all_rows.sort(key=lambda r: (r[0], r[1], r[2]))

    runs_path = os.path.join(args.out, "runs.csv")
    with open(runs_path, "w") as f:
        f.write("sequence,method,seed,rmse,mean,max,frames,status\n")
        for r in all_rows:
            f.write("%s,%s,%d,%s,%s,%s,%s,%s\n" % r)

    table_path = os.path.join(args.out, "ablation.csv")
    with open(table_path, "w") as f:
        f.write(evaluation.COMPARISON_HEADER + "\n")
        for name in sorted({r[0] for r in all_rows}):
            for method in METHOD_PRESETS:
                ok = [r for r in all_rows
                      if r[0] == name and r[1] == method and r[7] == "ok"]
                if not ok:
                    f.write("%s,%s,,,,0\n" % (name, method))
                    continue
                med = [statistics.median(float(r[col]) for r in ok) for col in (3, 4, 5)]
                frames = int(statistics.median(int(r[6]) for r in ok))
                f.write("%s,%s,%.6f,%.6f,%.6f,%d\n"
                        % (name, method, med[0], med[1], med[2], frames))
    with open(table_path) as f:
        print(f.read(), end="")
    print(f"ablation table written to {table_path}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adaptive-lio",
        description="Degeneracy-aware LiDAR-inertial odometry on synthetic scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--preset", required=True, choices=simulator.PRESETS)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=20.0)
    p.add_argument("--scan-rate", type=float, default=10.0)
    p.add_argument("--imu-rate", type=float, default=1000.0)
    p.add_argument("--rays", type=int, default=10000)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--size", help="room dimensions sx,sy,sz in meters")
    p.add_argument("--length", type=float)
    p.add_argument("--width", type=float)
    p.add_argument("--height", type=float)
    p.add_argument("--radius", type=float)
    p.add_argument("--facets", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="run odometry over a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", default="full", choices=METHOD_PRESETS)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", default=[],
                   help="override a config key, e.g. --set voxel_side=0.4")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="APE between two TUM trajectories")
    p.add_argument("estimate")
    p.add_argument("groundtruth")
    p.add_argument("--out", help="write a comparison CSV row")
    p.add_argument("--max-dt", type=float, default=0.01)
    p.add_argument("--align", default="first", choices=("first", "umeyama", "none"))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="baseline/angle_only/full comparison table")
    p.add_argument("--datasets", nargs="+", required=True)
    p.add_argument("--seeds", nargs="+", type=int, default=[0])
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", default=[])
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ds.DatasetError, simulator.InvalidDimensions) as exc:
        return _data_error(str(exc))
    except Exception as exc:  # anything unanticipated
        print(json.dumps({"error": "internal", "detail": f"{type(exc).__name__}: {exc}"}),
              file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
