"""Command-line pipeline: map preparation, registration, sampling,
deskewing, evaluation, velocity statistics, and scenario simulation.

Exit codes: 0 success, 1 domain/data error, 2 usage error (including
missing input files).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fileio, priormap
from .config import load_registration_config, load_scenario_spec
from .evaluation import ALIGN_MODES, compute_ate, velocity_stats
from .factors import (LidarPoint, MeasurementSet, PosePrior, deskew_scan)
from .fileio import FileFormatError
from .priormap import VoxelMap, build_map
from .solver import solve_registration
from .synth import make_trajectory, make_world, simulate_measurements
from .trajectory import DomainError, SplineTrajectory, fit_from_poses


def _require(path):
    p = Path(path)
    if not p.exists():
        raise _UsageError(f"input file not found: {path}")
    return p


class _UsageError(Exception):
    pass


def _config_path(args):
    return _require(args.config) if args.config is not None else None


def _load_imu(path):
    from .factors import ImuSample

    t, gyro, accel = fileio.read_imu_csv(_require(path))
    return [ImuSample(float(t[i]), gyro[i], accel[i]) for i in range(len(t))]


def _load_scans(paths, range_min, range_max):
    files = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files.extend(sorted(p.glob("*.csv")))
        else:
            files.append(_require(p))
    if not files:
        raise _UsageError("no scan files found")
    scans = []
    gated = 0
    for f in files:
        t, pts, n_gated = fileio.read_scan_csv(f, range_min, range_max)
        gated += n_gated
        scans.append([LidarPoint(float(t[i]), pts[i]) for i in range(len(t))])
    return scans, gated


def cmd_build_map(args):
    cfg = load_registration_config(_config_path(args))
    if args.voxel_size is not None:
        cfg.voxel_size = args.voxel_size
    if args.min_points is not None:
        cfg.voxel_min_points = args.min_points
    cloud = priormap.read_xyz(_require(args.cloud))
    if cloud.size == 0:
        raise ValueError(f"empty point cloud: {args.cloud}")
    vmap, stats = build_map(cloud, cfg.voxel_size, cfg.voxel_min_points,
                            cfg.voxel_planarity_min, cfg.voxel_rms_max,
                            return_stats=True)
    vmap.write(args.out)
    print(f"built {stats.accepted_voxels} voxels from {stats.total_points} points "
          f"({stats.rejected_voxels} candidate voxels rejected)")
    return 0


def cmd_register(args):
    cfg = load_registration_config(_config_path(args))
    vmap = VoxelMap.read(_require(args.map))
    scans, gated = _load_scans(args.scans, cfg.range_min, cfg.range_max)
    imu = _load_imu(args.imu)
    prior_samples = fileio.read_trajectory_tum(_require(args.priors))
    priors = [PosePrior(t, pose) for t, pose in prior_samples]
    ms = MeasurementSet(scans=scans, imu=imu, priors=priors)
    init = fit_from_poses(prior_samples, cfg.spline_dt, cfg.spline_order)
    traj, bias, report = solve_registration(ms, vmap, init, cfg.weights,
                                            cfg.constants, cfg.solver)
    traj.write(args.out_spline)
    doc = report.to_dict()
    doc["gated_points"] = gated
    doc["gyro_bias"] = bias.gyro_bias.tolist()
    doc["accel_bias"] = bias.accel_bias.tolist()
    if args.report:
        with open(args.report, "w") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")
    print(f"registration {'converged' if report.converged else 'DID NOT CONVERGE'} "
          f"({report.termination}); total cost "
          f"{report.initial_cost.get('total', 0):.6g} -> {report.final_cost.get('total', 0):.6g}")
    return 0 if report.converged else 1


def cmd_sample(args):
    traj = SplineTrajectory.read(_require(args.spline))
    if (args.rate is None) == (args.times is None):
        raise _UsageError("exactly one of --rate / --times is required")
    if args.rate is not None:
        if args.rate <= 0:
            raise _UsageError("--rate must be > 0")
        t0, t1 = traj.domain()
        n = int(np.floor((t1 - t0) * args.rate)) + 1
        times = t0 + np.arange(n) / args.rate
        times = times[times < t1]
    else:
        with open(_require(args.times)) as f:
            times = np.array([float(line.split()[0]) for line in f
                              if line.strip() and not line.startswith("#")])
    samples = traj.sample(times)
    fileio.write_trajectory_tum(args.out, samples)
    print(f"wrote {len(samples)} poses")
    return 0


def cmd_deskew(args):
    traj = SplineTrajectory.read(_require(args.spline))
    cfg = load_registration_config(_config_path(args))
    t, pts, gated = fileio.read_scan_csv(_require(args.scan), cfg.range_min,
                                         cfg.range_max)
    scan = [LidarPoint(float(t[i]), pts[i]) for i in range(len(t))]
    out = deskew_scan(traj, scan, args.ref_time)
    fileio.write_scan_csv(args.out, np.full(len(out), args.ref_time), out)
    print(f"deskewed {len(out)} points to t={args.ref_time} ({gated} gated)")
    return 0


def cmd_evaluate(args):
    est = fileio.read_trajectory_tum(_require(args.est))
    gt_path = _require(args.gt)
    with open(gt_path) as f:
        first = f.readline()
    gt = (SplineTrajectory.read(gt_path) if first.startswith("ctspline")
          else fileio.read_trajectory_tum(gt_path))
    report = compute_ate(est, gt, align_mode=args.align)
    doc = report.to_dict(verbose=args.verbose)
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    print(text)
    return 0


def cmd_velocity_stats(args):
    traj = SplineTrajectory.read(_require(args.spline))
    vmax, vmed, (edges, counts) = velocity_stats(traj, args.rate)
    print(f"max(V) {vmax:.2f} km/h  med(V) {vmed:.2f} km/h")
    if args.out:
        with open(args.out, "w") as f:
            f.write("bin_low_kmh,bin_high_kmh,count\n")
            for i in range(len(counts)):
                f.write("%.2f,%.2f,%d\n" % (edges[i], edges[i + 1], counts[i]))
    return 0


def cmd_simulate(args):
    spec = load_scenario_spec(_config_path(args))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = make_world(spec)
    truth = make_trajectory(spec)
    ms = simulate_measurements(truth, world, spec)

    priormap.write_xyz(out / "map.xyz", world)
    truth.write(out / "truth_spline.txt")
    scan_dir = out / "scans"
    scan_dir.mkdir(exist_ok=True)
    for i, scan in enumerate(ms.scans):
        fileio.write_scan_csv(scan_dir / f"scan_{i:04d}.csv",
                              np.array([p.t for p in scan]),
                              np.array([p.f for p in scan]))
    fileio.write_imu_csv(out / "imu.csv",
                         np.array([s.t for s in ms.imu]),
                         np.array([s.gyro for s in ms.imu]),
                         np.array([s.accel for s in ms.imu]))
    fileio.write_trajectory_tum(out / "priors.tum",
                                [(p.t, p.pose) for p in ms.priors])
    n_points = sum(len(s) for s in ms.scans)
    print(f"wrote scenario to {out}: {len(world)} map points, "
          f"{len(ms.scans)} scans ({n_points} points), {len(ms.imu)} IMU "
          f"samples, {len(ms.priors)} priors")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ctreg",
        description="Continuous-time lidar-inertial trajectory registration "
                    "against a voxelized prior map.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-map", help="voxelize a prior cloud into fitted planes")
    p.add_argument("--cloud", required=True, help="ASCII XYZ prior map")
    p.add_argument("--voxel-size", type=float, default=None, help="voxel edge, m")
    p.add_argument("--min-points", type=int, default=None,
                   help="minimum points per voxel for a plane fit")
    p.add_argument("--config", default=None, help="INI config file")
    p.add_argument("--out", required=True, help="output voxmap file")
    p.add_argument("--threads", type=int, default=1,
                   help="worker cap (result is independent of N)")
    p.set_defaults(func=cmd_build_map)

    p = sub.add_parser("register", help="estimate the trajectory and IMU biases")
    p.add_argument("--map", required=True, help="voxmap file from build-map")
    p.add_argument("--scans", required=True, nargs="+",
                   help="scan CSV files or a directory of them")
    p.add_argument("--imu", required=True, help="IMU CSV stream")
    p.add_argument("--priors", required=True, help="pose priors, TUM format")
    p.add_argument("--config", default=None, help="INI config file")
    p.add_argument("--out-spline", required=True, help="output spline file")
    p.add_argument("--report", default=None, help="output JSON report")
    p.add_argument("--threads", type=int, default=1,
                   help="worker cap (result is independent of N)")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("sample", help="sample a spline at arbitrary times")
    p.add_argument("--spline", required=True)
    p.add_argument("--rate", type=float, default=None, help="sampling rate, Hz")
    p.add_argument("--times", default=None, help="file with one timestamp per line")
    p.add_argument("--out", required=True, help="output TUM file")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("deskew", help="motion-undistort one scan")
    p.add_argument("--spline", required=True)
    p.add_argument("--scan", required=True, help="scan CSV")
    p.add_argument("--ref-time", type=float, required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True, help="output scan CSV")
    p.set_defaults(func=cmd_deskew)

    p = sub.add_parser("evaluate", help="trajectory accuracy report (ATE)")
    p.add_argument("--est", required=True, help="estimate, TUM format")
    p.add_argument("--gt", required=True, help="ground truth, TUM or spline file")
    p.add_argument("--align", choices=ALIGN_MODES, default="se3")
    p.add_argument("--out", default=None, help="output JSON report")
    p.add_argument("--verbose", action="store_true",
                   help="include per-pair errors in the report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("velocity-stats", help="speed statistics of a spline")
    p.add_argument("--spline", required=True)
    p.add_argument("--rate", type=float, default=100.0)
    p.add_argument("--out", default=None, help="histogram CSV")
    p.set_defaults(func=cmd_velocity_stats)

    p = sub.add_parser("simulate", help="generate a synthetic scenario directory")
    p.add_argument("--config", default=None, help="scenario INI file")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (FileFormatError, DomainError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
