"""On-disk dataset layout and readers/writers.

A sequence directory contains:
    scans/NNNNNN.csv   one file per scan, rows t,x,y,z (LiDAR frame)
    imu.csv            rows t,wx,wy,wz,ax,ay,az
    groundtruth.txt    TUM format: t x y z qx qy qz qw
    meta.json          preset, params, seed, rates, initial state, format_version
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .geometry import Pose, matrix_from_quat, quat_from_matrix
from .imu import ImuSample

FORMAT_VERSION = 1


class DatasetError(ValueError):
    pass


@dataclass
class ScanFrame:
    """One LiDAR sweep: per-point capture times plus the scan window bounds."""

    points: np.ndarray        # (N, 3), sensor frame at each point's own time
    times: np.ndarray         # (N,)
    t_start: float
    t_end: float
    gt_pose: Pose = None


def write_tum(path: str, trajectory) -> None:
    """Write [(t, Pose), ...] in TUM format with fixed formatting."""
    with open(path, "w") as f:
        for t, pose in trajectory:
            q = quat_from_matrix(pose.rotation)
            p = pose.translation
            f.write("%.6f %.9f %.9f %.9f %.9f %.9f %.9f %.9f\n"
                    % (t, p[0], p[1], p[2], q[0], q[1], q[2], q[3]))


def read_tum(path: str):
    """Parse a TUM trajectory; raises DatasetError with the offending line number."""
    out = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise DatasetError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            try:
                vals = [float(x) for x in parts]
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
            t, x, y, z, qx, qy, qz, qw = vals
            out.append((t, Pose(matrix_from_quat([qx, qy, qz, qw]), np.array([x, y, z]))))
    return out


def _write_csv(path: str, header: str, rows: np.ndarray) -> None:
    with open(path, "w") as f:
        f.write(header + "\n")
        for row in rows:
            f.write(",".join("%.12g" % v for v in row) + "\n")


def _read_csv(path: str, ncols: int) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        return np.zeros((0, ncols))
    if data.shape[1] != ncols:
        raise DatasetError(f"{path}: expected {ncols} columns, got {data.shape[1]}")
    return data


def write_dataset(root: str, scans: list, imu_samples: list,
                  groundtruth: list, meta: dict) -> None:
    os.makedirs(os.path.join(root, "scans"), exist_ok=True)
    for i, scan in enumerate(scans):
        rows = np.column_stack([scan.times, scan.points])
        _write_csv(os.path.join(root, "scans", "%06d.csv" % i), "t,x,y,z", rows)
    imu_rows = np.array([[s.timestamp, *s.gyro, *s.accel] for s in imu_samples])
    _write_csv(os.path.join(root, "imu.csv"), "t,wx,wy,wz,ax,ay,az", imu_rows)
    write_tum(os.path.join(root, "groundtruth.txt"), groundtruth)
    meta = dict(meta)
    meta["format_version"] = FORMAT_VERSION
    with open(os.path.join(root, "meta.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


@dataclass
class Dataset:
    root: str
    meta: dict
    scans: list
    imu: list
    groundtruth: list

    @property
    def initial_pose(self) -> Pose:
        init = self.meta["initial"]
        return Pose(matrix_from_quat(init["quaternion_xyzw"]), np.array(init["position"]))

    @property
    def initial_velocity(self) -> np.ndarray:
        return np.array(self.meta["initial"]["velocity"], dtype=float)


def read_dataset(root: str) -> Dataset:
    meta_path = os.path.join(root, "meta.json")
    if not os.path.isfile(meta_path):
        raise DatasetError(f"{root}: missing meta.json")
    with open(meta_path) as f:
        meta = json.load(f)
    if meta.get("format_version") != FORMAT_VERSION:
        raise DatasetError(f"{root}: unsupported format_version {meta.get('format_version')}")

    scan_dir = os.path.join(root, "scans")
    scan_files = sorted(os.listdir(scan_dir)) if os.path.isdir(scan_dir) else []
    gt = read_tum(os.path.join(root, "groundtruth.txt"))
    gt_by_index = {i: pose for i, (t, pose) in enumerate(gt)}

    scan_period = 1.0 / meta["scan_rate_hz"]
    scans = []
    for i, name in enumerate(scan_files):
        data = _read_csv(os.path.join(scan_dir, name), 4)
        t_end = (i + 1) * scan_period
        scans.append(ScanFrame(points=data[:, 1:4], times=data[:, 0],
                               t_start=i * scan_period, t_end=t_end,
                               gt_pose=gt_by_index.get(i)))

    imu_rows = _read_csv(os.path.join(root, "imu.csv"), 7)
    imu = [ImuSample(row[0], row[1:4], row[4:7]) for row in imu_rows]
    return Dataset(root=root, meta=meta, scans=scans, imu=imu, groundtruth=gt)


def dataset_digest(root: str) -> str:
    """SHA-256 over every file in the directory, path-ordered."""
    h = hashlib.sha256()
    for dirpath, dirnames, filenames in sorted(os.walk(root)):
        dirnames.sort()
        for name in sorted(filenames):
            full = os.path.join(dirpath, name)
            h.update(os.path.relpath(full, root).encode())
            with open(full, "rb") as f:
                h.update(f.read())
    return h.hexdigest()
