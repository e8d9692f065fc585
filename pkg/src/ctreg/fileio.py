"""Readers and writers for the text interchange formats.

TUM trajectory lines are `t tx ty tz qx qy qz qw` (quaternion x-first on
disk, converted to the internal w-first storage here). IMU and scan
streams are headered CSV. Writers round-trip with their readers to 1e-12.
"""

from __future__ import annotations

import numpy as np

from .geometry import Pose, Rotation


class FileFormatError(ValueError):
    """A file failed to parse; carries path, line number, and reason."""

    def __init__(self, path, line, reason):
        self.path = str(path)
        self.line = int(line)
        self.reason = reason
        super().__init__(f"{path}:{line}: {reason}")


def _data_lines(path):
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line


def read_trajectory_tum(path):
    """Read TUM-format poses; returns a list of (t, Pose)."""
    samples = []
    last_t = None
    for lineno, line in _data_lines(path):
        vals = line.replace(",", " ").split()
        if len(vals) != 8:
            raise FileFormatError(path, lineno, "expected 8 values per line")
        try:
            t, tx, ty, tz, qx, qy, qz, qw = (float(v) for v in vals)
        except ValueError as e:
            raise FileFormatError(path, lineno, f"non-numeric value: {e}") from e
        q = np.array([qw, qx, qy, qz])
        norm = np.linalg.norm(q)
        if abs(norm - 1.0) > 1e-3:
            raise FileFormatError(path, lineno, f"quaternion norm {norm:.6g} deviates from 1")
        if last_t is not None and t <= last_t:
            raise FileFormatError(path, lineno, f"non-monotone timestamp {t}")
        last_t = t
        samples.append((t, Pose(Rotation(q), np.array([tx, ty, tz]))))
    return samples


def write_trajectory_tum(path, samples):
    with open(path, "w") as f:
        for t, pose in samples:
            q = pose.rotation.q
            p = pose.position
            f.write("%.9f %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n"
                    % (t, p[0], p[1], p[2], q[1], q[2], q[3], q[0]))


IMU_HEADER = "t,wx,wy,wz,ax,ay,az"
SCAN_HEADER = "t,x,y,z"


def read_imu_csv(path):
    """Read an IMU stream; returns (t (n,), gyro (n,3), accel (n,3))."""
    lines = list(_data_lines(path))
    if not lines or lines[0][1].replace(" ", "") != IMU_HEADER:
        raise FileFormatError(path, lines[0][0] if lines else 1,
                              f"expected header '{IMU_HEADER}'")
    rows = []
    last_t = None
    for lineno, line in lines[1:]:
        vals = line.split(",")
        if len(vals) != 7:
            raise FileFormatError(path, lineno, "expected 7 comma-separated values")
        try:
            row = [float(v) for v in vals]
        except ValueError as e:
            raise FileFormatError(path, lineno, f"non-numeric value: {e}") from e
        if not all(np.isfinite(row)):
            raise FileFormatError(path, lineno, "non-finite value")
        if last_t is not None and row[0] <= last_t:
            raise FileFormatError(path, lineno, f"non-increasing timestamp {row[0]}")
        last_t = row[0]
        rows.append(row)
    arr = np.array(rows, dtype=float).reshape(-1, 7)
    return arr[:, 0], arr[:, 1:4], arr[:, 4:7]


def write_imu_csv(path, t, gyro, accel):
    t = np.asarray(t, dtype=float)
    gyro = np.asarray(gyro, dtype=float)
    accel = np.asarray(accel, dtype=float)
    with open(path, "w") as f:
        f.write(IMU_HEADER + "\n")
        for i in range(len(t)):
            f.write("%.9f,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n"
                    % (t[i], gyro[i, 0], gyro[i, 1], gyro[i, 2],
                       accel[i, 0], accel[i, 1], accel[i, 2]))


def read_scan_csv(path, range_min=0.5, range_max=120.0):
    """Read one lidar scan; returns (t (n,), points (n,3), n_gated).

    Points outside (range_min, range_max) are dropped and counted, not
    errors. Equal timestamps are permitted (simultaneous firings).
    """
    lines = list(_data_lines(path))
    if not lines or lines[0][1].replace(" ", "") != SCAN_HEADER:
        raise FileFormatError(path, lines[0][0] if lines else 1,
                              f"expected header '{SCAN_HEADER}'")
    rows = []
    last_t = None
    for lineno, line in lines[1:]:
        vals = line.split(",")
        if len(vals) != 4:
            raise FileFormatError(path, lineno, "expected 4 comma-separated values")
        try:
            row = [float(v) for v in vals]
        except ValueError as e:
            raise FileFormatError(path, lineno, f"non-numeric value: {e}") from e
        if not all(np.isfinite(row)):
            raise FileFormatError(path, lineno, "non-finite value")
        if last_t is not None and row[0] < last_t:
            raise FileFormatError(path, lineno, f"decreasing timestamp {row[0]}")
        last_t = row[0]
        rows.append(row)
    arr = np.array(rows, dtype=float).reshape(-1, 4)
    rng = np.linalg.norm(arr[:, 1:], axis=1)
    keep = (rng > range_min) & (rng < range_max)
    return arr[keep, 0], arr[keep, 1:], int(np.sum(~keep))


def write_scan_csv(path, t, points):
    t = np.asarray(t, dtype=float)
    points = np.asarray(points, dtype=float)
    with open(path, "w") as f:
        f.write(SCAN_HEADER + "\n")
        for i in range(len(t)):
            f.write("%.9f,%.17g,%.17g,%.17g\n"
                    % (t[i], points[i, 0], points[i, 1], points[i, 2]))
