"""Voxelized prior map with per-voxel fitted plane coefficients.

Each voxel of an axis-aligned grid stores a plane (n, mu) fitted to the
prior-map points that fall inside it by total least squares (smallest
eigenvector of the point covariance). Voxels whose points are not planar
enough are rejected and absent from the map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_VOXEL_SIZE = 0.4
DEFAULT_MIN_POINTS = 6
DEFAULT_PLANARITY_MIN = 0.9
DEFAULT_RMS_MAX = 0.05

_DEGENERATE_EIG = 1e-12


@dataclass(frozen=True)
class VoxelPlane:
    """Plane n . x = mu with a planarity score in [0, 1]."""

    normal: np.ndarray
    offset: float
    planarity: float
    point_count: int

    def distance(self, x):
        return float(self.normal @ np.asarray(x, dtype=float) - self.offset)


def fit_plane(points, min_points=DEFAULT_MIN_POINTS,
              planarity_min=DEFAULT_PLANARITY_MIN, rms_max=DEFAULT_RMS_MAX):
    """Total-least-squares plane fit; returns VoxelPlane or None (reject).

    The normal is the covariance eigenvector of the smallest eigenvalue;
    planarity = 1 - lambda_min / lambda_mid. The sign is fixed so the
    offset mu = n . centroid is >= 0.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must be (n, 3), got {pts.shape}")
    if len(pts) < min_points:
        return None
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered / len(pts)
    evals, evecs = np.linalg.eigh(cov)
    lam_min, lam_mid = evals[0], evals[1]
    if lam_mid <= _DEGENERATE_EIG:
        return None  # collinear or coincident points
    planarity = 1.0 - lam_min / lam_mid
    rms = float(np.sqrt(max(lam_min, 0.0)))
    if planarity < planarity_min or rms > rms_max:
        return None
    normal = evecs[:, 0]
    offset = float(normal @ centroid)
    if offset < 0 or (offset == 0 and _lex_negative(normal)):
        normal = -normal
        offset = -offset
    return VoxelPlane(normal=normal, offset=offset,
                      planarity=float(planarity), point_count=len(pts))


def _lex_negative(n):
    for c in n:
        if c != 0:
            return c < 0
    return False


def voxel_index(points, voxel_size):
    """Integer voxel index per point, floor convention (boundary -> lower)."""
    if voxel_size <= 0:
        raise ValueError(f"voxel_size must be > 0, got {voxel_size}")
    return np.floor(np.asarray(points, dtype=float) / voxel_size).astype(np.int64)


class VoxelMap:
    """Associative container: integer voxel index -> VoxelPlane."""

    def __init__(self, voxel_size, planes=None):
        if voxel_size <= 0:
            raise ValueError(f"voxel_size must be > 0, got {voxel_size}")
        self.voxel_size = float(voxel_size)
        self.planes = dict(planes or {})

    def __len__(self):
        return len(self.planes)

    def query(self, x):
        """Plane of the voxel containing x, or None."""
        idx = tuple(voxel_index(np.asarray(x, dtype=float)[None, :], self.voxel_size)[0])
        return self.planes.get(idx)

    def query_many(self, points):
        """Vectorized lookup; returns a list of VoxelPlane-or-None."""
        idx = voxel_index(points, self.voxel_size)
        get = self.planes.get
        return [get((int(a), int(b), int(c))) for a, b, c in idx]

    def write(self, path):
        """Write the `voxmap v1` text format, sorted by voxel index."""
        with open(path, "w") as f:
            f.write("voxmap v1\n")
            f.write("%.17g %d\n" % (self.voxel_size, len(self.planes)))
            for idx in sorted(self.planes):
                pl = self.planes[idx]
                f.write("%d %d %d %.17g %.17g %.17g %.17g %.17g %d\n"
                        % (idx[0], idx[1], idx[2], pl.normal[0], pl.normal[1],
                           pl.normal[2], pl.offset, pl.planarity, pl.point_count))

    @classmethod
    def read(cls, path):
        from .fileio import FileFormatError

        with open(path) as f:
            lines = [(n + 1, line.strip()) for n, line in enumerate(f)]
        lines = [(n, l) for n, l in lines if l and not l.startswith("#")]
        if not lines or lines[0][1] != "voxmap v1":
            raise FileFormatError(path, lines[0][0] if lines else 1,
                                  "expected 'voxmap v1' header")
        try:
            size_s, count_s = lines[1][1].split()
            size, count = float(size_s), int(count_s)
        except (IndexError, ValueError) as e:
            raise FileFormatError(path, 2, f"bad header line: {e}") from e
        planes = {}
        for lineno, row in lines[2:]:
            vals = row.split()
            if len(vals) != 9:
                raise FileFormatError(path, lineno, "expected 9 values per voxel line")
            try:
                ix, iy, iz = int(vals[0]), int(vals[1]), int(vals[2])
                nums = [float(v) for v in vals[3:]]
            except ValueError as e:
                raise FileFormatError(path, lineno, f"non-numeric value: {e}") from e
            planes[(ix, iy, iz)] = VoxelPlane(
                normal=np.array(nums[:3]), offset=nums[3],
                planarity=nums[4], point_count=int(vals[8]))
        if len(planes) != count:
            raise FileFormatError(path, lines[-1][0],
                                  f"expected {count} voxels, found {len(planes)}")
        return cls(size, planes)


@dataclass
class BuildStats:
    total_points: int = 0
    candidate_voxels: int = 0
    accepted_voxels: int = 0

    @property
    def rejected_voxels(self):
        return self.candidate_voxels - self.accepted_voxels


def build_map(cloud, voxel_size=DEFAULT_VOXEL_SIZE, min_points=DEFAULT_MIN_POINTS,
              planarity_min=DEFAULT_PLANARITY_MIN, rms_max=DEFAULT_RMS_MAX,
              return_stats=False):
    """Bucket a point cloud into voxels and fit a plane per voxel.

    Voxels are finalized in sorted index order so the result is independent
    of input point order (to floating-point accumulation accuracy).
    """
    cloud = np.asarray(cloud, dtype=float)
    if cloud.size == 0:
        raise ValueError("cannot build a voxel map from an empty cloud")
    if cloud.ndim != 2 or cloud.shape[1] != 3:
        raise ValueError(f"cloud must be (n, 3), got {cloud.shape}")
    idx = voxel_index(cloud, voxel_size)
    order = np.lexsort((idx[:, 2], idx[:, 1], idx[:, 0]))
    idx_sorted = idx[order]
    cloud_sorted = cloud[order]
    # stable sort of points within each voxel for order-independence
    uniq, starts = np.unique(idx_sorted, axis=0, return_index=True)
    bounds = np.append(starts, len(cloud_sorted))
    stats = BuildStats(total_points=len(cloud), candidate_voxels=len(uniq))
    planes = {}
    for v in range(len(uniq)):
        pts = cloud_sorted[bounds[v]:bounds[v + 1]]
        if len(pts) < min_points:
            continue
        pts = pts[np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))]
        plane = fit_plane(pts, min_points, planarity_min, rms_max)
        if plane is not None:
            planes[tuple(int(c) for c in uniq[v])] = plane
            stats.accepted_voxels += 1
    vmap = VoxelMap(voxel_size, planes)
    if return_stats:
        return vmap, stats
    return vmap


def read_xyz(path):
    """ASCII XYZ cloud: one `x y z` per line, `#` comments ignored."""
    from .fileio import FileFormatError

    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = line.split()
            if len(vals) != 3:
                raise FileFormatError(path, lineno, "expected 3 values per line")
            try:
                rows.append([float(v) for v in vals])
            except ValueError as e:
                raise FileFormatError(path, lineno, f"non-numeric value: {e}") from e
    return np.array(rows, dtype=float).reshape(-1, 3)


def write_xyz(path, points):
    points = np.asarray(points, dtype=float)
    with open(path, "w") as f:
        for p in points:
            f.write("%.17g %.17g %.17g\n" % (p[0], p[1], p[2]))
