"""Trajectory accuracy metrics: rigid/similarity alignment, absolute
trajectory error, and velocity statistics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, Rotation
from .trajectory import SplineTrajectory

ALIGN_MODES = ("none", "se3", "sim3")


def umeyama_align(est, ref, with_scale=False):
    """Least-squares transform minimizing sum |s R est_i + t - ref_i|^2.

    Returns (Pose, scale); scale is 1 unless with_scale. Raises ValueError
    on degenerate (collinear or too few) configurations.
    """
    est = np.asarray(est, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if est.shape != ref.shape or est.ndim != 2 or est.shape[1] != 3:
        raise ValueError("point sets must both be (n, 3)")
    n = len(est)
    if n < 3:
        raise ValueError(f"need at least 3 point pairs, got {n}")
    mu_e = est.mean(axis=0)
    mu_r = ref.mean(axis=0)
    de = est - mu_e
    dr = ref - mu_r
    cov = dr.T @ de / n
    U, D, Vt = np.linalg.svd(cov)
    if D[1] < 1e-12 * max(D[0], 1e-300):
        raise ValueError("degenerate point configuration (collinear)")
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    if with_scale:
        var_e = float(np.sum(de * de)) / n
        scale = float(np.trace(np.diag(D) @ S)) / var_e
    else:
        scale = 1.0
    t = mu_r - scale * R @ mu_e
    return Pose(Rotation.from_matrix(R), t), scale


@dataclass
class AteReport:
    rmse: float
    mean: float
    median: float
    max: float
    matched_pairs: int
    alignment: Pose
    scale: float = 1.0
    rot_rmse_deg: float = 0.0
    rot_max_deg: float = 0.0
    errors: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def to_dict(self, verbose=False):
        q = self.alignment.rotation.q
        p = self.alignment.position
        out = {
            "rmse": self.rmse,
            "mean": self.mean,
            "median": self.median,
            "max": self.max,
            "matched_pairs": self.matched_pairs,
            "alignment": {"quaternion_wxyz": q.tolist(), "position": p.tolist()},
            "scale": self.scale,
            "rot_rmse_deg": self.rot_rmse_deg,
            "rot_max_deg": self.rot_max_deg,
        }
        if verbose:
            out["per_pair_errors"] = self.errors.tolist()
        return out


def _match(est, gt, window=0.02):
    """Pair estimate samples with ground truth. ``gt`` may be a spline
    (exact sampling at estimate times) or a sample list (nearest neighbor
    within the window)."""
    if isinstance(gt, SplineTrajectory):
        pairs = [(pose, gt.pose_at(t)) for t, pose in est if bool(gt.contains(t))]
        return pairs
    gt_t = np.array([t for t, _ in gt])
    pairs = []
    for t, pose in est:
        j = int(np.argmin(np.abs(gt_t - t)))
        if abs(gt_t[j] - t) <= window:
            pairs.append((pose, gt[j][1]))
    return pairs


def compute_ate(est, gt, align_mode="se3", window=0.02):
    """Absolute trajectory error of estimate samples against ground truth.

    align_mode: none | se3 | sim3. Position RMSE in meters; rotation error
    is reported informationally (degrees, after alignment).
    """
    if align_mode not in ALIGN_MODES:
        raise ValueError(f"align_mode must be one of {ALIGN_MODES}")
    pairs = _match(list(est), gt, window)
    if len(pairs) < 3:
        raise ValueError(f"insufficient temporal overlap: {len(pairs)} matched pairs")
    p_est = np.array([a.position for a, _ in pairs])
    p_gt = np.array([b.position for _, b in pairs])
    if align_mode == "none":
        T, scale = Pose.identity(), 1.0
    else:
        T, scale = umeyama_align(p_est, p_gt, with_scale=(align_mode == "sim3"))
    Rm = T.rotation.matrix()
    p_al = scale * (p_est @ Rm.T) + T.position
    errors = np.linalg.norm(p_al - p_gt, axis=1)
    rot_errors = np.array([
        np.degrees((T.rotation @ a.rotation).angle_to(b.rotation))
        for a, b in pairs])
    return AteReport(
        rmse=float(np.sqrt(np.mean(errors ** 2))),
        mean=float(np.mean(errors)),
        median=float(np.median(errors)),
        max=float(np.max(errors)),
        matched_pairs=len(pairs),
        alignment=T,
        scale=scale,
        rot_rmse_deg=float(np.sqrt(np.mean(rot_errors ** 2))),
        rot_max_deg=float(np.max(rot_errors)),
        errors=errors,
    )


MPS_TO_KMH = 3.6


def velocity_stats(traj, rate=100.0, bin_width_kmh=0.5):
    """Speed statistics over the full domain, sampled at ``rate`` Hz.

    Returns (max_kmh, median_kmh, (bin_edges_kmh, counts)).
    """
    if rate <= 0:
        raise ValueError("sampling rate must be > 0")
    t0, t1 = traj.domain()
    n = max(2, int(np.floor((t1 - t0) * rate)) + 1)
    times = t0 + np.arange(n) / rate
    times = times[times < t1]
    speeds = np.linalg.norm(traj.positions(times, deriv=1), axis=1) * MPS_TO_KMH
    vmax = float(np.max(speeds))
    vmed = float(np.median(speeds))
    # one bin past the max so the largest sample always falls inside
    n_bins = int(np.floor(vmax / bin_width_kmh)) + 1
    edges = np.arange(n_bins + 1) * bin_width_kmh
    counts, _ = np.histogram(speeds, bins=edges)
    return vmax, vmed, (edges, counts)
