"""The four residual factor families of the registration cost.

Residuals are whitened (divided by the per-factor standard deviation) so
they combine into one least-squares objective:

  pose:  [Log(Rbar^-1 R(t)) / s_rot ; (p(t) - pbar) / s_pos]
  lidar: (n . (R(t) f + p(t)) - mu) / s_lidar
  gyro:  (R^-1(t) w_W(t) + b_gyro - w_meas) / s_gyro
  acce:  (R^-1(t) [a_W(t) + g] + b_acce - a_meas) / s_acce

The lidar residual evaluates both rotation and position at the point's own
timestamp, which is what makes the deskew implicit in the optimization.

Batched entry points return residual arrays together with dense Jacobian
blocks over the ``order`` knots each factor touches, plus the index of the
first knot, ready for sparse assembly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import liealg
from .geometry import Pose

DEFAULT_RANGE_MIN = 0.5
DEFAULT_RANGE_MAX = 120.0


@dataclass(frozen=True)
class ImuSample:
    """One IMU reading: body-frame angular rate (rad/s) and specific force (m/s^2)."""

    t: float
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gyro", np.asarray(self.gyro, dtype=float))
        object.__setattr__(self, "accel", np.asarray(self.accel, dtype=float))
        if not (np.isfinite(self.t) and np.all(np.isfinite(self.gyro))
                and np.all(np.isfinite(self.accel))):
            raise ValueError("IMU sample must be finite")


@dataclass(frozen=True)
class LidarPoint:
    """One lidar return: acquisition time and body-frame coordinates."""

    t: float
    f: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "f", np.asarray(self.f, dtype=float))
        if not (np.isfinite(self.t) and np.all(np.isfinite(self.f))):
            raise ValueError("lidar point must be finite")


@dataclass(frozen=True)
class PosePrior:
    t: float
    pose: Pose


@dataclass
class ImuBias:
    """Constant-over-the-window gyro/accel bias estimate."""

    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.gyro_bias = np.asarray(self.gyro_bias, dtype=float)
        self.accel_bias = np.asarray(self.accel_bias, dtype=float)
        if np.linalg.norm(self.gyro_bias) >= 1.0:
            raise ValueError("gyro bias magnitude must be < 1 rad/s")
        if np.linalg.norm(self.accel_bias) >= 5.0:
            raise ValueError("accel bias magnitude must be < 5 m/s^2")

    def copy(self):
        return ImuBias(self.gyro_bias.copy(), self.accel_bias.copy())


@dataclass
class FactorWeights:
    """Per-factor measurement standard deviations used for whitening."""

    pose_rot: np.ndarray = field(default_factory=lambda: np.full(3, 0.01))
    pose_pos: np.ndarray = field(default_factory=lambda: np.full(3, 0.1))
    lidar: float = 0.05
    gyro: float = 0.01
    accel: float = 0.1

    def __post_init__(self):
        self.pose_rot = np.broadcast_to(np.asarray(self.pose_rot, dtype=float), (3,)).copy()
        self.pose_pos = np.broadcast_to(np.asarray(self.pose_pos, dtype=float), (3,)).copy()
        if (np.any(self.pose_rot <= 0) or np.any(self.pose_pos <= 0)
                or self.lidar <= 0 or self.gyro <= 0 or self.accel <= 0):
            raise ValueError("all factor standard deviations must be > 0")


@dataclass
class WorldConstants:
    """Site constants; gravity points along +z by default so a resting
    accelerometer reading (0, 0, 9.81) yields a zero residual."""

    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 9.81]))

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=float)


@dataclass
class MeasurementSet:
    """All measurements of one optimization window."""

    scans: list  # list of scans; each scan is a list of LidarPoint
    imu: list    # list of ImuSample, strictly increasing t
    priors: list  # list of PosePrior


# ---------------------------------------------------------------------------
# batched residuals + Jacobians


def pose_residuals(traj, t, rot_bar, pos_bar, weights, jacobians=False):
    """Whitened pose-prior residuals, batched.

    t: (m,), rot_bar: (m, 3, 3), pos_bar: (m, 3). Returns a dict with
    r_rot (m, 3), r_pos (m, 3), seg (m,), and when requested J_rot
    (m, 3, k, 3) w.r.t. rotation-knot perturbations and the position basis
    b (m, k) (position Jacobian is b[s]/sigma on the diagonal).
    """
    t = np.asarray(t, dtype=float)
    state = traj.rotation_state(t, jacobians=jacobians)
    seg, b = traj.position_basis(t)
    err = liealg.log_so3(rot_bar.swapaxes(-1, -2) @ state["R"])
    pos = np.einsum("mk,mkd->md", b, traj.pos_knots[seg[:, None] + np.arange(traj.order)])
    out = {
        "seg": seg,
        "r_rot": err / weights.pose_rot,
        "r_pos": (pos - pos_bar) / weights.pose_pos,
        "b": b,
    }
    if jacobians:
        J = np.matmul(liealg.jr_inv_so3(err)[:, None], state["JR"])  # (m, k, 3, 3)
        out["J_rot"] = J.swapaxes(1, 2) / weights.pose_rot[None, :, None, None]
    return out


def lidar_residuals(traj, t, f, normal, mu, weights, jacobians=False):
    """Whitened point-to-plane residuals, batched.

    t: (m,), f: (m, 3) body-frame points, normal: (m, 3), mu: (m,).
    J_rot is (m, k, 3); J_pos is b (m, k) basis times n / sigma.
    """
    t = np.asarray(t, dtype=float)
    state = traj.rotation_state(t, jacobians=jacobians)
    seg, b = traj.position_basis(t)
    pos = np.einsum("mk,mkd->md", b, traj.pos_knots[seg[:, None] + np.arange(traj.order)])
    world = np.einsum("mij,mj->mi", state["R"], f) + pos
    r = (np.einsum("mi,mi->m", normal, world) - mu) / weights.lidar
    out = {"seg": seg, "r": r, "b": b, "world": world}
    if jacobians:
        nR = np.einsum("mi,mij->mj", normal, state["R"])     # n^T R
        nRfx = np.einsum("mj,mjl->ml", nR, liealg.hat(f))    # n^T R [f]x
        out["J_rot"] = -np.einsum("ml,mklj->mkj", nRfx, state["JR"]) / weights.lidar
        out["J_pos"] = b[:, :, None] * normal[:, None, :] / weights.lidar
    return out


def gyro_residuals(traj, t, gyro_meas, bias, weights, jacobians=False):
    """Whitened gyroscope residuals, batched. J_rot is (m, 3, k, 3); the
    bias Jacobian is I / sigma."""
    t = np.asarray(t, dtype=float)
    state = traj.rotation_state(t, jacobians=jacobians)
    r = (state["omega_body"] + bias.gyro_bias - gyro_meas) / weights.gyro
    out = {"seg": state["seg"], "r": r}
    if jacobians:
        out["J_rot"] = state["Jw"].swapaxes(1, 2) / weights.gyro
    return out


def acce_residuals(traj, t, accel_meas, bias, weights, constants, jacobians=False):
    """Whitened accelerometer residuals, batched. J_rot (m, 3, k, 3),
    J_pos via the second-derivative basis ddb (m, k) (times R^T / sigma)."""
    t = np.asarray(t, dtype=float)
    state = traj.rotation_state(t, jacobians=jacobians)
    seg, ddb = traj.position_basis(t, deriv=2)
    a_w = np.einsum("mk,mkd->md", ddb, traj.pos_knots[seg[:, None] + np.arange(traj.order)])
    v = a_w + constants.gravity
    body = np.einsum("mji,mj->mi", state["R"], v)
    r = (body + bias.accel_bias - accel_meas) / weights.accel
    out = {"seg": seg, "r": r, "ddb": ddb}
    if jacobians:
        J = np.matmul(liealg.hat(body)[:, None], state["JR"])  # (m, k, 3, 3)
        out["J_rot"] = J.swapaxes(1, 2) / weights.accel
        out["J_pos"] = (ddb[:, None, :, None]
                        * state["R"].swapaxes(-1, -2)[:, :, None, :]) / weights.accel
    return out


# ---------------------------------------------------------------------------
# single-measurement wrappers (the public per-factor API)


def residual_pose(traj, prior, weights):
    """Whitened 6-vector [rotation ; position] for one pose prior."""
    rbar = prior.pose.rotation.matrix()[None]
    pbar = prior.pose.position[None]
    out = pose_residuals(traj, [prior.t], rbar, pbar, weights)
    return np.concatenate([out["r_rot"][0], out["r_pos"][0]])


def residual_lidar(traj, point, plane, weights):
    """Whitened point-to-plane scalar for one lidar point."""
    out = lidar_residuals(traj, [point.t], point.f[None], plane.normal[None],
                          np.array([plane.offset]), weights)
    return float(out["r"][0])


def residual_gyro(traj, bias, sample, weights):
    out = gyro_residuals(traj, [sample.t], sample.gyro[None], bias, weights)
    return out["r"][0]


def residual_acce(traj, bias, sample, weights, constants):
    out = acce_residuals(traj, [sample.t], sample.accel[None], bias, weights, constants)
    return out["r"][0]


# ---------------------------------------------------------------------------
# deskew and association


def deskew_scan(traj, scan, ref_time):
    """Undistort a scan: map each point through its own-time pose, then into
    the body frame at ref_time. Returns (n, 3) body-frame points."""
    scan = list(scan)
    if not scan:
        return np.zeros((0, 3))
    times = np.array([p.t for p in scan], dtype=float)
    bad = ~traj.contains(times)
    if not traj.contains(ref_time) or np.any(bad):
        n_bad = int(np.sum(bad)) + (0 if traj.contains(ref_time) else 1)
        raise ValueError(
            f"{n_bad} timestamp(s) outside trajectory domain "
            f"[{traj.t0}, {traj.t_end})")
    f = np.array([p.f for p in scan], dtype=float)
    state = traj.rotation_state(times)
    pos = traj.positions(times)
    world = np.einsum("mij,mj->mi", state["R"], f) + pos
    ref = traj.pose_at(ref_time).inverse()
    return (ref.rotation.matrix() @ world.T).T + ref.position


def associate_scan(traj, scan, voxel_map, weights, gate=5.0):
    """Match scan points to map planes under the current trajectory.

    Each point is transformed by its own-time pose and looked up in the
    voxel map; pairs are kept when a plane exists and the whitened residual
    magnitude is within the gate. Output order follows input order.
    """
    scan = [p for p in scan if bool(traj.contains(p.t))]
    if not scan:
        return []
    times = np.array([p.t for p in scan], dtype=float)
    f = np.array([p.f for p in scan], dtype=float)
    state = traj.rotation_state(times)
    pos = traj.positions(times)
    world = np.einsum("mij,mj->mi", state["R"], f) + pos
    planes = voxel_map.query_many(world)
    pairs = []
    for point, x_w, plane in zip(scan, world, planes):
        if plane is None:
            continue
        if abs(plane.distance(x_w)) / weights.lidar <= gate:
            pairs.append((point, plane))
    return pairs
