"""Synthetic scenario generator: known ground-truth spline, planar world,
and measurements produced by inverting the exact residual models, so the
zero-noise global minimum is the generating trajectory and injected bias.

Randomness uses counter-based Philox streams keyed on (seed, stream id),
so results are reproducible across platforms and independent per stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import liealg
from .factors import (ImuBias, ImuSample, LidarPoint, MeasurementSet,
                      PosePrior, WorldConstants)
from .geometry import Pose, Rotation
from .trajectory import SplineTrajectory

_STREAM_WORLD = 0
_STREAM_IMU = 1
_STREAM_LIDAR = 2
_STREAM_PRIOR = 3

TRAJECTORY_STYLES = ("stationary", "constant-velocity", "figure-eight")


@dataclass
class Plane:
    """Rectangle origin + a*u + b*v for a, b in [0, 1]."""

    origin: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)

    @property
    def area(self):
        return float(np.linalg.norm(np.cross(self.u, self.v)))


def box_walls(extent, center=(0.17, 0.17, 0.17)):
    """The six inner faces of an axis-aligned cube of side ``extent``.

    The default center keeps the faces off multiples of common voxel sizes;
    faces lying exactly on voxel boundaries make point-to-voxel association
    unstable to rounding.
    """
    h = extent / 2.0
    e = extent
    c = np.asarray(center, dtype=float)
    return [
        Plane(c + [-h, -h, -h], [e, 0, 0], [0, e, 0]),   # floor
        Plane(c + [-h, -h, +h], [e, 0, 0], [0, e, 0]),   # ceiling
        Plane(c + [-h, -h, -h], [0, e, 0], [0, 0, e]),   # wall -x
        Plane(c + [+h, -h, -h], [0, e, 0], [0, 0, e]),   # wall +x
        Plane(c + [-h, -h, -h], [e, 0, 0], [0, 0, e]),   # wall -y
        Plane(c + [-h, +h, -h], [e, 0, 0], [0, 0, e]),   # wall +y
    ]


@dataclass
class ScenarioSpec:
    duration: float = 30.0
    world_extent: float = 20.0
    planes: list = None  # default: box walls of world_extent
    trajectory_style: str = "figure-eight"
    point_density: float = 80.0     # world points per m^2
    lidar_noise: float = 0.0        # range std-dev, m
    gyro_noise: float = 0.0         # rad/s
    accel_noise: float = 0.0        # m/s^2
    bias: ImuBias = field(default_factory=ImuBias)
    imu_rate: float = 200.0         # Hz
    lidar_rate: float = 2000.0      # points per second
    scan_rate: float = 10.0         # scans per second
    prior_rate: float = 1.0         # Hz
    prior_pos_noise: float = 0.0    # m
    prior_rot_noise: float = 0.0    # rad
    knot_interval: float = 0.1
    order: int = 4
    speed: float = 2.0              # m/s, for constant-velocity style
    seed: int = 0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be > 0")
        if min(self.imu_rate, self.lidar_rate, self.scan_rate, self.prior_rate) <= 0:
            raise ValueError("rates must be > 0")
        if min(self.lidar_noise, self.gyro_noise, self.accel_noise,
               self.prior_pos_noise, self.prior_rot_noise) < 0:
            raise ValueError("noise std-devs must be >= 0")
        if self.trajectory_style not in TRAJECTORY_STYLES:
            raise ValueError(f"unknown trajectory style {self.trajectory_style!r}")
        if self.planes is None:
            self.planes = box_walls(self.world_extent)


def _rng(spec, stream):
    return np.random.Generator(np.random.Philox(key=[spec.seed, stream]))


def make_world(spec):
    """Uniform surface sampling of every plane; deterministic under seed."""
    if not spec.planes:
        raise ValueError("scenario needs at least one plane")
    rng = _rng(spec, _STREAM_WORLD)
    clouds = []
    for plane in spec.planes:
        if plane.area <= 0:
            raise ValueError("zero-area plane in scenario")
        n = max(1, int(round(spec.point_density * plane.area)))
        ab = rng.random((n, 2))
        clouds.append(plane.origin + ab[:, :1] * plane.u + ab[:, 1:] * plane.v)
    return np.concatenate(clouds, axis=0)


def make_trajectory(spec):
    """Ground-truth spline for the requested style, with a one-knot-interval
    domain margin on both sides of [0, duration]."""
    dt = spec.knot_interval
    k = spec.order
    margin = 2 * dt
    t0 = -margin
    n_seg = int(np.ceil((spec.duration + 2 * margin) / dt)) + 1
    n = n_seg + k - 1
    # knot m dominates around time t0 + (m - (k-2)/2) dt
    tk = t0 + (np.arange(n) - (k - 2) / 2.0) * dt

    if spec.trajectory_style == "stationary":
        pos = np.tile(np.array([0.0, 0.0, 0.0]), (n, 1))
        rot = np.tile(Rotation.identity().q, (n, 1))
    elif spec.trajectory_style == "constant-velocity":
        v = np.array([spec.speed, 0.0, 0.0])
        start = -v * spec.duration / 2.0
        pos = start + tk[:, None] * v
        rot = np.tile(Rotation.identity().q, (n, 1))
    else:  # figure-eight
        A = spec.world_extent / 4.0
        w1 = 2 * np.pi / max(spec.duration / 2.0, 8.0)
        x = A * np.sin(w1 * tk)
        y = 0.6 * A * np.sin(2 * w1 * tk)
        z = 0.15 * A * np.sin(w1 * tk + 0.7)
        pos = np.stack([x, y, z], axis=1)
        yaw = np.arctan2(1.2 * A * w1 * np.cos(2 * w1 * tk), A * w1 * np.cos(w1 * tk))
        yaw = np.unwrap(yaw)
        pitch = 0.25 * np.sin(w1 * tk + 0.3)
        roll = 0.2 * np.sin(2 * w1 * tk + 1.1)
        rot = np.zeros((n, 4))
        for m in range(n):
            r = (Rotation.exp([0, 0, yaw[m]]) @ Rotation.exp([0, pitch[m], 0])
                 @ Rotation.exp([roll[m], 0, 0]))
            rot[m] = r.q
    return SplineTrajectory(t0, dt, k, rot, pos)


def simulate_measurements(traj, world, spec, constants=None):
    """Generate a MeasurementSet consistent with the residual models.

    Gyro/accel measurements satisfy the factor equations at (traj,
    spec.bias) up to the injected noise; lidar points are world surface
    points pulled into the body frame at their own timestamps with range
    noise along the ray; pose priors are perturbed truth samples.
    """
    constants = constants or WorldConstants()
    if traj.t0 > 0 or traj.t_end < spec.duration:
        raise ValueError("trajectory domain must cover [0, duration]")
    world = np.asarray(world, dtype=float)
    half = spec.world_extent / 2.0
    t_check = np.linspace(0.0, spec.duration * (1 - 1e-9), 64)
    if np.any(np.abs(traj.positions(t_check)) > half):
        import warnings

        warnings.warn("trajectory exits the world bounding volume")

    # IMU
    rng = _rng(spec, _STREAM_IMU)
    t_imu = np.arange(0.0, spec.duration, 1.0 / spec.imu_rate)
    state = traj.rotation_state(t_imu)
    a_w = traj.positions(t_imu, deriv=2)
    gyro = (state["omega_body"] + spec.bias.gyro_bias
            + spec.gyro_noise * rng.standard_normal((len(t_imu), 3)))
    accel_body = np.einsum("mji,mj->mi", state["R"], a_w + constants.gravity)
    accel = (accel_body + spec.bias.accel_bias
             + spec.accel_noise * rng.standard_normal((len(t_imu), 3)))
    imu = [ImuSample(float(t_imu[i]), gyro[i], accel[i]) for i in range(len(t_imu))]

    # lidar scans
    rng = _rng(spec, _STREAM_LIDAR)
    scans = []
    n_scans = int(np.ceil(spec.duration * spec.scan_rate))
    pts_per_scan = max(1, int(round(spec.lidar_rate / spec.scan_rate)))
    for s in range(n_scans):
        t_start = s / spec.scan_rate
        t_span = min(1.0 / spec.scan_rate, spec.duration - t_start)
        times = t_start + np.linspace(0.0, t_span, pts_per_scan, endpoint=False)
        picks = rng.integers(0, len(world), size=pts_per_scan)
        noise = spec.lidar_noise * rng.standard_normal(pts_per_scan)
        st = traj.rotation_state(times)
        pos = traj.positions(times)
        f = np.einsum("mji,mj->mi", st["R"], world[picks] - pos)
        rngs = np.linalg.norm(f, axis=1)
        keep = rngs > 1e-9
        f = f + (noise / np.maximum(rngs, 1e-9))[:, None] * f
        scans.append([LidarPoint(float(t), fi)
                      for t, fi, k in zip(times, f, keep) if k])

    # pose priors
    rng = _rng(spec, _STREAM_PRIOR)
    t_priors = np.arange(0.0, spec.duration + 1e-9, 1.0 / spec.prior_rate)
    t_priors = t_priors[t_priors < traj.t_end]
    priors = []
    for t in t_priors:
        pose = traj.pose_at(float(t))
        drot = Rotation.exp(spec.prior_rot_noise * rng.standard_normal(3))
        dpos = spec.prior_pos_noise * rng.standard_normal(3)
        priors.append(PosePrior(float(t), Pose(pose.rotation @ drot,
                                               pose.position + dpos)))

    return MeasurementSet(scans=scans, imu=imu, priors=priors)
