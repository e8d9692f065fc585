"""Scikit-learn-style front door for the registration solver.

``SplineRegistration`` is a fit/predict estimator: ``fit`` consumes a
MeasurementSet and a VoxelMap and estimates the continuous-time trajectory
plus IMU biases; ``predict`` samples poses at arbitrary times.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .factors import FactorWeights, WorldConstants
from .solver import SolverConfig, solve_registration
from .trajectory import fit_from_poses


class SplineRegistration(BaseEstimator):
    """Continuous-time trajectory registration against a voxelized prior map.

    Parameters mirror the pipeline configuration; all are plain values so
    ``get_params`` / ``set_params`` / ``clone`` behave as usual.

    After ``fit``: ``trajectory_`` (SplineTrajectory), ``bias_`` (ImuBias),
    ``report_`` (SolveReport).
    """

    def __init__(self, dt=0.1, order=4, pose_rot_std=0.01, pose_pos_std=0.1,
                 lidar_std=0.05, gyro_std=0.01, accel_std=0.1,
                 gravity=(0.0, 0.0, 9.81), huber_delta=1.0,
                 association_gate=5.0, max_outer_iterations=5,
                 max_inner_iterations=50, cost_tolerance=1e-9):
        self.dt = dt
        self.order = order
        self.pose_rot_std = pose_rot_std
        self.pose_pos_std = pose_pos_std
        self.lidar_std = lidar_std
        self.gyro_std = gyro_std
        self.accel_std = accel_std
        self.gravity = gravity
        self.huber_delta = huber_delta
        self.association_gate = association_gate
        self.max_outer_iterations = max_outer_iterations
        self.max_inner_iterations = max_inner_iterations
        self.cost_tolerance = cost_tolerance

    def _weights(self):
        return FactorWeights(pose_rot=np.full(3, self.pose_rot_std),
                             pose_pos=np.full(3, self.pose_pos_std),
                             lidar=self.lidar_std, gyro=self.gyro_std,
                             accel=self.accel_std)

    def fit(self, measurements, voxel_map=None, init=None):
        """Estimate the trajectory and biases.

        measurements: MeasurementSet. voxel_map: VoxelMap or None (priors
        and IMU only). init: SplineTrajectory; defaults to a spline fitted
        through the pose priors.
        """
        if init is None:
            if len(measurements.priors) < 2:
                raise ValueError("need an init trajectory or >= 2 pose priors")
            init = fit_from_poses([(p.t, p.pose) for p in measurements.priors],
                                  self.dt, self.order)
        cfg = SolverConfig(huber_delta=self.huber_delta,
                           association_gate=self.association_gate,
                           max_outer_iterations=self.max_outer_iterations,
                           max_inner_iterations=self.max_inner_iterations,
                           cost_tolerance=self.cost_tolerance)
        traj, bias, report = solve_registration(
            measurements, voxel_map, init, self._weights(),
            WorldConstants(gravity=np.asarray(self.gravity, dtype=float)), cfg)
        self.trajectory_ = traj
        self.bias_ = bias
        self.report_ = report
        return self

    def predict(self, times):
        """Poses at the requested times as an (n, 7) array
        [x, y, z, qw, qx, qy, qz]."""
        self._check_fitted()
        samples = self.trajectory_.sample(np.asarray(times, dtype=float))
        out = np.empty((len(samples), 7))
        for i, (_, pose) in enumerate(samples):
            out[i, :3] = pose.position
            out[i, 3:] = pose.rotation.q
        return out

    def score(self, times, reference):
        """Negative position RMSE against reference poses (n, 3) at the
        given times (higher is better, sklearn convention)."""
        self._check_fitted()
        pred = self.predict(times)[:, :3]
        reference = np.asarray(reference, dtype=float)
        return -float(np.sqrt(np.mean(np.sum((pred - reference) ** 2, axis=1))))

    def _check_fitted(self):
        if not hasattr(self, "trajectory_"):
            raise NotFittedError("SplineRegistration is not fitted yet")
