"""Continuous-time lidar-inertial trajectory registration.

Estimates a cumulative B-spline trajectory plus constant IMU biases by
jointly minimizing pose-prior, point-to-plane lidar, gyroscope, and
accelerometer residuals against a voxelized prior map.
"""

from .geometry import Pose, Rotation
from .trajectory import DomainError, SplineTrajectory, fit_from_poses
from .priormap import VoxelMap, VoxelPlane, build_map
from .factors import (FactorWeights, ImuBias, ImuSample, LidarPoint,
                      MeasurementSet, PosePrior, WorldConstants,
                      associate_scan, deskew_scan)
from .solver import SolverConfig, SolveReport, solve_registration
from .estimator import SplineRegistration
from .evaluation import AteReport, compute_ate, umeyama_align, velocity_stats
from .synth import ScenarioSpec, make_trajectory, make_world, simulate_measurements
from .config import RegistrationConfig, load_registration_config, load_scenario_spec

__version__ = "0.1.0"

__all__ = [
    "Pose", "Rotation",
    "DomainError", "SplineTrajectory", "fit_from_poses",
    "VoxelMap", "VoxelPlane", "build_map",
    "FactorWeights", "ImuBias", "ImuSample", "LidarPoint", "MeasurementSet",
    "PosePrior", "WorldConstants", "associate_scan", "deskew_scan",
    "SolverConfig", "SolveReport", "solve_registration",
    "SplineRegistration",
    "AteReport", "compute_ate", "umeyama_align", "velocity_stats",
    "ScenarioSpec", "make_trajectory", "make_world", "simulate_measurements",
    "RegistrationConfig", "load_registration_config", "load_scenario_spec",
]
