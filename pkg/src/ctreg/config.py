"""INI config files for the registration pipeline and the scenario
generator. Every numeric default lives here; CLI flags override."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

import numpy as np

from .factors import FactorWeights, ImuBias, WorldConstants
from .priormap import (DEFAULT_MIN_POINTS, DEFAULT_PLANARITY_MIN,
                       DEFAULT_RMS_MAX, DEFAULT_VOXEL_SIZE)
from .solver import SolverConfig
from .synth import ScenarioSpec


@dataclass
class RegistrationConfig:
    weights: FactorWeights = field(default_factory=FactorWeights)
    constants: WorldConstants = field(default_factory=WorldConstants)
    solver: SolverConfig = field(default_factory=SolverConfig)
    spline_dt: float = 0.1
    spline_order: int = 4
    voxel_size: float = DEFAULT_VOXEL_SIZE
    voxel_min_points: int = DEFAULT_MIN_POINTS
    voxel_planarity_min: float = DEFAULT_PLANARITY_MIN
    voxel_rms_max: float = DEFAULT_RMS_MAX
    range_min: float = 0.5
    range_max: float = 120.0


def _vector(text):
    return np.array([float(v) for v in text.replace(",", " ").split()])


def load_registration_config(path=None):
    """Read a RegistrationConfig from an INI file; missing keys keep
    defaults. ``path=None`` returns pure defaults."""
    cfg = RegistrationConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path) as f:
        parser.read_file(f)

    if parser.has_section("weights"):
        s = parser["weights"]
        cfg.weights = FactorWeights(
            pose_rot=_vector(s.get("pose_rot", "0.01")) * np.ones(3),
            pose_pos=_vector(s.get("pose_pos", "0.1")) * np.ones(3),
            lidar=s.getfloat("lidar", 0.05),
            gyro=s.getfloat("gyro", 0.01),
            accel=s.getfloat("accel", 0.1),
        )
    if parser.has_section("world"):
        cfg.constants = WorldConstants(
            gravity=_vector(parser["world"].get("gravity", "0 0 9.81")))
    if parser.has_section("spline"):
        s = parser["spline"]
        cfg.spline_dt = s.getfloat("dt", cfg.spline_dt)
        cfg.spline_order = s.getint("order", cfg.spline_order)
    if parser.has_section("voxel"):
        s = parser["voxel"]
        cfg.voxel_size = s.getfloat("size", cfg.voxel_size)
        cfg.voxel_min_points = s.getint("min_points", cfg.voxel_min_points)
        cfg.voxel_planarity_min = s.getfloat("planarity_min", cfg.voxel_planarity_min)
        cfg.voxel_rms_max = s.getfloat("rms_max", cfg.voxel_rms_max)
    if parser.has_section("lidar"):
        s = parser["lidar"]
        cfg.range_min = s.getfloat("range_min", cfg.range_min)
        cfg.range_max = s.getfloat("range_max", cfg.range_max)
    if parser.has_section("solver"):
        s = parser["solver"]
        sc = cfg.solver
        cfg.solver = SolverConfig(
            lm_lambda0=s.getfloat("lambda0", sc.lm_lambda0),
            lm_lambda_factor=s.getfloat("lambda_factor", sc.lm_lambda_factor),
            max_inner_iterations=s.getint("max_inner_iterations", sc.max_inner_iterations),
            cost_tolerance=s.getfloat("cost_tolerance", sc.cost_tolerance),
            huber_delta=s.getfloat("huber_delta", sc.huber_delta),
            association_gate=s.getfloat("association_gate", sc.association_gate),
            max_outer_iterations=s.getint("max_outer_iterations", sc.max_outer_iterations),
            association_stable_fraction=s.getfloat(
                "association_stable_fraction", sc.association_stable_fraction),
        )
    return cfg


def load_scenario_spec(path=None):
    """Read a ScenarioSpec from an INI file (sections: scenario, noise,
    bias, rates, priors)."""
    spec = ScenarioSpec()
    if path is None:
        return spec
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path) as f:
        parser.read_file(f)
    kwargs = {}
    if parser.has_section("scenario"):
        s = parser["scenario"]
        kwargs["duration"] = s.getfloat("duration", spec.duration)
        kwargs["world_extent"] = s.getfloat("world_extent", spec.world_extent)
        kwargs["trajectory_style"] = s.get("trajectory_style", spec.trajectory_style)
        kwargs["point_density"] = s.getfloat("point_density", spec.point_density)
        kwargs["seed"] = s.getint("seed", spec.seed)
        kwargs["speed"] = s.getfloat("speed", spec.speed)
        kwargs["knot_interval"] = s.getfloat("knot_interval", spec.knot_interval)
        kwargs["order"] = s.getint("order", spec.order)
    if parser.has_section("noise"):
        s = parser["noise"]
        kwargs["lidar_noise"] = s.getfloat("lidar", spec.lidar_noise)
        kwargs["gyro_noise"] = s.getfloat("gyro", spec.gyro_noise)
        kwargs["accel_noise"] = s.getfloat("accel", spec.accel_noise)
    if parser.has_section("bias"):
        s = parser["bias"]
        kwargs["bias"] = ImuBias(
            gyro_bias=_vector(s.get("gyro", "0 0 0")) * np.ones(3),
            accel_bias=_vector(s.get("accel", "0 0 0")) * np.ones(3),
        )
    if parser.has_section("rates"):
        s = parser["rates"]
        kwargs["imu_rate"] = s.getfloat("imu", spec.imu_rate)
        kwargs["lidar_rate"] = s.getfloat("lidar_points", spec.lidar_rate)
        kwargs["scan_rate"] = s.getfloat("scan", spec.scan_rate)
        kwargs["prior_rate"] = s.getfloat("prior", spec.prior_rate)
    if parser.has_section("priors"):
        s = parser["priors"]
        kwargs["prior_pos_noise"] = s.getfloat("pos_noise", spec.prior_pos_noise)
        kwargs["prior_rot_noise"] = s.getfloat("rot_noise", spec.prior_rot_noise)
    return ScenarioSpec(**kwargs)
