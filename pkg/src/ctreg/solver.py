"""Damped Gauss-Newton (Levenberg-Marquardt) solver for the four-factor
registration cost, jointly over all spline knots and a constant IMU bias.

State layout: [rotation-knot perturbations (3 per knot) | position knots
(3 per knot) | gyro bias (3) | accel bias (3)]. Every factor touches
``order`` consecutive knots, so the normal equations are banded; they are
assembled sparsely and solved with a sparse LU (dense Cholesky below a
knot-count threshold). Accumulation order is fixed, so identical inputs
produce identical results.

The outer loop alternates point-to-plane re-association with LM until the
association set stabilizes.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg
from scipy.linalg import cho_factor, cho_solve

from . import liealg
from .factors import (ImuBias, acce_residuals, associate_scan, gyro_residuals,
                      lidar_residuals, pose_residuals)
from .trajectory import _quat_exp

log = logging.getLogger(__name__)

DENSE_KNOT_LIMIT = 200


@dataclass
class SolverConfig:
    lm_lambda0: float = 1e-4
    lm_lambda_factor: float = 10.0
    lm_lambda_min: float = 1e-12
    lm_lambda_max: float = 1e8
    max_inner_iterations: int = 50
    max_step_rejections: int = 12
    cost_tolerance: float = 1e-9
    huber_delta: float = 1.0
    association_gate: float = 5.0
    max_outer_iterations: int = 5
    association_stable_fraction: float = 0.99


@dataclass
class SolveReport:
    converged: bool = False
    termination: str = ""
    outer_iterations: int = 0
    inner_iterations: int = 0
    initial_cost: dict = field(default_factory=dict)
    final_cost: dict = field(default_factory=dict)
    factor_counts: dict = field(default_factory=dict)
    wall_time_s: float = 0.0

    def to_dict(self):
        return {
            "converged": self.converged,
            "termination": self.termination,
            "outer_iterations": self.outer_iterations,
            "inner_iterations": self.inner_iterations,
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "factor_counts": self.factor_counts,
            "wall_time_s": self.wall_time_s,
        }


class _Problem:
    """Measurements flattened to arrays for one association epoch."""

    def __init__(self, traj, measurements, voxel_map, weights, constants, cfg):
        self.weights = weights
        self.constants = constants
        self.cfg = cfg
        self.order = traj.order
        self.n_knots = traj.n_knots

        priors = [p for p in measurements.priors if bool(traj.contains(p.t))]
        dropped = len(measurements.priors) - len(priors)
        if dropped:
            log.warning("dropped %d pose prior(s) outside the trajectory domain", dropped)
        self.prior_t = np.array([p.t for p in priors], dtype=float)
        self.prior_R = np.array([p.pose.rotation.matrix() for p in priors]).reshape(-1, 3, 3)
        self.prior_p = np.array([p.pose.position for p in priors]).reshape(-1, 3)

        imu = [s for s in measurements.imu if bool(traj.contains(s.t))]
        if len(imu) != len(measurements.imu):
            log.warning("dropped %d IMU sample(s) outside the trajectory domain",
                        len(measurements.imu) - len(imu))
        self.imu_t = np.array([s.t for s in imu], dtype=float)
        self.imu_gyro = np.array([s.gyro for s in imu], dtype=float).reshape(-1, 3)
        self.imu_accel = np.array([s.accel for s in imu], dtype=float).reshape(-1, 3)

        self.lidar_t = np.zeros(0)
        self.lidar_f = np.zeros((0, 3))
        self.lidar_n = np.zeros((0, 3))
        self.lidar_mu = np.zeros(0)
        self.pair_keys = set()

    def set_associations(self, pairs_per_scan):
        keys = set()
        t, f, n, mu = [], [], [], []
        for scan_idx, pairs in enumerate(pairs_per_scan):
            for point_idx, (point, plane) in enumerate(pairs):
                keys.add((scan_idx, point.t, tuple(np.round(plane.normal, 12))))
                t.append(point.t)
                f.append(point.f)
                n.append(plane.normal)
                mu.append(plane.offset)
        self.lidar_t = np.array(t, dtype=float)
        self.lidar_f = np.array(f, dtype=float).reshape(-1, 3)
        self.lidar_n = np.array(n, dtype=float).reshape(-1, 3)
        self.lidar_mu = np.array(mu, dtype=float)
        self.pair_keys = keys

    def counts(self):
        return {
            "pose": len(self.prior_t),
            "lidar": len(self.lidar_t),
            "gyro": len(self.imu_t),
            "acce": len(self.imu_t),
        }

    # -- cost ------------------------------------------------------------

    def cost(self, traj, bias):
        """Per-family robust cost (Huber on lidar, quadratic elsewhere)."""
        out = {"pose": 0.0, "lidar": 0.0, "gyro": 0.0, "acce": 0.0}
        if len(self.prior_t):
            pr = pose_residuals(traj, self.prior_t, self.prior_R, self.prior_p, self.weights)
            out["pose"] = float(np.sum(pr["r_rot"] ** 2) + np.sum(pr["r_pos"] ** 2))
        if len(self.lidar_t):
            lr = lidar_residuals(traj, self.lidar_t, self.lidar_f, self.lidar_n,
                                 self.lidar_mu, self.weights)
            out["lidar"] = float(np.sum(_huber_rho(lr["r"], self.cfg.huber_delta)))
        if len(self.imu_t):
            gr = gyro_residuals(traj, self.imu_t, self.imu_gyro, bias, self.weights)
            ar = acce_residuals(traj, self.imu_t, self.imu_accel, bias, self.weights,
                                self.constants)
            out["gyro"] = float(np.sum(gr["r"] ** 2))
            out["acce"] = float(np.sum(ar["r"] ** 2))
        out["total"] = out["pose"] + out["lidar"] + out["gyro"] + out["acce"]
        return out

    # -- normal equations -------------------------------------------------

    def normal_equations(self, traj, bias):
        """Assemble H = J^T J and g = J^T r over all factors (IRLS-weighted
        for the robust lidar family). Returns (H sparse CSC, g, cost dict)."""
        k = self.order
        n = self.n_knots
        dim = 6 * n + 6
        rot_off = 0
        pos_off = 3 * n
        bg_off = 6 * n
        ba_off = 6 * n + 3

        rows_all, cols_all, vals_all = [], [], []
        g = np.zeros(dim)
        cost = {"pose": 0.0, "lidar": 0.0, "gyro": 0.0, "acce": 0.0}

        def accumulate(J, r, idx):
            # J: (m, rdim, bdim), r: (m, rdim), idx: (m, bdim) state indices
            blocks = np.einsum("mib,mic->mbc", J, J)
            rhs = np.einsum("mib,mi->mb", J, r)
            np.add.at(g, idx, rhs)
            b = idx.shape[1]
            rows_all.append(np.repeat(idx, b, axis=1).ravel())
            cols_all.append(np.tile(idx, (1, b)).ravel())
            vals_all.append(blocks.ravel())

        ar = np.arange(k)

        if len(self.prior_t):
            pr = pose_residuals(traj, self.prior_t, self.prior_R, self.prior_p,
                                self.weights, jacobians=True)
            m = len(self.prior_t)
            cost["pose"] = float(np.sum(pr["r_rot"] ** 2) + np.sum(pr["r_pos"] ** 2))
            seg = pr["seg"]
            rot_idx = rot_off + (3 * (seg[:, None] + ar))[:, :, None] + np.arange(3)
            rot_idx = rot_idx.reshape(m, 3 * k)
            accumulate(pr["J_rot"].reshape(m, 3, 3 * k), pr["r_rot"], rot_idx)
            pos_idx = pos_off + (3 * (seg[:, None] + ar))[:, :, None] + np.arange(3)
            pos_idx = pos_idx.reshape(m, 3 * k)
            J_pos = (pr["b"][:, None, :, None]
                     * (np.eye(3) / self.weights.pose_pos[:, None])[None, :, None, :])
            accumulate(J_pos.reshape(m, 3, 3 * k), pr["r_pos"], pos_idx)

        if len(self.lidar_t):
            lr = lidar_residuals(traj, self.lidar_t, self.lidar_f, self.lidar_n,
                                 self.lidar_mu, self.weights, jacobians=True)
            m = len(self.lidar_t)
            r = lr["r"]
            cost["lidar"] = float(np.sum(_huber_rho(r, self.cfg.huber_delta)))
            w = np.sqrt(_huber_weight(r, self.cfg.huber_delta))
            seg = lr["seg"]
            J = np.concatenate([lr["J_rot"].reshape(m, 3 * k),
                                lr["J_pos"].reshape(m, 3 * k)], axis=1)
            J = (w[:, None] * J)[:, None, :]
            rw = (w * r)[:, None]
            rot_idx = rot_off + (3 * (seg[:, None] + ar))[:, :, None] + np.arange(3)
            pos_idx = pos_off + (3 * (seg[:, None] + ar))[:, :, None] + np.arange(3)
            idx = np.concatenate([rot_idx.reshape(m, 3 * k), pos_idx.reshape(m, 3 * k)],
                                 axis=1)
            accumulate(J, rw, idx)

        if len(self.imu_t):
            m = len(self.imu_t)
            gr = gyro_residuals(traj, self.imu_t, self.imu_gyro, bias, self.weights,
                                jacobians=True)
            cost["gyro"] = float(np.sum(gr["r"] ** 2))
            seg = gr["seg"]
            rot_idx = (rot_off + (3 * (seg[:, None] + ar))[:, :, None]
                       + np.arange(3)).reshape(m, 3 * k)
            Jb = np.broadcast_to(np.eye(3) / self.weights.gyro, (m, 3, 3))
            J = np.concatenate([gr["J_rot"].reshape(m, 3, 3 * k), Jb], axis=2)
            idx = np.concatenate(
                [rot_idx, np.broadcast_to(bg_off + np.arange(3), (m, 3))], axis=1)
            accumulate(J, gr["r"], idx)

            ac = acce_residuals(traj, self.imu_t, self.imu_accel, bias, self.weights,
                                self.constants, jacobians=True)
            cost["acce"] = float(np.sum(ac["r"] ** 2))
            seg = ac["seg"]
            rot_idx = (rot_off + (3 * (seg[:, None] + ar))[:, :, None]
                       + np.arange(3)).reshape(m, 3 * k)
            pos_idx = (pos_off + (3 * (seg[:, None] + ar))[:, :, None]
                       + np.arange(3)).reshape(m, 3 * k)
            Jb = np.broadcast_to(np.eye(3) / self.weights.accel, (m, 3, 3))
            J = np.concatenate([ac["J_rot"].reshape(m, 3, 3 * k),
                                ac["J_pos"].reshape(m, 3, 3 * k), Jb], axis=2)
            idx = np.concatenate(
                [rot_idx, pos_idx, np.broadcast_to(ba_off + np.arange(3), (m, 3))],
                axis=1)
            accumulate(J, ac["r"], idx)

        cost["total"] = cost["pose"] + cost["lidar"] + cost["gyro"] + cost["acce"]
        if rows_all:
            H = scipy.sparse.coo_matrix(
                (np.concatenate(vals_all),
                 (np.concatenate(rows_all), np.concatenate(cols_all))),
                shape=(dim, dim)).tocsc()
        else:
            H = scipy.sparse.csc_matrix((dim, dim))
        return H, g, cost


def _huber_rho(r, delta):
    a = np.abs(r)
    return np.where(a <= delta, r * r, 2.0 * delta * a - delta * delta)


def _huber_weight(r, delta):
    a = np.abs(r)
    with np.errstate(divide="ignore"):
        return np.where(a <= delta, 1.0, delta / np.maximum(a, delta))


def _retract(traj, bias, delta, n):
    new = traj.copy()
    d_rot = delta[: 3 * n].reshape(n, 3)
    new.rot_knots = liealg.quat_mul(new.rot_knots, _quat_exp(d_rot))
    norms = np.linalg.norm(new.rot_knots, axis=1, keepdims=True)
    new.rot_knots = new.rot_knots / norms
    flip = new.rot_knots[:, 0] < 0
    new.rot_knots[flip] = -new.rot_knots[flip]
    new.pos_knots = new.pos_knots + delta[3 * n: 6 * n].reshape(n, 3)
    new_bias = ImuBias(bias.gyro_bias + delta[6 * n: 6 * n + 3],
                       bias.accel_bias + delta[6 * n + 3:])
    return new, new_bias


def _solve_damped(H, g, lam, n_knots):
    diag = np.asarray(H.diagonal())
    damp = lam * diag + lam * 1e-6 * max(diag.max(initial=0.0), 1.0)
    A = H + scipy.sparse.diags(damp)
    if n_knots < DENSE_KNOT_LIMIT:
        c, low = cho_factor(A.toarray())
        return cho_solve((c, low), -g)
    return scipy.sparse.linalg.splu(A.tocsc()).solve(-g)


def _levenberg_marquardt(problem, traj, bias, cfg):
    """Run LM to convergence on a fixed association set. Mutates nothing;
    returns (traj, bias, cost_dict, n_iterations, termination)."""
    n = traj.n_knots
    cost = problem.cost(traj, bias)
    lam = cfg.lm_lambda0
    termination = "max_iterations"
    it = 0
    while it < cfg.max_inner_iterations:
        it += 1
        H, g, cost = problem.normal_equations(traj, bias)
        accepted = False
        for _ in range(cfg.max_step_rejections):
            try:
                delta = _solve_damped(H, g, lam, n)
            except np.linalg.LinAlgError:
                lam = min(lam * cfg.lm_lambda_factor, cfg.lm_lambda_max)
                continue
            trial_traj, trial_bias = _retract(traj, bias, delta, n)
            trial_cost = problem.cost(trial_traj, trial_bias)
            if trial_cost["total"] <= cost["total"]:
                traj, bias = trial_traj, trial_bias
                lam = max(lam / cfg.lm_lambda_factor, cfg.lm_lambda_min)
                accepted = True
                break
            lam = min(lam * cfg.lm_lambda_factor, cfg.lm_lambda_max)
        if not accepted:
            termination = "no_decrease"
            break
        decrease = cost["total"] - trial_cost["total"]
        cost = trial_cost
        if decrease <= cfg.cost_tolerance * max(cost["total"], 1e-30):
            termination = "cost_tolerance"
            break
        if np.max(np.abs(delta)) < 1e-14:
            termination = "step_size"
            break
    return traj, bias, cost, it, termination


def solve_registration(measurements, voxel_map, init_traj, weights, constants,
                       cfg=None, init_bias=None):
    """Minimize the four-factor cost; returns (trajectory, bias, SolveReport).

    Outer loop: re-associate lidar points against the voxel map at the
    current trajectory, then run LM to convergence; stop when the
    association set is stable or after max_outer_iterations.
    """
    cfg = cfg or SolverConfig()
    t_start = time.perf_counter()
    traj = init_traj.copy()
    bias = (init_bias or ImuBias()).copy()

    all_times = ([p.t for p in measurements.priors]
                 + [s.t for s in measurements.imu]
                 + [p.t for scan in measurements.scans for p in scan])
    if all_times and not np.any(traj.contains(np.array(all_times))):
        raise ValueError("no measurement timestamp overlaps the trajectory domain")

    report = SolveReport()
    problem = _Problem(traj, measurements, voxel_map, weights, constants, cfg)

    termination = "max_outer"
    lm_termination = ""
    prev_keys = None
    for outer in range(cfg.max_outer_iterations):
        report.outer_iterations = outer + 1
        pairs = ([] if voxel_map is None else
                 [associate_scan(traj, scan, voxel_map, weights, cfg.association_gate)
                  for scan in measurements.scans])
        problem.set_associations(pairs)
        if outer == 0:
            report.initial_cost = problem.cost(traj, bias)
            report.factor_counts = problem.counts()
        if prev_keys is not None:
            union = prev_keys | problem.pair_keys
            overlap = (len(prev_keys & problem.pair_keys) / len(union)) if union else 1.0
            if overlap >= cfg.association_stable_fraction:
                termination = "association_stable"
                break
        prev_keys = problem.pair_keys
        traj, bias, cost, inner, lm_termination = _levenberg_marquardt(
            problem, traj, bias, cfg)
        report.inner_iterations += inner
        if lm_termination == "no_decrease" and report.inner_iterations <= 1:
            termination = "no_decrease"
            break
        if not measurements.scans or voxel_map is None:
            termination = "no_lidar"
            break

    report.factor_counts = problem.counts()
    report.final_cost = problem.cost(traj, bias)
    report.termination = termination if termination != "max_outer" else "max_outer"
    report.converged = termination in ("association_stable", "no_lidar") or (
        lm_termination in ("cost_tolerance", "step_size"))
    report.wall_time_s = time.perf_counter() - t_start
    return traj, bias, report
