"""Continuous-time trajectory as a uniform cumulative B-spline.

Rotation knots interpolate on SO(3) via products of exponentials of knot
increments weighted by cumulative basis functions; position knots use the
standard uniform B-spline blending. Both share timing: knot m sits at
t0 + m*dt and a time t falls in segment i = floor((t - t0)/dt), which is
blended from knots i .. i+order-1. The valid domain is
[t0, t0 + (n_knots - order + 1)*dt).

World-frame angular velocity follows the convention R' = [w_W]x R, so the
body rate seen by a gyro is R^-1 w_W.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb, factorial

import numpy as np

from . import liealg
from .geometry import Pose, Rotation


class DomainError(ValueError):
    """A query time fell outside a trajectory's valid interval."""

    def __init__(self, t, t_min, t_max):
        self.t = t
        self.t_min = t_min
        self.t_max = t_max
        super().__init__(f"time {t} outside trajectory domain [{t_min}, {t_max})")


def blending_matrix(order):
    """Uniform B-spline blending matrix M: basis_s(u) = sum_n M[s, n] u^n."""
    k = order
    M = np.zeros((k, k))
    for s in range(k):
        for n in range(k):
            acc = 0.0
            for l in range(s, k):
                acc += (-1) ** (l - s) * comb(k, l - s) * float(k - 1 - l) ** (k - 1 - n)
            M[s, n] = comb(k - 1, n) / factorial(k - 1) * acc
    return M


def cumulative_blending_matrix(order):
    """Row j holds the polynomial of lambda_j(u) = sum_{s>=j} basis_s(u)."""
    M = blending_matrix(order)
    return np.cumsum(M[::-1], axis=0)[::-1].copy()


def _poly_eval(coeffs, u, deriv=0):
    """Evaluate rows of a (r, k) coefficient matrix at u (m,), optionally
    differentiated ``deriv`` times w.r.t. u. Returns (m, r)."""
    k = coeffs.shape[1]
    c = coeffs.copy()
    for _ in range(deriv):
        c = c[:, 1:] * np.arange(1, c.shape[1])
    if c.shape[1] == 0:
        return np.zeros((len(u), coeffs.shape[0]))
    powers = np.vander(u, c.shape[1], increasing=True)  # (m, deg+1)
    return powers @ c.T


@dataclass
class SplineTrajectory:
    """Uniform cumulative B-spline over rotations and positions.

    rot_knots: (N, 4) unit quaternions [w, x, y, z]
    pos_knots: (N, 3) meters
    """

    t0: float
    dt: float
    order: int
    rot_knots: np.ndarray
    pos_knots: np.ndarray

    def __post_init__(self):
        self.rot_knots = np.atleast_2d(np.asarray(self.rot_knots, dtype=float))
        self.pos_knots = np.atleast_2d(np.asarray(self.pos_knots, dtype=float))
        if self.dt <= 0:
            raise ValueError(f"knot interval must be > 0, got {self.dt}")
        if self.order < 2:
            raise ValueError(f"spline order must be >= 2, got {self.order}")
        n = len(self.rot_knots)
        if len(self.pos_knots) != n:
            raise ValueError("rotation and position knot counts differ")
        if n < self.order:
            raise ValueError(f"need at least {self.order} knots, got {n}")
        norms = np.linalg.norm(self.rot_knots, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("rotation knots must be unit quaternions")
        self.rot_knots = self.rot_knots / norms[:, None]
        flip = self.rot_knots[:, 0] < 0
        self.rot_knots[flip] = -self.rot_knots[flip]
        self._blend = blending_matrix(self.order)
        self._cblend = cumulative_blending_matrix(self.order)[1:]  # rows j=1..k-1

    # -- domain ----------------------------------------------------------

    @property
    def n_knots(self):
        return len(self.pos_knots)

    @property
    def n_segments(self):
        return self.n_knots - self.order + 1

    @property
    def t_end(self):
        return self.t0 + self.n_segments * self.dt

    def domain(self):
        return (self.t0, self.t_end)

    def contains(self, t):
        t = np.asarray(t, dtype=float)
        return (t >= self.t0) & (t < self.t_end)

    def _segments(self, times):
        times = np.asarray(times, dtype=float)
        bad = ~self.contains(times)
        if np.any(bad):
            t_bad = float(np.atleast_1d(times)[np.atleast_1d(bad)][0])
            raise DomainError(t_bad, self.t0, self.t_end)
        x = (times - self.t0) / self.dt
        i = np.minimum(np.floor(x).astype(int), self.n_segments - 1)
        u = x - i
        return i, u

    # -- batched evaluation ---------------------------------------------

    def position_basis(self, times, deriv=0):
        """Segment indices and blended basis weights (m, order); time
        derivatives carry the 1/dt^deriv factor."""
        i, u = self._segments(np.atleast_1d(times))
        b = _poly_eval(self._blend, u, deriv) / self.dt ** deriv
        return i, b

    def positions(self, times, deriv=0):
        i, b = self.position_basis(times, deriv)
        knots = self.pos_knots[i[:, None] + np.arange(self.order)]  # (m, k, 3)
        return np.einsum("mk,mkd->md", b, knots)

    def rotation_state(self, times, jacobians=False):
        """Evaluate rotation matrices and body angular velocity, batched.

        Returns a dict with:
          seg: (m,) segment indices (knots seg .. seg+k-1 are involved)
          R: (m, 3, 3) world-from-body rotations
          omega_body: (m, 3) body angular velocity, rad/s
          JR: (m, k, 3, 3) mapping a right-perturbation of knot m' to the
              right-perturbation of R (only when jacobians=True)
          Jw: (m, k, 3, 3) same for omega_body
        """
        times = np.atleast_1d(times)
        k = self.order
        i, u = self._segments(times)
        lam = _poly_eval(self._cblend, u, 0)            # (m, k-1)
        dlam = _poly_eval(self._cblend, u, 1) / self.dt  # (m, k-1)

        quats = self.rot_knots[i[:, None] + np.arange(k)]   # (m, k, 4)
        Rk = liealg.quat_to_mat(quats)                       # (m, k, 3, 3)
        rel = np.matmul(Rk[:, :-1].swapaxes(-1, -2), Rk[:, 1:])  # Exp(d_j)
        d = liealg.log_so3(rel)                              # (m, k-1, 3)
        A = liealg.exp_so3(lam[..., None] * d)               # (m, k-1, 3, 3)

        R = Rk[:, 0]
        for j in range(k - 1):
            R = R @ A[:, j]

        omega = np.zeros((len(times), 3))
        for j in range(k - 1):
            omega = np.einsum("mji,mj->mi", A[:, j], omega) + dlam[:, j, None] * d[:, j]

        out = {"seg": i, "R": R, "omega_body": omega}
        if not jacobians:
            return out

        jr_lam = liealg.jr_so3(lam[..., None] * d)           # (m, k-1, 3, 3)
        jr_inv_d = liealg.jr_inv_so3(d)                      # (m, k-1, 3, 3)
        B = lam[..., None, None] * np.matmul(jr_lam, jr_inv_d)
        C = -np.matmul(B, rel.swapaxes(-1, -2))
        # D_minus[j] = d d_j / d eps_{j-1} ; D_plus[j] = d d_j / d eps_j
        D_plus = jr_inv_d
        D_minus = -np.matmul(jr_inv_d, rel.swapaxes(-1, -2))

        # P[j] = A_{j+1} ... A_{k-1}; P[0] = full increment product
        P = [None] * k
        P[k - 1] = np.broadcast_to(np.eye(3), R.shape).copy()
        for j in range(k - 2, -1, -1):
            P[j] = A[:, j] @ P[j + 1] if j > 0 else A[:, 0] @ P[1]
        Pt = [p.swapaxes(-1, -2) for p in P]

        JR = np.zeros((len(times), k, 3, 3))
        JR[:, 0] = Pt[0] + Pt[1] @ C[:, 0]
        for m in range(1, k - 1):
            JR[:, m] = Pt[m] @ B[:, m - 1] + Pt[m + 1] @ C[:, m]
        JR[:, k - 1] = B[:, k - 2]

        Jw = np.zeros((len(times), k, 3, 3))
        for j in range(1, k):  # increment index (1-based); arrays use j-1
            lj = dlam[:, j - 1, None, None]
            Jw[:, j] += lj * (Pt[j] @ D_plus[:, j - 1])
            Jw[:, j - 1] += lj * (Pt[j] @ D_minus[:, j - 1])
            w = d[:, j - 1]
            for l in range(j + 1, k):
                w = np.einsum("mji,mj->mi", A[:, l - 1], w)
                PtW = Pt[l] @ liealg.hat(w)
                Jw[:, l] += lj * (PtW @ B[:, l - 1])
                Jw[:, l - 1] += lj * (PtW @ C[:, l - 1])

        out["JR"] = JR
        out["Jw"] = Jw
        return out

    # -- public single/bulk queries -------------------------------------

    def pose_at(self, t) -> Pose:
        """Pose at a single time t (raises DomainError outside the domain)."""
        state = self.rotation_state([t])
        p = self.positions([t])[0]
        return Pose(Rotation.from_matrix(state["R"][0]), p)

    def angular_velocity_world(self, t):
        """World-frame angular velocity (R' = [w]x R) at time t, rad/s."""
        state = self.rotation_state([t])
        return state["R"][0] @ state["omega_body"][0]

    def acceleration_world(self, t):
        """Second time derivative of position at t, m/s^2."""
        return self.positions([t], deriv=2)[0]

    def velocity_world(self, t):
        return self.positions([t], deriv=1)[0]

    def sample(self, times):
        """Poses at the given times; preserves order, any density allowed."""
        times = list(times)
        if not times:
            return []
        for t in times:
            if not bool(self.contains(t)):
                raise DomainError(float(t), self.t0, self.t_end)
        state = self.rotation_state(np.asarray(times, dtype=float))
        pos = self.positions(np.asarray(times, dtype=float))
        quats = liealg.mat_to_quat(state["R"])
        return [(float(t), Pose(Rotation(q), p)) for t, q, p in zip(times, quats, pos)]

    def copy(self):
        return SplineTrajectory(self.t0, self.dt, self.order,
                                self.rot_knots.copy(), self.pos_knots.copy())

    # -- file format -----------------------------------------------------

    def write(self, path):
        """Write the `ctspline v1` text format."""
        with open(path, "w") as f:
            f.write("ctspline v1\n")
            f.write("%.17g %.17g %d %d\n" % (self.t0, self.dt, self.order, self.n_knots))
            for q, p in zip(self.rot_knots, self.pos_knots):
                f.write("%.17g %.17g %.17g %.17g %.17g %.17g %.17g\n"
                        % (q[0], q[1], q[2], q[3], p[0], p[1], p[2]))

    @classmethod
    def read(cls, path):
        from .fileio import FileFormatError

        with open(path) as f:
            lines = [(n + 1, line.strip()) for n, line in enumerate(f)]
        lines = [(n, l) for n, l in lines if l and not l.startswith("#")]
        if not lines or lines[0][1] != "ctspline v1":
            raise FileFormatError(path, lines[0][0] if lines else 1,
                                  "expected 'ctspline v1' header")
        try:
            t0_s, dt_s, order_s, n_s = lines[1][1].split()
            t0, dt, order, n = float(t0_s), float(dt_s), int(order_s), int(n_s)
        except (IndexError, ValueError) as e:
            raise FileFormatError(path, lines[1][0] if len(lines) > 1 else 2,
                                  f"bad header line: {e}") from e
        rows = lines[2:]
        if len(rows) != n:
            raise FileFormatError(path, rows[-1][0] if rows else 3,
                                  f"expected {n} knot lines, found {len(rows)}")
        rot = np.empty((n, 4))
        pos = np.empty((n, 3))
        for idx, (lineno, row) in enumerate(rows):
            vals = row.split()
            if len(vals) != 7:
                raise FileFormatError(path, lineno, "expected 7 values per knot line")
            try:
                v = np.array([float(x) for x in vals])
            except ValueError as e:
                raise FileFormatError(path, lineno, f"non-numeric value: {e}") from e
            rot[idx] = v[:4]
            pos[idx] = v[4:]
        return cls(t0, dt, order, rot, pos)


def knot_reference_times(t0, dt, order, n_knots):
    """Times at which each knot dominates (Greville abscissae): a spline whose
    knots sample a linear motion at these times reproduces that motion."""
    offset = (order - 2) / 2.0
    return t0 + (np.arange(n_knots) - offset) * dt


def fit_from_poses(poses, dt, order=4, damping=1e-12, max_iters=25):
    """Least-squares fit of a spline through timestamped poses.

    poses: sequence of (t, Pose), strictly increasing t. When the problem is
    underdetermined the fit is regularized toward interpolation of the input
    poses at the knot reference times.
    """
    poses = list(poses)
    if len(poses) < 2:
        raise ValueError("need at least 2 poses to fit a spline")
    times = np.array([t for t, _ in poses], dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("pose timestamps must be strictly increasing")
    t0 = float(times[0])
    n_seg = int(np.floor((times[-1] - t0) / dt)) + 1
    n = n_seg + order - 1

    # interpolation targets at the knot reference times
    ref_t = np.clip(knot_reference_times(t0, dt, order, n), times[0], times[-1])
    pos_in = np.array([p.position for _, p in poses])
    quat_in = np.array([p.rotation.q for _, p in poses])
    idx = np.searchsorted(times, ref_t, side="right") - 1
    idx = np.clip(idx, 0, len(times) - 2)
    w = (ref_t - times[idx]) / (times[idx + 1] - times[idx])
    pos0 = pos_in[idx] * (1 - w[:, None]) + pos_in[idx + 1] * w[:, None]
    # slerp between bracketing rotations
    q_a, q_b = quat_in[idx], quat_in[idx + 1]
    rel = liealg.quat_log(liealg.quat_mul(_quat_conj(q_a), q_b))
    rot0 = liealg.quat_mul(q_a, _quat_exp(w[:, None] * rel))

    traj = SplineTrajectory(t0, dt, order, rot0, pos0)

    # position: linear LSQ, lightly damped toward the interpolation targets
    seg, b = traj.position_basis(times)
    A = np.zeros((len(times), n))
    for s in range(order):
        np.add.at(A, (np.arange(len(times)), seg + s), b[:, s])
    scale = max(float(len(times)), 1.0)
    H = A.T @ A + damping * scale * np.eye(n)
    traj.pos_knots = np.linalg.solve(H, A.T @ pos_in + damping * scale * pos0)

    # rotation: damped Gauss-Newton on Log(Rbar^-1 R(t_i))
    Rbar_t = liealg.quat_to_mat(quat_in).swapaxes(-1, -2)
    for _ in range(max_iters):
        state = traj.rotation_state(times, jacobians=True)
        err = liealg.log_so3(Rbar_t @ state["R"])  # (m, 3)
        Jloc = np.matmul(liealg.jr_inv_so3(err)[:, None], state["JR"])  # (m,k,3,3)
        Hr = np.zeros((3 * n, 3 * n))
        gr = np.zeros(3 * n)
        blocks = np.einsum("maij,mbil->majbl", Jloc, Jloc).reshape(len(times), order * 3, order * 3)
        rhs = np.einsum("maij,mi->maj", Jloc, err).reshape(len(times), order * 3)
        cols = 3 * seg[:, None] + np.arange(order * 3)[None, :]
        np.add.at(gr, cols, rhs)
        rows = np.repeat(cols[:, :, None], order * 3, axis=2)
        np.add.at(Hr, (rows, rows.swapaxes(1, 2)), blocks)
        Hr += damping * scale * np.eye(3 * n)
        delta = np.linalg.solve(Hr, -gr).reshape(n, 3)
        dq = _quat_exp(delta)
        traj.rot_knots = liealg.quat_mul(traj.rot_knots, dq)
        norm = np.linalg.norm(traj.rot_knots, axis=1, keepdims=True)
        traj.rot_knots /= norm
        flip = traj.rot_knots[:, 0] < 0
        traj.rot_knots[flip] = -traj.rot_knots[flip]
        if np.max(np.abs(delta)) < 1e-12:
            break
    return traj


def _quat_conj(q):
    out = np.array(q, dtype=float, copy=True)
    out[..., 1:] = -out[..., 1:]
    return out


def _quat_exp(v):
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v, axis=-1, keepdims=True)
    small = theta < liealg.SMALL_ANGLE
    with np.errstate(invalid="ignore", divide="ignore"):
        half = np.where(small, 0.5 - theta * theta / 48.0,
                        np.sin(0.5 * theta) / np.where(small, 1.0, theta))
    w = np.where(small[..., 0], 1.0 - theta[..., 0] ** 2 / 8.0, np.cos(0.5 * theta[..., 0]))
    return np.concatenate([w[..., None], half * v], axis=-1)
