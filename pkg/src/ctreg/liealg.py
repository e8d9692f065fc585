"""Batched SO(3) helpers on (..., 3, 3) / (..., 3) numpy arrays.

All functions broadcast over leading axes. Small-angle branches switch to
truncated series below SMALL_ANGLE to avoid cancellation.
"""

import numpy as np

SMALL_ANGLE = 1e-6


def hat(v):
    """Skew-symmetric matrix [v]x such that hat(v) @ w = cross(v, w)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def exp_so3(v):
    """Rotation matrix exp([v]x) via Rodrigues with series fallback."""
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v, axis=-1)
    t2 = theta * theta
    small = theta < SMALL_ANGLE
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(small, 1.0 - t2 / 6.0, np.sin(theta) / np.where(small, 1.0, theta))
        b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(theta)) / np.where(small, 1.0, t2))
    V = hat(v)
    I = np.broadcast_to(np.eye(3), V.shape)
    return I + a[..., None, None] * V + b[..., None, None] * (V @ V)


def quat_to_mat(q):
    """Unit quaternion(s) [w, x, y, z] to rotation matrices."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1 - 2 * (y * y + z * z)
    out[..., 0, 1] = 2 * (x * y - w * z)
    out[..., 0, 2] = 2 * (x * z + w * y)
    out[..., 1, 0] = 2 * (x * y + w * z)
    out[..., 1, 1] = 1 - 2 * (x * x + z * z)
    out[..., 1, 2] = 2 * (y * z - w * x)
    out[..., 2, 0] = 2 * (x * z - w * y)
    out[..., 2, 1] = 2 * (y * z + w * x)
    out[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def mat_to_quat(R):
    """Rotation matrices to unit quaternions [w, x, y, z], w >= 0."""
    R = np.asarray(R, dtype=float)
    shape = R.shape[:-2]
    Rf = R.reshape((-1, 3, 3))
    n = Rf.shape[0]
    q = np.empty((n, 4))
    tr = Rf[:, 0, 0] + Rf[:, 1, 1] + Rf[:, 2, 2]
    # Shepperd's method: pick the numerically largest pivot per matrix.
    cand = np.stack([tr, Rf[:, 0, 0], Rf[:, 1, 1], Rf[:, 2, 2]], axis=1)
    case = np.argmax(cand, axis=1)

    m = case == 0
    if np.any(m):
        s = np.sqrt(tr[m] + 1.0) * 2.0
        q[m, 0] = 0.25 * s
        q[m, 1] = (Rf[m, 2, 1] - Rf[m, 1, 2]) / s
        q[m, 2] = (Rf[m, 0, 2] - Rf[m, 2, 0]) / s
        q[m, 3] = (Rf[m, 1, 0] - Rf[m, 0, 1]) / s
    for axis in (0, 1, 2):
        m = case == axis + 1
        if not np.any(m):
            continue
        i, j, k = axis, (axis + 1) % 3, (axis + 2) % 3
        s = np.sqrt(1.0 + Rf[m, i, i] - Rf[m, j, j] - Rf[m, k, k]) * 2.0
        q[m, 0] = (Rf[m, k, j] - Rf[m, j, k]) / s
        q[m, 1 + i] = 0.25 * s
        q[m, 1 + j] = (Rf[m, j, i] + Rf[m, i, j]) / s
        q[m, 1 + k] = (Rf[m, k, i] + Rf[m, i, k]) / s

    q /= np.linalg.norm(q, axis=1, keepdims=True)
    neg = q[:, 0] < 0
    q[neg] = -q[neg]
    return q.reshape(shape + (4,))


def quat_log(q):
    """Rotation vector (angle in [0, pi]) of unit quaternions [w, x, y, z]."""
    q = np.asarray(q, dtype=float)
    w = np.abs(q[..., 0])
    v = np.where(q[..., :1] < 0, -q[..., 1:], q[..., 1:])
    s = np.linalg.norm(v, axis=-1)
    small = s < SMALL_ANGLE
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = 2.0 * np.arctan2(s, w)
        scale_big = theta / np.where(small, 1.0, s)
        # theta/s -> 2/w * (1 - s^2/(3 w^2)) as s -> 0; w -> 1 there
        ws = np.where(w > 0.5, w, 1.0)
        scale_small = (2.0 / ws) * (1.0 - s * s / (3.0 * ws * ws))
    scale = np.where(small, scale_small, scale_big)
    return scale[..., None] * v


def log_so3(R):
    """Rotation vector of rotation matrices, stable near 0 and pi."""
    return quat_log(mat_to_quat(R))


def jr_so3(v):
    """Right Jacobian of the SO(3) exponential: Exp(v+d) ~ Exp(v) Exp(jr(v) d)."""
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v, axis=-1)
    t2 = theta * theta
    small = theta < SMALL_ANGLE
    with np.errstate(invalid="ignore", divide="ignore"):
        c1 = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(theta)) / np.where(small, 1.0, t2))
        c2 = np.where(small, 1.0 / 6.0 - t2 / 120.0,
                      (theta - np.sin(theta)) / np.where(small, 1.0, t2 * theta))
    V = hat(v)
    I = np.broadcast_to(np.eye(3), V.shape)
    return I - c1[..., None, None] * V + c2[..., None, None] * (V @ V)


def jr_inv_so3(v):
    """Inverse right Jacobian: Log(Exp(v) Exp(d)) ~ v + jr_inv(v) d."""
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v, axis=-1)
    t2 = theta * theta
    small = theta < SMALL_ANGLE
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(
            small,
            1.0 / 12.0 + t2 / 720.0,
            (1.0 / np.where(small, 1.0, t2))
            - (1.0 + np.cos(theta)) / np.where(small, 1.0, 2.0 * theta * np.sin(theta)),
        )
    V = hat(v)
    I = np.broadcast_to(np.eye(3), V.shape)
    return I + 0.5 * V + c[..., None, None] * (V @ V)


def quat_mul(a, b):
    """Hamilton product of quaternions [w, x, y, z]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )
