"""Rotation and rigid-transform value types.

Rotations are stored as unit quaternions [w, x, y, z], canonicalized to
w >= 0 so a rotation has a single representative. All operations are
side-effect free.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import liealg


def _check_finite(name, value):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return arr


class Rotation:
    """A 3D rotation backed by a unit quaternion (w >= 0)."""

    __slots__ = ("q",)

    def __init__(self, q):
        q = _check_finite("quaternion", q)
        if q.shape != (4,):
            raise ValueError(f"quaternion must have 4 components, got shape {q.shape}")
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-3:
            raise ValueError(f"quaternion norm {n} deviates too far from 1")
        q = q / n
        if q[0] < 0:
            q = -q
        self.q = q

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def exp(cls, omega):
        """Exponential map: rotation by |omega| radians about omega."""
        omega = _check_finite("rotation vector", omega)
        theta = np.linalg.norm(omega)
        if theta < liealg.SMALL_ANGLE:
            # 2nd-order series for sin(t/2)/t and cos(t/2)
            half = 0.5 - theta * theta / 48.0
            w = 1.0 - theta * theta / 8.0
            return cls(np.concatenate([[w], half * omega]))
        w = np.cos(0.5 * theta)
        xyz = np.sin(0.5 * theta) / theta * omega
        return cls(np.concatenate([[w], xyz]))

    @classmethod
    def from_matrix(cls, R):
        return cls(liealg.mat_to_quat(np.asarray(R, dtype=float)))

    def log(self):
        """Principal rotation vector, magnitude in [0, pi]."""
        return liealg.quat_log(self.q)

    def matrix(self):
        return liealg.quat_to_mat(self.q)

    def inverse(self):
        q = self.q
        return Rotation(np.array([q[0], -q[1], -q[2], -q[3]]))

    def __matmul__(self, other):
        if isinstance(other, Rotation):
            return Rotation(liealg.quat_mul(self.q, other.q))
        return NotImplemented

    def apply(self, x):
        x = _check_finite("vector", x)
        return self.matrix() @ x

    def angle_to(self, other):
        """Geodesic angle in radians between two rotations."""
        return float(np.linalg.norm((self.inverse() @ other).log()))

    def __repr__(self):
        return f"Rotation(q={self.q.tolist()})"


def rot_exp(omega):
    """Module-level alias for Rotation.exp."""
    return Rotation.exp(omega)


def rot_log(r):
    """Module-level alias for Rotation.log."""
    return r.log()


@dataclass(frozen=True)
class Pose:
    """Rigid transform: x -> rotation * x + position."""

    rotation: Rotation = field(default_factory=Rotation.identity)
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        p = _check_finite("position", self.position)
        if p.shape != (3,):
            raise ValueError(f"position must be a 3-vector, got shape {p.shape}")
        object.__setattr__(self, "position", p)

    @classmethod
    def identity(cls):
        return cls(Rotation.identity(), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation,
                    self.rotation.apply(other.position) + self.position)

    def inverse(self) -> "Pose":
        rinv = self.rotation.inverse()
        return Pose(rinv, -rinv.apply(self.position))

    def apply(self, x):
        return self.rotation.apply(x) + self.position


def pose_compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def pose_inverse(a: Pose) -> Pose:
    return a.inverse()


def pose_apply(a: Pose, x):
    return a.apply(x)
