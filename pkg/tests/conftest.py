import numpy as np
import pytest

from ctreg.geometry import Rotation
from ctreg.trajectory import SplineTrajectory


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def random_trajectory(rng, n_knots=10, dt=0.1, t0=0.0, rot_step=0.2,
                      pos_step=0.3, order=4):
    """A smooth random spline: knots follow a random walk with bounded
    increments so adjacent rotation knots stay well inside the log map."""
    rot = np.zeros((n_knots, 4))
    r = Rotation.exp(rng.uniform(-1, 1, 3))
    for m in range(n_knots):
        rot[m] = r.q
        r = r @ Rotation.exp(rng.uniform(-rot_step, rot_step, 3))
    pos = np.cumsum(rng.uniform(-pos_step, pos_step, (n_knots, 3)), axis=0)
    return SplineTrajectory(t0, dt, order, rot, pos)


def domain_times(traj, n, margin=1e-6):
    """Evenly spaced sample times strictly inside the half-open domain."""
    t0, t1 = traj.domain()
    return np.linspace(t0 + margin, t1 - margin, n)
