import numpy as np
import pytest

from ctreg.fileio import (FileFormatError, read_imu_csv, read_scan_csv,
                          read_trajectory_tum, write_imu_csv, write_scan_csv,
                          write_trajectory_tum)
from ctreg.geometry import Pose, Rotation


def _poses(rng, n=12):
    out = []
    for i in range(n):
        out.append((0.1 * i, Pose(Rotation.exp(rng.uniform(-1, 1, 3)),
                                  rng.standard_normal(3))))
    return out


def test_tum_roundtrip(tmp_path, rng):
    samples = _poses(rng)
    path = tmp_path / "traj.tum"
    write_trajectory_tum(path, samples)
    back = read_trajectory_tum(path)
    assert len(back) == len(samples)
    for (t0, p0), (t1, p1) in zip(samples, back):
        assert np.isclose(t0, t1, atol=0)
        assert np.allclose(p0.position, p1.position, atol=1e-12)
        assert p0.rotation.angle_to(p1.rotation) < 1e-12


def test_tum_disk_column_order(tmp_path):
    # on disk: t x y z qx qy qz qw
    pose = Pose(Rotation.exp([0.0, 0.0, np.pi / 2]), np.array([1.0, 2.0, 3.0]))
    path = tmp_path / "one.tum"
    write_trajectory_tum(path, [(5.0, pose)])
    fields = [float(v) for v in path.read_text().strip().split()]
    assert len(fields) == 8
    assert fields[0] == 5.0
    assert fields[1:4] == [1.0, 2.0, 3.0]
    s = np.sin(np.pi / 4)
    assert np.allclose(fields[4:], [0.0, 0.0, s, s], atol=1e-12)


def test_tum_rejects_unnormalized_quaternion(tmp_path):
    path = tmp_path / "bad.tum"
    path.write_text("0.0 0 0 0 0 0 0 1.2\n")
    with pytest.raises(FileFormatError):
        read_trajectory_tum(path)


def test_tum_rejects_nonincreasing_time(tmp_path):
    path = tmp_path / "bad.tum"
    path.write_text("1.0 0 0 0 0 0 0 1\n1.0 0 0 0 0 0 0 1\n")
    with pytest.raises(FileFormatError):
        read_trajectory_tum(path)


def test_tum_rejects_short_line(tmp_path):
    path = tmp_path / "bad.tum"
    path.write_text("0.0 1 2 3\n")
    with pytest.raises(FileFormatError):
        read_trajectory_tum(path)


def test_tum_skips_comments_and_blanks(tmp_path):
    path = tmp_path / "c.tum"
    path.write_text("# a comment\n\n0.0 0 0 0 0 0 0 1\n")
    assert len(read_trajectory_tum(path)) == 1


def test_imu_roundtrip(tmp_path, rng):
    t = np.arange(20) * 0.005
    gyro = rng.standard_normal((20, 3))
    accel = rng.standard_normal((20, 3))
    path = tmp_path / "imu.csv"
    write_imu_csv(path, t, gyro, accel)
    t2, g2, a2 = read_imu_csv(path)
    assert np.allclose(t2, t, atol=0)
    assert np.allclose(g2, gyro, atol=1e-12)
    assert np.allclose(a2, accel, atol=1e-12)


def test_imu_rejects_nonincreasing_time(tmp_path):
    path = tmp_path / "imu.csv"
    path.write_text("t,wx,wy,wz,ax,ay,az\n0.1,0,0,0,0,0,0\n0.1,0,0,0,0,0,0\n")
    with pytest.raises(FileFormatError):
        read_imu_csv(path)


def test_imu_rejects_wrong_width(tmp_path):
    path = tmp_path / "imu.csv"
    path.write_text("t,wx,wy,wz,ax,ay,az\n0.1,0,0\n")
    with pytest.raises(FileFormatError):
        read_imu_csv(path)


def test_scan_roundtrip_and_gating(tmp_path, rng):
    t = np.full(30, 1.5)
    pts = rng.uniform(1.0, 3.0, (30, 3))
    pts[0] = [0.01, 0.0, 0.0]       # below min range
    pts[1] = [500.0, 0.0, 0.0]      # beyond max range
    path = tmp_path / "scan.csv"
    write_scan_csv(path, t, pts)
    t2, p2, gated = read_scan_csv(path, range_min=0.5, range_max=120.0)
    assert gated == 2
    assert len(p2) == 28
    assert np.allclose(p2, pts[2:], atol=1e-12)
    assert np.allclose(t2, 1.5)


def test_scan_no_gating_when_in_range(tmp_path, rng):
    t = np.linspace(0, 0.1, 10)
    pts = rng.uniform(1.0, 3.0, (10, 3))
    path = tmp_path / "scan.csv"
    write_scan_csv(path, t, pts)
    _, p2, gated = read_scan_csv(path)
    assert gated == 0
    assert len(p2) == 10


def test_scan_rejects_nonnumeric(tmp_path):
    path = tmp_path / "scan.csv"
    path.write_text("t,x,y,z\n0.0,1.0,abc,2.0\n")
    with pytest.raises(FileFormatError):
        read_scan_csv(path)


def test_error_reports_path_and_line(tmp_path):
    path = tmp_path / "bad.tum"
    path.write_text("0.0 0 0 0 0 0 0 1\nbroken line here\n")
    with pytest.raises(FileFormatError) as e:
        read_trajectory_tum(path)
    msg = str(e.value)
    assert "bad.tum" in msg
    assert "2" in msg
