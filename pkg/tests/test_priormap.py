import numpy as np
import pytest

from ctreg.priormap import (VoxelMap, build_map, fit_plane, read_xyz,
                            voxel_index, write_xyz)


def _plane_points(rng, normal, offset, n=60, spread=0.15):
    normal = np.asarray(normal, dtype=float)
    normal /= np.linalg.norm(normal)
    # two in-plane directions
    a = np.cross(normal, [1.0, 0.0, 0.0])
    if np.linalg.norm(a) < 1e-6:
        a = np.cross(normal, [0.0, 1.0, 0.0])
    a /= np.linalg.norm(a)
    b = np.cross(normal, a)
    uv = rng.uniform(-spread, spread, (n, 2))
    return offset * normal + uv[:, :1] * a + uv[:, 1:] * b


def test_fit_plane_exact(rng):
    n_true = np.array([1.0, 2.0, -0.5])
    n_true /= np.linalg.norm(n_true)
    pts = _plane_points(rng, n_true, 3.0)
    plane = fit_plane(pts)
    assert plane is not None
    assert np.allclose(np.abs(plane.normal @ n_true), 1.0, atol=1e-10)
    assert np.isclose(abs(plane.offset), 3.0, atol=1e-10)
    assert plane.planarity > 0.999
    assert plane.point_count == len(pts)
    assert np.allclose([plane.distance(p) for p in pts], 0, atol=1e-10)


def test_fit_plane_offset_sign_convention(rng):
    # the stored offset mu = n . centroid is canonicalized nonnegative
    for off in (-2.0, 2.0):
        pts = _plane_points(rng, [0.0, 0.0, 1.0], off)
        plane = fit_plane(pts)
        assert plane.offset >= 0


def test_fit_plane_rejects_too_few_points(rng):
    pts = _plane_points(rng, [0, 0, 1], 1.0, n=5)
    assert fit_plane(pts, min_points=6) is None


def test_fit_plane_rejects_thick_cloud(rng):
    pts = _plane_points(rng, [0, 0, 1], 1.0, n=200)
    pts = pts + rng.normal(0, 0.2, pts.shape)  # way above the RMS cap
    assert fit_plane(pts, rms_max=0.05) is None


def test_fit_plane_rejects_nonplanar(rng):
    # isotropic ball: planarity fails even with a loose RMS cap
    pts = rng.normal(0, 0.1, (300, 3))
    assert fit_plane(pts, rms_max=10.0, planarity_min=0.9) is None


def test_fit_plane_accepts_noise_within_tolerance(rng):
    pts = _plane_points(rng, [0, 1, 0], 2.0, n=400, spread=0.19)
    pts = pts + rng.normal(0, 0.01, pts.shape)
    plane = fit_plane(pts)
    assert plane is not None
    assert abs(abs(plane.normal[1]) - 1.0) < 1e-3


def test_voxel_index_floor():
    idx = voxel_index(np.array([[0.39, 0.45, -0.01], [-0.41, 1.25, 0.0]]), 0.4)
    assert list(idx[0]) == [0, 1, -1]
    assert list(idx[1]) == [-2, 3, 0]


def test_build_map_two_walls(rng):
    # two dense parallel walls far apart end up in disjoint voxels
    z_lo = _plane_points(rng, [0, 0, 1], 0.2, n=4000, spread=1.0)
    z_hi = _plane_points(rng, [0, 0, 1], 5.0, n=4000, spread=1.0)
    vmap, stats = build_map(np.vstack([z_lo, z_hi]), voxel_size=0.4,
                            return_stats=True)
    assert len(vmap) > 10
    assert stats.total_points == 8000
    plane = vmap.query(np.array([0.0, 0.0, 0.21]))
    assert plane is not None
    assert abs(abs(plane.normal[2]) - 1.0) < 1e-6
    # query far from any surface finds nothing
    assert vmap.query(np.array([0.0, 0.0, 2.5])) is None


def test_build_map_order_invariance(rng, tmp_path):
    pts = np.vstack([_plane_points(rng, [0, 0, 1], 0.2, n=3000, spread=1.0),
                     _plane_points(rng, [1, 0, 0], 1.7, n=3000, spread=1.0)])
    perm = rng.permutation(len(pts))
    m1 = build_map(pts, voxel_size=0.4)
    m2 = build_map(pts[perm], voxel_size=0.4)
    p1, p2 = tmp_path / "a.vox", tmp_path / "b.vox"
    m1.write(p1)
    m2.write(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_voxelmap_write_read_roundtrip(rng, tmp_path):
    pts = _plane_points(rng, [0, 1, 1], 1.0, n=5000, spread=1.5)
    vmap = build_map(pts, voxel_size=0.4)
    path = tmp_path / "map.vox"
    vmap.write(path)
    back = VoxelMap.read(path)
    assert len(back) == len(vmap)
    assert back.voxel_size == vmap.voxel_size
    for key, plane in vmap.planes.items():
        other = back.planes[key]
        assert np.allclose(other.normal, plane.normal, atol=0)
        assert other.offset == plane.offset


def test_query_many_matches_query(rng):
    pts = _plane_points(rng, [0, 0, 1], 0.2, n=3000, spread=1.0)
    vmap = build_map(pts, voxel_size=0.4)
    probes = rng.uniform(-1, 1, (50, 3))
    many = vmap.query_many(probes)
    for probe, got in zip(probes, many):
        assert got is vmap.query(probe)


def test_xyz_roundtrip(tmp_path, rng):
    pts = rng.standard_normal((17, 3))
    path = tmp_path / "cloud.xyz"
    write_xyz(path, pts)
    back = read_xyz(path)
    assert np.allclose(back, pts, atol=1e-12)


def test_read_xyz_skips_comments(tmp_path):
    path = tmp_path / "cloud.xyz"
    path.write_text("# header\n1 2 3\n\n4 5 6\n")
    pts = read_xyz(path)
    assert pts.shape == (2, 3)


def test_build_map_rejects_bad_voxel_size(rng):
    with pytest.raises(ValueError):
        build_map(rng.standard_normal((10, 3)), voxel_size=0.0)
