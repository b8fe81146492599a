import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from pointface.features import compute_features, estimate_curvature, estimate_normals
from pointface.geometry import PointCloud


def _plane(n=400, seed=0):
    rng = np.random.default_rng(seed)
    return PointCloud(np.column_stack([rng.uniform(-1, 1, (n, 2)), np.zeros(n)]))


def _sphere(n=3000, seed=0):
    # Fibonacci lattice: near-uniform, so every neighbourhood looks alike
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5**0.5) * i
    return PointCloud(np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)]))


def test_plane_normals_and_curvature():
    c = compute_features(_plane(), viewpoint=(0, 0, 10))
    np.testing.assert_allclose(c.normals, np.tile([0, 0, 1.0], (len(c), 1)), atol=1e-6)
    assert c.curvature.max() < 1e-6


def test_sphere_normals_radial():
    c = estimate_normals(_sphere(), viewpoint=(0, 0, 100))
    # points facing the viewpoint: the radial direction is the outward normal
    front = c.positions[:, 2] > 0.2
    cosang = (c.normals[front] * c.positions[front]).sum(axis=1)
    assert np.degrees(np.arccos(np.clip(cosang, -1, 1))).max() < 5.0


def test_sphere_curvature_nearly_constant():
    curv = estimate_curvature(_sphere()).curvature
    assert curv.std() / curv.mean() < 0.05


def test_collinear_degenerate():
    c = compute_features(PointCloud(np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]])), k=3)
    assert c.degenerate.all()
    np.testing.assert_array_equal(c.normals, np.tile([0, 0, 1.0], (3, 1)))
    np.testing.assert_array_equal(c.curvature, 0.0)


def test_isotropic_blob_approaches_third():
    # neighbourhood = whole blob, so the covariance is the sample covariance
    for n, floor in ((50, 0.2), (1500, 0.3)):
        pts = np.random.default_rng(n).normal(size=(n, 3))
        curv = estimate_curvature(PointCloud(pts), k=n).curvature
        assert curv.min() > floor and curv.max() <= 1 / 3 + 1e-9


def test_k_too_small():
    with pytest.raises(ValueError, match="need ≥3 neighbors"):
        estimate_normals(_plane(), k=2)


def test_normals_face_viewpoint(small_model):
    from pointface.morphable import synthesize

    c = compute_features(synthesize(small_model))
    view = np.array([0, 0, 1e6])
    assert ((view - c.positions) * c.normals).sum(axis=1).min() >= 0
    np.testing.assert_allclose(np.linalg.norm(c.normals, axis=1), 1.0, atol=1e-12)


def _wavy(seed):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-1, 1, (300, 2))
    return np.column_stack([xy, 0.3 * np.sin(2 * xy[:, 0]) * np.cos(3 * xy[:, 1])])


@given(st.integers(0, 10_000), st.floats(0.1, 10.0))
def test_curvature_rigid_and_scale_invariant(seed, scale):
    pts = _wavy(seed % 50)
    rot = Rotation.random(random_state=seed).as_matrix()
    moved = scale * pts @ rot.T + np.array([3.0, -1.0, 2.0])
    a = estimate_curvature(PointCloud(pts)).curvature
    b = estimate_curvature(PointCloud(moved)).curvature
    np.testing.assert_allclose(a, b, atol=1e-6)


@given(st.integers(0, 10_000))
def test_normals_rotation_equivariant(seed):
    pts = _wavy(seed % 50)
    rot = Rotation.random(random_state=seed).as_matrix()
    view = np.array([0, 0, 1e3])
    a = estimate_normals(PointCloud(pts), viewpoint=view).normals
    b = estimate_normals(PointCloud(pts @ rot.T), viewpoint=rot @ view).normals
    np.testing.assert_allclose(b, a @ rot.T, atol=1e-5)
