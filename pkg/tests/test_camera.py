import numpy as np
import pytest

from layersplat.camera import (
    compose_projection,
    matrix_to_quaternion,
    quaternions_to_matrices,
    transform_gaussians,
)
from layersplat.renderer import render
from layersplat.synthetic import random_rig, random_scene
from layersplat.types import Camera, DomainError, Extrinsics, Intrinsics


def _rot(axis, angle):
    a = np.asarray(axis, dtype=float)
    a /= np.linalg.norm(a)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def test_projection_is_identity_when_src_equals_tgt():
    cam = Camera(
        Intrinsics(fx=500.0, fy=480.0, cx=320.0, cy=240.0),
        Extrinsics.from_rt(_rot([0, 1, 0], 0.3), [0.2, -0.1, 0.5]),
    )
    p = compose_projection(cam, cam)
    assert np.allclose(p.matrix, np.eye(4), atol=1e-9)


def test_projection_matches_stated_product():
    rng = np.random.default_rng(0)
    src = random_rig(rng, 32, 32)
    tgt = random_rig(rng, 32, 32)
    p = compose_projection(src, tgt)
    expected = (
        tgt.intrinsics.matrix4()
        @ tgt.extrinsics.matrix
        @ np.linalg.inv(src.extrinsics.matrix)
        @ np.linalg.inv(src.intrinsics.matrix4())
    )
    assert np.allclose(p.matrix, expected, atol=1e-9)
    assert np.isfinite(np.linalg.cond(p.matrix))


def test_translation_parallax_shift():
    # Hand-computed pinhole parallax: a +0.1 m lateral camera move shifts
    # a depth-z point by fx * 0.1 / z pixels in the image.
    k = Intrinsics(fx=100.0, fy=100.0, cx=16.0, cy=16.0)
    src = Camera(k, Extrinsics.identity())
    tgt = Camera(k, Extrinsics.from_rt(np.eye(3), [0.1, 0.0, 0.0]))
    p = compose_projection(src, tgt)
    for z in (1.0, 2.0, 5.0):
        point = np.array([0.3, -0.2, z, 1.0])
        # Where the source camera itself sees the point:
        u_src = k.fx * point[0] / z + k.cx
        h = p.matrix @ k.matrix4() @ point
        u_tgt = h[0] / h[2]
        assert u_tgt - u_src == pytest.approx(k.fx * 0.1 / z, rel=1e-10)


def test_factored_equals_composed_on_random_points():
    rng = np.random.default_rng(1)
    for _ in range(5):
        src = random_rig(rng, 64, 64)
        tgt = random_rig(rng, 64, 64)
        p = compose_projection(src, tgt)
        pts = rng.uniform(-1, 1, (100, 4))
        pts[:, 2] = rng.uniform(1, 4, 100)
        pts[:, 3] = 1.0
        seq = (
            pts
            @ np.linalg.inv(src.intrinsics.matrix4()).T
            @ np.linalg.inv(src.extrinsics.matrix).T
            @ tgt.extrinsics.matrix.T
            @ tgt.intrinsics.matrix4().T
        )
        direct = pts @ p.matrix.T
        assert np.allclose(direct, seq, rtol=1e-6, atol=1e-9)


def test_singular_intrinsics_rejected():
    with pytest.raises(DomainError):
        Intrinsics(fx=0.0, fy=1.0, cx=0.0, cy=0.0)


def test_transform_identity_projection_is_noop():
    rng = np.random.default_rng(2)
    scene = random_scene(6, rng)
    cam = Camera(Intrinsics(1.0, 1.0, 0.0, 0.0), Extrinsics.identity())
    csg = transform_gaussians(scene, compose_projection(cam, cam))
    assert np.allclose(csg.positions, scene.positions, atol=1e-12)
    assert np.allclose(csg.scales, scene.scales)
    # Quaternions may flip sign; compare rotation matrices.
    assert np.allclose(
        quaternions_to_matrices(csg.rotations),
        quaternions_to_matrices(scene.rotations),
        atol=1e-12,
    )
    assert not csg.behind.any()


def test_pure_rotation_preserves_scale_spectrum():
    rng = np.random.default_rng(3)
    scene = random_scene(5, rng)
    k = Intrinsics(1.0, 1.0, 0.0, 0.0)
    src = Camera(k, Extrinsics.identity())
    tgt = Camera(k, Extrinsics.from_rt(_rot([0, 1, 0], np.pi / 2), [0, 0, 0]))
    csg = transform_gaussians(scene, compose_projection(src, tgt))
    # Positions rotate accordingly: x' = -z, z' = x for a +90 deg yaw.
    r = _rot([0, 1, 0], np.pi / 2)
    assert np.allclose(csg.positions, scene.positions @ r.T, atol=1e-12)
    assert np.allclose(csg.scales, scene.scales)


def test_monte_carlo_covariance_oracle():
    # Sample points from each 3D Gaussian, push them through the rigid
    # part pointwise, and compare with the analytically transformed
    # covariance (rotated quaternion + unchanged scales).
    rng = np.random.default_rng(4)
    scene = random_scene(3, rng, scale_range=(0.1, 0.4))
    k = Intrinsics(1.0, 1.0, 0.0, 0.0)  # identity intrinsics: affine = rigid
    src = Camera(k, Extrinsics.identity())
    tgt = Camera(k, Extrinsics.from_rt(_rot([1, 2, 3], 0.6), [0.1, 0.2, -0.1]))
    proj = compose_projection(src, tgt)
    csg = transform_gaussians(scene, proj)

    rots = quaternions_to_matrices(
        scene.rotations / np.linalg.norm(scene.rotations, axis=1, keepdims=True)
    )
    a, b = proj.to_camera_affine
    for i in range(scene.count):
        cov3 = rots[i] @ np.diag(scene.scales[i] ** 2) @ rots[i].T
        pts = rng.multivariate_normal(scene.positions[i], cov3, size=10_000)
        pts_t = pts @ a.T + b
        sample_cov = np.cov(pts_t.T)
        rot_t = quaternions_to_matrices(csg.rotations[i : i + 1])[0]
        cov_t = rot_t @ np.diag(csg.scales[i] ** 2) @ rot_t.T
        # 2% of the covariance scale.
        assert np.abs(sample_cov - cov_t).max() <= 0.02 * np.abs(cov_t).max()


def test_render_equivalence_composed_vs_pretransformed():
    # Rendering with the composed projection equals transforming all
    # Gaussians into target camera space first and rendering with the
    # target intrinsics alone.
    rng = np.random.default_rng(5)
    w = h = 24
    for _ in range(3):
        scene = random_scene(10, rng)
        src = Camera(Intrinsics(1.1, 0.9, 0.03, -0.01), Extrinsics.identity())
        tgt = random_rig(rng, w, h)
        proj = compose_projection(src, tgt)
        out_a = render(scene, proj, (w, h))

        csg = transform_gaussians(scene, proj)
        assert not csg.behind.any()
        pre = scene.replace_attributes(
            positions=csg.positions, rotations=csg.rotations
        )
        # Identity source intrinsics: the pre-transformed set is consumed
        # as-is and only the target intrinsics apply.
        ident_src = Camera(Intrinsics(1.0, 1.0, 0.0, 0.0), Extrinsics.identity())
        tgt_only = Camera(tgt.intrinsics, Extrinsics.identity())
        proj_b = compose_projection(ident_src, tgt_only)
        out_b = render(pre, proj_b, (w, h))
        assert np.abs(out_a.color.data - out_b.color.data).max() <= 1e-5
        assert np.abs(out_a.alpha - out_b.alpha).max() <= 1e-5
        assert np.abs(out_a.inv_depth - out_b.inv_depth).max() <= 1e-5


def test_quaternion_matrix_roundtrip():
    rng = np.random.default_rng(6)
    q = rng.normal(size=(20, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    mats = quaternions_to_matrices(q)
    for i in range(20):
        q2 = matrix_to_quaternion(mats[i])
        assert np.allclose(
            quaternions_to_matrices(q2[None])[0], mats[i], atol=1e-12
        )
