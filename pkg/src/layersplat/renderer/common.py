"""Shared splat preparation for the rasterizer backends.

Turns a Gaussian set plus a composed projection into flat, depth-sorted
screen-space splat arrays with a per-tile index (CSR layout), and provides
the exact adjoint that chains per-splat screen-space gradients back to the
14 scene attributes.

Semantics shared by every backend: splats are sorted by view depth with
ties broken by source index; the Gaussian kernel is evaluated where the
Mahalanobis distance satisfies q <= Q_CUT and is exactly zero outside, so
the tiled and naive paths composite identical splat sequences per pixel.
Q_CUT is large enough (exp(-Q_CUT/2) ~ 1e-13) that the truncation is
invisible at test tolerances and keeps finite-difference gradient checks
clean.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..camera import (
    CameraSpaceGaussians,
    ComposedProjection,
    matrix_to_quaternion,
    quaternions_to_matrices,
    transform_gaussians,
)
from ..types import GaussianSet, Intrinsics

TILE = 16
Q_CUT = 60.0
ALPHA_MAX = 0.999
AA_DILATION = 0.3
ZNEAR = 1e-4
ALPHA_FLOOR = 1e-6  # inverse-depth normalization floor
T_EXIT = 1e-14  # compiled-kernel early exit; invisible at test tolerances


class Splat2D(NamedTuple):
    """One projected splat: pixel center, screen covariance, view depth."""

    center: np.ndarray  # (2,) pixels
    cov2d: np.ndarray  # (2, 2) pixels^2, anti-aliasing floor included
    view_depth: float  # meters
    color: np.ndarray  # (3,)
    opacity: float
    source_index: int


def project_splat(
    position: np.ndarray,
    scale: np.ndarray,
    rotation: np.ndarray,
    color: np.ndarray,
    opacity: float,
    intrinsics: Intrinsics,
    source_index: int = 0,
    znear: float = ZNEAR,
) -> Splat2D | None:
    """EWA projection of a single camera-space Gaussian; None when culled."""
    x, y, z = position
    if z <= znear:
        return None
    fx, fy = intrinsics.fx, intrinsics.fy
    center = np.array([fx * x / z + intrinsics.cx, fy * y / z + intrinsics.cy])
    q = np.asarray(rotation, dtype=np.float64)
    q = q / np.linalg.norm(q)
    r = quaternions_to_matrices(q[None])[0]
    sigma3 = r @ np.diag(np.asarray(scale, dtype=np.float64) ** 2) @ r.T
    j = np.array(
        [
            [fx / z, 0.0, -fx * x / z**2],
            [0.0, fy / z, -fy * y / z**2],
        ]
    )
    cov2d = j @ sigma3 @ j.T + AA_DILATION * np.eye(2)
    return Splat2D(
        center=center,
        cov2d=cov2d,
        view_depth=float(z),
        color=np.asarray(color, dtype=np.float64),
        opacity=float(opacity),
        source_index=source_index,
    )


def cov2d_eigen_max(cov: np.ndarray) -> np.ndarray:
    """Largest eigenvalue of packed (N, 3) symmetric 2x2 matrices."""
    a, b, c = cov[:, 0], cov[:, 1], cov[:, 2]
    h = np.sqrt(((a - c) / 2.0) ** 2 + b * b)
    return (a + c) / 2.0 + h


def cov2d_eigen_max_backward(cov: np.ndarray, g_lam: np.ndarray) -> np.ndarray:
    """d(largest eigenvalue)/d(packed cov), scaled by upstream g_lam."""
    a, b, c = cov[:, 0], cov[:, 1], cov[:, 2]
    h = np.sqrt(((a - c) / 2.0) ** 2 + b * b)
    h = np.maximum(h, 1e-12)
    da = 0.5 + (a - c) / (4.0 * h)
    dc = 0.5 - (a - c) / (4.0 * h)
    db = b / h
    return np.stack([g_lam * da, g_lam * db, g_lam * dc], axis=1)


@dataclass
class RenderPrep:
    """Depth-sorted screen-space splats plus everything backward needs."""

    width: int
    height: int
    n_total: int
    culled: int
    order: np.ndarray  # original indices of visible splats, depth order
    # Screen-space splat arrays, all in depth order:
    centers: np.ndarray  # (M, 2)
    cov: np.ndarray  # (M, 3) packed (a, b, c), dilation included
    cov_inv: np.ndarray  # (M, 3) packed inverse
    depths: np.ndarray  # (M,)
    inv_depths: np.ndarray  # (M,)
    colors: np.ndarray  # (M, 3)
    opacities: np.ndarray  # (M,)
    # Tile index (CSR): splats touching each tile, depth order within tile.
    tiles_x: int
    tiles_y: int
    tile_offsets: np.ndarray  # (tiles_x * tiles_y + 1,) int64
    tile_splats: np.ndarray  # int32 indices into the sorted arrays
    # Stashed intermediates for the adjoint:
    cam_positions: np.ndarray  # (M, 3)
    quats_cam: np.ndarray  # (M, 4) unnormalized, camera frame
    rot_mats: np.ndarray  # (M, 3, 3) from normalized camera-frame quats
    scales: np.ndarray  # (M, 3)
    sigma_cam: np.ndarray  # (M, 3, 3)
    jac: np.ndarray  # (M, 2, 3)
    projection: ComposedProjection


def _tile_index(
    centers: np.ndarray,
    cov: np.ndarray,
    width: int,
    height: int,
) -> tuple[int, int, np.ndarray, np.ndarray]:
    """Conservative tile assignment: each splat is listed in every tile its
    q <= Q_CUT ellipse bounding box overlaps."""
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    m = centers.shape[0]
    if m == 0:
        return tiles_x, tiles_y, np.zeros(tiles_x * tiles_y + 1, np.int64), np.zeros(
            0, np.int32
        )

    # Tight axis-aligned extents of the ellipse {d : d^T cov^-1 d <= Q_CUT}.
    hx = np.sqrt(Q_CUT * cov[:, 0])
    hy = np.sqrt(Q_CUT * cov[:, 2])
    # Pixel (r, c) has center (c + 0.5, r + 0.5).
    c0 = np.ceil(centers[:, 0] - hx - 0.5).astype(np.int64)
    c1 = np.floor(centers[:, 0] + hx - 0.5).astype(np.int64)
    r0 = np.ceil(centers[:, 1] - hy - 0.5).astype(np.int64)
    r1 = np.floor(centers[:, 1] + hy - 0.5).astype(np.int64)
    c0 = np.clip(c0, 0, width - 1)
    c1 = np.clip(c1, 0, width - 1)
    r0 = np.clip(r0, 0, height - 1)
    r1 = np.clip(r1, 0, height - 1)
    on = (
        (centers[:, 0] + hx >= 0.5)
        & (centers[:, 0] - hx <= width - 0.5)
        & (centers[:, 1] + hy >= 0.5)
        & (centers[:, 1] - hy <= height - 0.5)
    )

    tc0, tc1 = c0 // TILE, c1 // TILE
    tr0, tr1 = r0 // TILE, r1 // TILE
    ncols = np.where(on, tc1 - tc0 + 1, 0)
    nrows = np.where(on, tr1 - tr0 + 1, 0)
    counts = ncols * nrows
    total = int(counts.sum())
    if total == 0:
        return tiles_x, tiles_y, np.zeros(tiles_x * tiles_y + 1, np.int64), np.zeros(
            0, np.int32
        )

    splat_of_pair = np.repeat(np.arange(m), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    local = np.arange(total) - starts[splat_of_pair]
    lrow = local // np.maximum(ncols[splat_of_pair], 1)
    lcol = local % np.maximum(ncols[splat_of_pair], 1)
    tile_id = (tr0[splat_of_pair] + lrow) * tiles_x + (tc0[splat_of_pair] + lcol)

    # Stable sort keeps ascending depth order within each tile.
    perm = np.argsort(tile_id, kind="stable")
    tile_splats = splat_of_pair[perm].astype(np.int32)
    tile_offsets = np.zeros(tiles_x * tiles_y + 1, dtype=np.int64)
    np.add.at(tile_offsets, tile_id + 1, 1)
    np.cumsum(tile_offsets, out=tile_offsets)
    return tiles_x, tiles_y, tile_offsets, tile_splats


def prepare(
    scene: GaussianSet | CameraSpaceGaussians,
    projection: ComposedProjection,
    viewport: tuple[int, int],
) -> RenderPrep:
    """Transform, project, sort and tile a scene for rasterization."""
    width, height = viewport
    if isinstance(scene, GaussianSet):
        csg = transform_gaussians(scene, projection)
    else:
        csg = scene
    n = csg.positions.shape[0]

    t = csg.positions
    visible = t[:, 2] > ZNEAR
    culled = int(n - visible.sum())
    idx = np.flatnonzero(visible)

    tz = t[idx, 2]
    # Canonical order: ascending depth, ties by source index (stable sort
    # over an index-ordered array gives exactly that).
    order_local = np.argsort(tz, kind="stable")
    order = idx[order_local]

    tv = t[order]
    scales = csg.scales[order]
    quats = csg.rotations[order]
    colors = csg.colors[order]
    opac = csg.opacities[order]

    k = projection.target.intrinsics
    fx, fy, cx, cy = k.fx, k.fy, k.cx, k.cy
    tx, ty, tz = tv[:, 0], tv[:, 1], tv[:, 2]
    centers = np.stack([fx * tx / tz + cx, fy * ty / tz + cy], axis=1)

    norms = np.linalg.norm(quats, axis=1, keepdims=True)
    rot = quaternions_to_matrices(quats / norms)
    # Sigma3 = R diag(s^2) R^T, already in camera-aligned axes.
    rs = rot * (scales**2)[:, None, :]
    sigma_cam = rs @ np.transpose(rot, (0, 2, 1))

    m = tv.shape[0]
    jac = np.zeros((m, 2, 3))
    jac[:, 0, 0] = fx / tz
    jac[:, 0, 2] = -fx * tx / tz**2
    jac[:, 1, 1] = fy / tz
    jac[:, 1, 2] = -fy * ty / tz**2
    c2 = jac @ sigma_cam @ np.transpose(jac, (0, 2, 1))
    cov = np.stack(
        [c2[:, 0, 0] + AA_DILATION, c2[:, 0, 1], c2[:, 1, 1] + AA_DILATION], axis=1
    )
    det = cov[:, 0] * cov[:, 2] - cov[:, 1] ** 2
    cov_inv = np.stack([cov[:, 2] / det, -cov[:, 1] / det, cov[:, 0] / det], axis=1)

    tiles_x, tiles_y, tile_offsets, tile_splats = _tile_index(
        centers, cov, width, height
    )

    return RenderPrep(
        width=width,
        height=height,
        n_total=n,
        culled=culled,
        order=order,
        centers=centers,
        cov=cov,
        cov_inv=cov_inv,
        depths=tz.copy(),
        inv_depths=1.0 / tz,
        colors=np.ascontiguousarray(colors),
        opacities=np.ascontiguousarray(opac),
        tiles_x=tiles_x,
        tiles_y=tiles_y,
        tile_offsets=tile_offsets,
        tile_splats=tile_splats,
        cam_positions=tv,
        quats_cam=quats,
        rot_mats=rot,
        scales=scales,
        sigma_cam=sigma_cam,
        jac=jac,
        projection=projection,
    )


@dataclass(frozen=True)
class GradientBuffers:
    """Loss partials w.r.t. every scene attribute; zero for culled splats."""

    position: np.ndarray  # (N, 3)
    scale: np.ndarray  # (N, 3)
    rotation: np.ndarray  # (N, 4)
    color: np.ndarray  # (N, 3)
    opacity: np.ndarray  # (N,)


# dR/dq for a unit quaternion (w, x, y, z): four 3x3 basis derivatives,
# assembled below as einsum tensors.
def _rotation_quat_jacobian(q: np.ndarray) -> np.ndarray:
    """(M, 4, 3, 3): derivative of the rotation matrix w.r.t. each unit
    quaternion component."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    zeros = np.zeros_like(w)
    dw = np.stack(
        [zeros, -z, y, z, zeros, -x, -y, x, zeros], axis=1
    ).reshape(-1, 3, 3)
    dx = np.stack(
        [zeros, y, z, y, -2 * x, -w, z, w, -2 * x], axis=1
    ).reshape(-1, 3, 3)
    dy = np.stack(
        [-2 * y, x, w, x, zeros, z, -w, z, -2 * y], axis=1
    ).reshape(-1, 3, 3)
    dz = np.stack(
        [-2 * z, -w, x, w, -2 * z, y, x, y, zeros], axis=1
    ).reshape(-1, 3, 3)
    return 2.0 * np.stack([dw, dx, dy, dz], axis=1)


def _quat_left_matrix(p: np.ndarray) -> np.ndarray:
    """4x4 matrix of left Hamilton multiplication by p."""
    w, x, y, z = p
    return np.array(
        [
            [w, -x, -y, -z],
            [x, w, -z, y],
            [y, z, w, -x],
            [z, -y, x, w],
        ]
    )


def splat_grads_to_attributes(
    prep: RenderPrep,
    g_center: np.ndarray,
    g_cov: np.ndarray,
    g_invdepth: np.ndarray,
    g_color: np.ndarray,
    g_opacity: np.ndarray,
) -> GradientBuffers:
    """Chain per-splat screen-space gradients back through the projection
    Jacobian, the camera-frame covariance and the rigid transform to the
    scene attributes (normalized-space positions, metric scales, stored
    quaternions, colors, opacities)."""
    k = prep.projection.target.intrinsics
    fx, fy = k.fx, k.fy
    tv = prep.cam_positions
    tx, ty, tz = tv[:, 0], tv[:, 1], tv[:, 2]

    g_depth = -g_invdepth / tz**2

    g_t = np.zeros_like(tv)
    g_t[:, 0] = g_center[:, 0] * fx / tz
    g_t[:, 1] = g_center[:, 1] * fy / tz
    g_t[:, 2] = (
        -g_center[:, 0] * fx * tx / tz**2
        - g_center[:, 1] * fy * ty / tz**2
        + g_depth
    )

    # Symmetric 2x2 upstream for cov2d = J Sigma_c J^T + dilation.
    m = tv.shape[0]
    g2 = np.empty((m, 2, 2))
    g2[:, 0, 0] = g_cov[:, 0]
    g2[:, 0, 1] = g_cov[:, 1] / 2.0
    g2[:, 1, 0] = g_cov[:, 1] / 2.0
    g2[:, 1, 1] = g_cov[:, 2]

    jac = prep.jac
    sigma_c = prep.sigma_cam
    g_sigma_c = np.einsum("mij,mik,mkl->mjl", jac, g2, jac)
    g_jac = 2.0 * np.einsum("mij,mjk,mkl->mil", g2, jac, sigma_c)

    g_t[:, 0] += g_jac[:, 0, 2] * (-fx / tz**2)
    g_t[:, 1] += g_jac[:, 1, 2] * (-fy / tz**2)
    g_t[:, 2] += (
        g_jac[:, 0, 0] * (-fx / tz**2)
        + g_jac[:, 0, 2] * (2.0 * fx * tx / tz**3)
        + g_jac[:, 1, 1] * (-fy / tz**2)
        + g_jac[:, 1, 2] * (2.0 * fy * ty / tz**3)
    )

    # Sigma_c = R_rel Sigma3 R_rel^T (relative rotation is constant here,
    # covariances live in camera-aligned metric axes end to end).
    g_sigma3 = g_sigma_c

    rot = prep.rot_mats
    s2 = prep.scales**2
    g_rot = 2.0 * np.einsum("mij,mjk->mik", g_sigma3, rot * s2[:, None, :])
    rtgr = np.einsum("mji,mjk,mkl->mil", rot, g_sigma3, rot)
    g_scale = 2.0 * prep.scales * np.einsum("mii->mi", rtgr)

    norms = np.linalg.norm(prep.quats_cam, axis=1, keepdims=True)
    qhat = prep.quats_cam / norms
    jq = _rotation_quat_jacobian(qhat)
    g_qhat = np.einsum("mij,mcij->mc", g_rot, jq)
    g_qcam = (g_qhat - qhat * np.sum(qhat * g_qhat, axis=1, keepdims=True)) / norms

    # Camera-frame quaternion is q_rel * q_scene (a fixed linear map).
    q_rel = matrix_to_quaternion(prep.projection.relative_rotation)
    g_qscene = g_qcam @ _quat_left_matrix(q_rel)

    a_affine, _ = prep.projection.to_camera_affine
    g_mu = g_t @ a_affine

    n = prep.n_total
    buffers = GradientBuffers(
        position=np.zeros((n, 3)),
        scale=np.zeros((n, 3)),
        rotation=np.zeros((n, 4)),
        color=np.zeros((n, 3)),
        opacity=np.zeros(n),
    )
    buffers.position[prep.order] = g_mu
    buffers.scale[prep.order] = g_scale
    buffers.rotation[prep.order] = g_qscene
    buffers.color[prep.order] = g_color
    buffers.opacity[prep.order] = g_opacity
    return buffers
