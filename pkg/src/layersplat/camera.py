"""Composed projections mapping normalized-space Gaussians into target views.

The projection is the plain matrix product P = K_tgt E_tgt E_src^-1
K_src^-1, with each K embedded as a 4x4 whose third row preserves depth.
Positions travel through the full (affine) chain into metric target-camera
space; covariances are carried in metric camera-aligned axes, so they only
rotate by the E_tgt E_src^-1 rotation block -- the perspective distortion
enters later through the renderer's projection Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .types import Camera, DomainError, GaussianSet


def quaternions_to_matrices(q: np.ndarray) -> np.ndarray:
    """(N, 4) unit quaternions in (w, x, y, z) order -> (N, 3, 3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((q.shape[0], 3, 3))
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - z * w)
    m[:, 0, 2] = 2 * (x * z + y * w)
    m[:, 1, 0] = 2 * (x * y + z * w)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - x * w)
    m[:, 2, 0] = 2 * (x * z - y * w)
    m[:, 2, 1] = 2 * (y * z + x * w)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def matrix_to_quaternion(m: np.ndarray) -> np.ndarray:
    """Rotation matrix -> unit quaternion (w, x, y, z), w >= 0."""
    t = np.trace(m)
    if t > 0:
        s = 0.5 / np.sqrt(t + 1.0)
        q = np.array(
            [0.25 / s, (m[2, 1] - m[1, 2]) * s, (m[0, 2] - m[2, 0]) * s,
             (m[1, 0] - m[0, 1]) * s]
        )
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * np.sqrt(max(1.0 + m[i, i] - m[j, j] - m[k, k], 0.0))
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def quaternion_multiply(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Hamilton product p * q for p (4,) against a batch q (N, 4); the
    result represents rotation q followed by p, i.e. R(p) @ R(q)."""
    pw, px, py, pz = p
    qw, qx, qy, qz = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.stack(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ],
        axis=1,
    )


@dataclass(frozen=True)
class ComposedProjection:
    """P = K_tgt E_tgt E_src^-1 K_src^-1 plus its factor cameras."""

    matrix: np.ndarray
    source: Camera
    target: Camera

    @property
    def relative_extrinsics(self) -> np.ndarray:
        return self.target.extrinsics.matrix @ self.source.extrinsics.inverse().matrix

    @property
    def relative_rotation(self) -> np.ndarray:
        """Rotation block of E_tgt E_src^-1; carries covariances."""
        return self.relative_extrinsics[:3, :3]

    @property
    def to_camera_affine(self) -> tuple[np.ndarray, np.ndarray]:
        """(A, b) of the affine map E_tgt E_src^-1 K_src^-1 taking scene
        positions to metric target-camera space."""
        m = self.relative_extrinsics @ self.source.intrinsics.inverse_matrix4()
        return m[:3, :3], m[:3, 3]


def compose_projection(source: Camera, target: Camera) -> ComposedProjection:
    if source.intrinsics.fx == 0 or source.intrinsics.fy == 0:
        raise DomainError("source intrinsics are singular")
    if target.intrinsics.fx == 0 or target.intrinsics.fy == 0:
        raise DomainError("target intrinsics are singular")
    p = (
        target.intrinsics.matrix4()
        @ target.extrinsics.matrix
        @ source.extrinsics.inverse().matrix
        @ source.intrinsics.inverse_matrix4()
    )
    return ComposedProjection(matrix=p, source=source, target=target)


class CameraSpaceGaussians(NamedTuple):
    """Gaussians expressed in metric target-camera space.

    ``behind`` flags Gaussians with non-positive depth; they are culled by
    the renderer rather than treated as errors.
    """

    positions: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    colors: np.ndarray
    opacities: np.ndarray
    behind: np.ndarray


def transform_gaussians(
    scene: GaussianSet, projection: ComposedProjection
) -> CameraSpaceGaussians:
    """Map a whole set into target-camera space: positions through the
    affine part of P, covariances (via quaternions) through the relative
    rotation only; colors and opacities are unchanged."""
    a, b = projection.to_camera_affine
    positions = scene.positions @ a.T + b
    r_rel = projection.relative_rotation
    q_rel = matrix_to_quaternion(r_rel)
    rotations = quaternion_multiply(q_rel, scene.rotations)
    return CameraSpaceGaussians(
        positions=positions,
        scales=scene.scales.copy(),
        rotations=rotations,
        colors=scene.colors.copy(),
        opacities=scene.opacities.copy(),
        behind=positions[:, 2] <= 0.0,
    )
