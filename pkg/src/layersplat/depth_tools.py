"""Depth utilities: scale-map application, second-layer synthesis,
privileged-depth alignment, frustum masking, and flip-consistency
uncertainty maps."""

from __future__ import annotations

import numpy as np

from .types import (
    Camera,
    DimensionError,
    DomainError,
    LayeredDepthMap,
    LayersplatError,
    ScaleMap,
)


class NoValidPixelsError(LayersplatError):
    """Ground-truth depth has no usable pixels."""


def apply_scale_map(depth: LayeredDepthMap, scale: ScaleMap) -> LayeredDepthMap:
    """Adjusted depth: both layers multiplied element-wise by the scale
    map.  At inference the adjustment is the identity (scale = 1)."""
    if (depth.height, depth.width) != (scale.height, scale.width):
        raise DimensionError("depth and scale map dimensions differ")
    s = scale.values
    if np.any(s <= 0):
        raise DomainError("scale values must be > 0")
    return LayeredDepthMap(depth.data * s[None])


def second_layer_heuristic(
    depth_layer1: np.ndarray, dilation_radius: int
) -> LayeredDepthMap:
    """Stand-in for a predicted occlusion layer: layer 2 is the grayscale
    max-dilation of layer 1 (square structuring element), so background
    depth bleeds under foreground edges and layer2 >= layer1 everywhere."""
    d1 = np.asarray(depth_layer1, dtype=np.float64)
    if d1.ndim != 2:
        raise DimensionError("expected a single-layer (H, W) depth map")
    if np.any(d1 <= 0):
        raise DomainError("depths must be > 0")
    r = int(dilation_radius)
    if r < 0:
        raise DomainError("dilation radius must be >= 0")
    d2 = d1
    if r > 0:
        # Separable running max over a (2r+1) window, edge-padded.
        pad = np.pad(d1, ((0, 0), (r, r)), mode="edge")
        d2 = np.max(
            np.stack([pad[:, k : k + d1.shape[1]] for k in range(2 * r + 1)]), axis=0
        )
        pad = np.pad(d2, ((r, r), (0, 0)), mode="edge")
        d2 = np.max(
            np.stack([pad[k : k + d1.shape[0], :] for k in range(2 * r + 1)]), axis=0
        )
    return LayeredDepthMap.from_layers(d1, d2)


def median_scale_align(
    predicted: np.ndarray, ground_truth: np.ndarray
) -> tuple[float, np.ndarray]:
    """Global scale from the median ratio of ground truth to prediction.

    Ground-truth pixels that are zero, negative or non-finite are treated
    as missing (sparse maps use zeros as holes).  For an even number of
    valid pixels the lower median is taken, which avoids averaging two
    depths across an occlusion boundary.  Returns (s, s * predicted)."""
    pred = np.asarray(predicted, dtype=np.float64)
    gt = np.asarray(ground_truth, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionError("prediction and ground truth shapes differ")
    valid = np.isfinite(gt) & (gt > 0) & np.isfinite(pred) & (pred > 0)
    if not valid.any():
        raise NoValidPixelsError("no valid ground-truth pixels")
    ratios = np.sort(gt[valid] / pred[valid])
    s = float(ratios[(ratios.size - 1) // 2])
    return s, s * pred


def frustum_mask(
    target_camera: Camera,
    source_camera: Camera,
    target_depth: np.ndarray,
    source_size: tuple[int, int],
    bound: float = 1.05,
) -> np.ndarray:
    """Binary mask of target pixels whose back-projection lands inside the
    (slightly expanded) source frustum.

    Each target pixel is unprojected with the given target-view depth,
    transformed into the source camera, and projected to source NDC; the
    mask is 1 iff the point is in front of the source camera and both NDC
    coordinates lie in [-bound, bound]."""
    depth = np.asarray(target_depth, dtype=np.float64)
    if depth.ndim != 2:
        raise DimensionError("target depth must be (H, W)")
    h, w = depth.shape
    kt = target_camera.intrinsics

    px, py = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    z = depth
    x = (px - kt.cx) / kt.fx * z
    y = (py - kt.cy) / kt.fy * z

    t_n2s = (
        source_camera.extrinsics.matrix
        @ target_camera.extrinsics.inverse().matrix
    )
    pts = np.stack([x, y, z], axis=-1) @ t_n2s[:3, :3].T + t_n2s[:3, 3]

    src_w, src_h = source_size
    ks = source_camera.intrinsics.to_ndc(src_w, src_h)
    zs = pts[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        xs = ks.fx * pts[..., 0] / zs + ks.cx
        ys = ks.fy * pts[..., 1] / zs + ks.cy
    mask = (
        (zs > 0)
        & (xs >= -bound)
        & (xs <= bound)
        & (ys >= -bound)
        & (ys <= bound)
    )
    return mask.astype(np.float64)


def flip_uncertainty(depth_a: np.ndarray, depth_b: np.ndarray) -> np.ndarray:
    """Relative absolute error |a - b| / a between a depth prediction and
    the unflipped prediction of the mirrored image."""
    a = np.asarray(depth_a, dtype=np.float64)
    b = np.asarray(depth_b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError("depth map shapes differ")
    if np.any(a <= 0):
        raise DomainError("reference depths must be > 0")
    return np.abs(a - b) / a
