"""Build the base Gaussian set from an image and a two-layer depth map.

The image and depth map are first subsampled by a factor (average pooling
for color, min pooling for depth), then every grid cell and layer spawns
one Gaussian at position (i*d, j*d, d), where (i, j) is the cell center in
normalized [-1, 1] image coordinates and d the pooled depth.  No camera
intrinsics enter here; the renderer's source-projection inverse absorbs
the normalized-coordinate convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import (
    DimensionError,
    DomainError,
    GaussianSet,
    ImageRGB,
    LayeredDepthMap,
)


@dataclass(frozen=True)
class InitConfig:
    """Initializer knobs.

    ``s0`` is the dimensionless base scale factor (splat scale = s0 * depth);
    if None it defaults to 1.5 / max(grid_w, grid_h) so a splat's radius
    roughly covers one grid cell.  ``downsample_factor`` is the grid
    subsampling stride (2 gives the half-resolution Gaussian grid).
    """

    s0: float | None = None
    downsample_factor: int = 2

    def __post_init__(self):
        if self.s0 is not None and self.s0 <= 0:
            raise DomainError("s0 must be > 0")
        if self.downsample_factor < 1:
            raise DomainError("downsample_factor must be >= 1")

    def resolved_s0(self, grid_w: int, grid_h: int) -> float:
        if self.s0 is not None:
            return self.s0
        return 1.5 / max(grid_w, grid_h)


def normalized_grid(grid_w: int, grid_h: int) -> tuple[np.ndarray, np.ndarray]:
    """Cell-center coordinates in [-1, 1], returned as (i, j) maps of shape
    (grid_h, grid_w) with i along x/columns and j along y/rows."""
    cols = (np.arange(grid_w) + 0.5) / grid_w * 2.0 - 1.0
    rows = (np.arange(grid_h) + 0.5) / grid_h * 2.0 - 1.0
    i, j = np.meshgrid(cols, rows)
    return i, j


def downsample(
    image: ImageRGB, depth: LayeredDepthMap, factor: int
) -> tuple[ImageRGB, LayeredDepthMap]:
    """Subsample by non-overlapping pooling: average for color, min for
    depth (min keeps the nearest surface inside each block)."""
    if factor < 1:
        raise DomainError("factor must be >= 1")
    h, w = image.height, image.width
    if (h, w) != (depth.height, depth.width):
        raise DimensionError("image and depth dimensions differ")
    if h % factor or w % factor:
        raise DimensionError(f"dimensions {w}x{h} not divisible by {factor}")
    if factor == 1:
        return image, depth
    hh, ww = h // factor, w // factor
    img = image.data.reshape(hh, factor, ww, factor, 3).mean(axis=(1, 3))
    dep = depth.data.reshape(2, hh, factor, ww, factor).min(axis=(2, 4))
    return ImageRGB(img), LayeredDepthMap(dep)


def init_gaussians(
    image_ds: ImageRGB, depth_ds: LayeredDepthMap, cfg: InitConfig = InitConfig()
) -> GaussianSet:
    """Create the base set from already-downsampled inputs.

    Both layers take the same color from the image; opacity starts at 0.5
    and rotations at the identity quaternion.  Scales are isotropic and
    proportional to depth.
    """
    gh, gw = image_ds.height, image_ds.width
    if (gh, gw) != (depth_ds.height, depth_ds.width):
        raise DimensionError("image and depth dimensions differ")
    if depth_ds.data.min() <= 0:
        raise DomainError("depth values must be > 0")

    s0 = cfg.resolved_s0(gw, gh)
    i, j = normalized_grid(gw, gh)
    n = 2 * gh * gw

    d = depth_ds.data  # (2, gh, gw)
    positions = np.stack(
        [i[None] * d, j[None] * d, np.broadcast_to(d, (2, gh, gw))], axis=-1
    ).reshape(n, 3)
    scales = np.repeat((s0 * d).reshape(n, 1), 3, axis=1)
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    colors = np.broadcast_to(image_ds.data, (2, gh, gw, 3)).reshape(n, 3)
    opacities = np.full(n, 0.5)

    return GaussianSet(
        grid_w=gw,
        grid_h=gh,
        positions=positions,
        scales=scales,
        rotations=rotations,
        colors=colors,
        opacities=opacities,
    )


def initialize(
    image: ImageRGB, depth: LayeredDepthMap, cfg: InitConfig = InitConfig()
) -> GaussianSet:
    """Downsample then initialize; the usual entry point."""
    image_ds, depth_ds = downsample(image, depth, cfg.downsample_factor)
    return init_gaussians(image_ds, depth_ds, cfg)
