"""Differentiable Gaussian splat rasterizer.

Two tiled fast paths share one semantic contract: a compiled extension
(Cython) and a pure numpy fallback, selected at import (override with the
LAYERSPLAT_BACKEND environment variable: "cython" or "numpy").  A naive
per-pixel reference lives in layersplat.renderer.naive and serves as the
oracle for both.
"""

from __future__ import annotations

import os

import numpy as np

from ..camera import ComposedProjection
from ..types import GaussianSet, ImageRGB, LayersplatError, RenderOutput
from . import tiled
from .common import (
    ALPHA_FLOOR,
    ALPHA_MAX,
    Q_CUT,
    T_EXIT,
    TILE,
    GradientBuffers,
    RenderPrep,
    Splat2D,
    cov2d_eigen_max,
    cov2d_eigen_max_backward,
    prepare,
    project_splat,
    splat_grads_to_attributes,
)
from .naive import render_naive, render_naive_prepared

try:
    from . import _kernels

    _HAVE_KERNELS = True
except ImportError:
    _kernels = None
    _HAVE_KERNELS = False

BACKEND = os.environ.get("LAYERSPLAT_BACKEND", "")
if BACKEND not in ("cython", "numpy"):
    BACKEND = "cython" if _HAVE_KERNELS else "numpy"
if BACKEND == "cython" and not _HAVE_KERNELS:
    raise LayersplatError(
        "LAYERSPLAT_BACKEND=cython requested but the compiled kernels are "
        "not importable"
    )


def _resolve_backend(backend: str | None) -> str:
    if backend is None:
        return BACKEND
    if backend == "cython" and not _HAVE_KERNELS:
        raise LayersplatError("compiled kernels are not available")
    if backend not in ("cython", "numpy"):
        raise LayersplatError(f"unknown renderer backend {backend!r}")
    return backend


def render_prepared(prep: RenderPrep, backend: str | None = None) -> RenderOutput:
    if _resolve_backend(backend) == "cython":
        h, w = prep.height, prep.width
        color = np.zeros((h, w, 3))
        alpha = np.zeros((h, w))
        invd = np.zeros((h, w))
        _kernels.forward(
            prep.centers,
            prep.cov_inv,
            prep.opacities,
            prep.colors,
            prep.inv_depths,
            prep.tile_offsets,
            prep.tile_splats,
            w,
            h,
            TILE,
            prep.tiles_x,
            prep.tiles_y,
            Q_CUT,
            ALPHA_MAX,
            T_EXIT,
            ALPHA_FLOOR,
            color,
            alpha,
            invd,
        )
    else:
        color, alpha, invd = tiled.forward(prep)
    return RenderOutput(
        color=ImageRGB(np.clip(color, 0.0, 1.0)), alpha=alpha, inv_depth=invd
    )


def render(
    scene: GaussianSet,
    projection: ComposedProjection,
    viewport: tuple[int, int],
    backend: str | None = None,
) -> RenderOutput:
    """Rasterize a scene into (color, alpha, inverse depth) images."""
    return render_prepared(prepare(scene, projection, viewport), backend)


def render_backward_prepared(
    prep: RenderPrep,
    g_color: np.ndarray,
    g_alpha: np.ndarray,
    g_invdepth: np.ndarray,
    backend: str | None = None,
) -> GradientBuffers:
    g_color = np.ascontiguousarray(g_color, dtype=np.float64)
    g_alpha = np.ascontiguousarray(g_alpha, dtype=np.float64)
    g_invdepth = np.ascontiguousarray(g_invdepth, dtype=np.float64)
    m = prep.centers.shape[0]
    if _resolve_backend(backend) == "cython":
        gc = np.zeros((m, 2))
        gv = np.zeros((m, 3))
        gz = np.zeros(m)
        gcol = np.zeros((m, 3))
        go = np.zeros(m)
        _kernels.backward(
            prep.centers,
            prep.cov_inv,
            prep.opacities,
            prep.colors,
            prep.inv_depths,
            prep.tile_offsets,
            prep.tile_splats,
            prep.width,
            prep.height,
            TILE,
            prep.tiles_x,
            prep.tiles_y,
            Q_CUT,
            ALPHA_MAX,
            T_EXIT,
            ALPHA_FLOOR,
            g_color,
            g_alpha,
            g_invdepth,
            gc,
            gv,
            gz,
            gcol,
            go,
        )
    else:
        gc, gv, gz, gcol, go = tiled.backward(prep, g_color, g_alpha, g_invdepth)
    return splat_grads_to_attributes(prep, gc, gv, gz, gcol, go)


def render_backward(
    scene: GaussianSet,
    projection: ComposedProjection,
    viewport: tuple[int, int],
    g_color: np.ndarray,
    g_alpha: np.ndarray,
    g_invdepth: np.ndarray,
    backend: str | None = None,
) -> GradientBuffers:
    """Pull loss gradients on the rendered images back to all 14 scene
    attributes; culled Gaussians receive zeros."""
    prep = prepare(scene, projection, viewport)
    return render_backward_prepared(prep, g_color, g_alpha, g_invdepth, backend)


__all__ = [
    "ALPHA_FLOOR",
    "ALPHA_MAX",
    "BACKEND",
    "GradientBuffers",
    "Q_CUT",
    "RenderPrep",
    "Splat2D",
    "TILE",
    "T_EXIT",
    "cov2d_eigen_max",
    "cov2d_eigen_max_backward",
    "prepare",
    "project_splat",
    "render",
    "render_backward",
    "render_backward_prepared",
    "render_naive",
    "render_naive_prepared",
    "render_prepared",
    "splat_grads_to_attributes",
]
