"""Deterministic synthetic fixtures for tests, benchmarks and demos.

Everything here is procedurally generated from fixed seeds, so fixtures
are "committed" as code and reproduce bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera, compose_projection
from .composer import compose
from .depth_tools import second_layer_heuristic
from .initializer import InitConfig, initialize
from .renderer import render
from .types import (
    DeltaSet,
    Extrinsics,
    GaussianSet,
    ImageRGB,
    Intrinsics,
    LayeredDepthMap,
    RenderOutput,
)


def textured_image(size: int = 64, seed: int = 7) -> ImageRGB:
    """Smooth gradients plus band-limited texture and a tinted square."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size] / size
    base = np.stack(
        [
            0.35 + 0.3 * x,
            0.40 + 0.25 * y,
            0.55 - 0.2 * x * y,
        ],
        axis=-1,
    )
    tex = (
        0.08 * np.sin(2 * np.pi * 4.0 * x + 1.3)
        + 0.07 * np.sin(2 * np.pi * 5.0 * y + rng.uniform(0, np.pi))
        + 0.05 * np.sin(2 * np.pi * 3.0 * (x + y))
    )
    img = base + tex[..., None]
    s0, s1 = size // 4, size * 11 // 16
    img[s0:s1, s0 + 2 : s1 + 2, 0] += 0.18
    img[s0:s1, s0 + 2 : s1 + 2, 2] -= 0.12
    return ImageRGB(np.clip(img, 0.02, 0.98))


def layered_depth(size: int = 64, seed: int = 19) -> LayeredDepthMap:
    """Background ramp with a closer foreground square; the second layer is
    the dilated background so occluded content has somewhere to live.

    A sub-millimeter jitter keeps all depths distinct: flat regions would
    otherwise produce exactly tied view depths, where the compositing
    order (and hence the rendering) is discontinuous under infinitesimal
    position updates."""
    y, _ = np.mgrid[0:size, 0:size] / size
    d1 = 2.0 + 1.0 * y
    s0, s1 = size // 4, size * 11 // 16
    d1[s0:s1, s0 + 2 : s1 + 2] = 1.2
    rng = np.random.default_rng(seed)
    d1 = d1 + rng.uniform(0.0, 1e-3, d1.shape)
    layered = second_layer_heuristic(d1, dilation_radius=3)
    # The dilation copies layer-1 values, so layer 2 needs its own jitter.
    d2 = layered.layer2 + rng.uniform(0.0, 1e-3, d1.shape)
    return LayeredDepthMap.from_layers(layered.layer1, d2)


def fixture_camera(size: int = 64) -> Camera:
    return Camera(
        Intrinsics(fx=float(size), fy=float(size), cx=size / 2.0, cy=size / 2.0),
        Extrinsics.identity(),
    )


def novel_cameras(size: int = 64, baseline: float = 0.04) -> list[Camera]:
    """Two laterally translated views; at the fixture's ~1.2 m foreground
    this is well under a 0.05 normalized baseline."""
    k = fixture_camera(size).intrinsics
    return [
        Camera(k, Extrinsics.from_rt(np.eye(3), [baseline, 0.0, 0.0])),
        Camera(k, Extrinsics.from_rt(np.eye(3), [-baseline, 0.015, 0.0])),
    ]


def true_scene(size: int = 64) -> GaussianSet:
    """A crisp "ground-truth" scene: the initialized set pushed to high
    opacity and slightly sharpened scales by a fixed delta."""
    image = textured_image(size)
    depth = layered_depth(size)
    base = initialize(image, depth, InitConfig())
    delta = DeltaSet.zeros(base.grid_w, base.grid_h)
    d_op = delta.d_opacity.copy()
    d_op[:] = 4.0
    d_sc = delta.d_scale.copy()
    d_sc[:] = -0.35
    delta = DeltaSet(
        grid_w=delta.grid_w,
        grid_h=delta.grid_h,
        d_position=delta.d_position,
        d_scale=d_sc,
        d_rotation=delta.d_rotation,
        d_color=delta.d_color,
        d_opacity=d_op,
    )
    return compose(base, delta)


@dataclass(frozen=True)
class DeskScene:
    """The committed end-to-end fixture: RGB-D input, cameras, and
    ground-truth renders of a known scene at the input and novel views."""

    image: ImageRGB
    depth: LayeredDepthMap
    camera: Camera
    novel: list[Camera]
    scene_true: GaussianSet
    render_input: RenderOutput
    renders_novel: list[RenderOutput]


def desk_scene(size: int = 64) -> DeskScene:
    image = textured_image(size)
    depth = layered_depth(size)
    cam = fixture_camera(size)
    novel = novel_cameras(size)
    scene = true_scene(size)
    src_ndc = Camera(cam.intrinsics.to_ndc(size, size), cam.extrinsics)
    r_in = render(scene, compose_projection(src_ndc, cam), (size, size))
    r_nv = [
        render(scene, compose_projection(src_ndc, c), (size, size)) for c in novel
    ]
    return DeskScene(
        image=image,
        depth=depth,
        camera=cam,
        novel=novel,
        scene_true=scene,
        render_input=r_in,
        renders_novel=r_nv,
    )


def natural_image(size: int = 512, seed: int = 11) -> np.ndarray:
    """A statistically natural test image: band-limited texture carrying
    most of the variance plus a smooth large-scale component, normalized
    to [0, 1].  Tuned so small shifts decorrelate it the way photographs
    do (pixel metrics collapse toward the mean-image baseline)."""
    rng = np.random.default_rng(seed)
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    f2 = fx * fx + fy * fy

    def filtered(sigma_px: float) -> np.ndarray:
        noise = rng.normal(size=(size, size))
        spec = np.fft.fft2(noise) * np.exp(-2 * (np.pi * sigma_px) ** 2 * f2)
        out = np.real(np.fft.ifft2(spec))
        return out / out.std()

    channels = []
    for _ in range(3):
        fine = filtered(1.8)
        mid = filtered(4.0)
        smooth = filtered(40.0)
        channels.append(
            0.17
            * (np.sqrt(0.25) * fine + np.sqrt(0.40) * mid + np.sqrt(0.35) * smooth)
        )
    img = 0.5 + np.stack(channels, axis=-1)
    return np.clip(img, 0.0, 1.0)


def random_scene(
    n_per_layer: int,
    rng: np.random.Generator,
    depth_range: tuple[float, float] = (1.0, 3.0),
    scale_range: tuple[float, float] = (0.05, 0.3),
    opacity_range: tuple[float, float] = (0.1, 0.9),
) -> GaussianSet:
    """Fuzz scene on a 1 x n grid with fully random valid attributes."""
    n = 2 * n_per_layer
    z = rng.uniform(*depth_range, n)
    pos = np.stack(
        [rng.uniform(-0.6, 0.6, n) * z, rng.uniform(-0.6, 0.6, n) * z, z], axis=1
    )
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return GaussianSet(
        grid_w=n_per_layer,
        grid_h=1,
        positions=pos,
        scales=rng.uniform(*scale_range, (n, 3)),
        rotations=q,
        colors=rng.uniform(0.05, 0.95, (n, 3)),
        opacities=rng.uniform(*opacity_range, n),
    )


def random_rig(
    rng: np.random.Generator, width: int, height: int, max_angle: float = 0.15
) -> Camera:
    """Random target camera with a small rotation and translation."""
    ax = rng.normal(size=3)
    ax /= np.linalg.norm(ax)
    angle = rng.uniform(-max_angle, max_angle)
    k_mat = np.array(
        [[0, -ax[2], ax[1]], [ax[2], 0, -ax[0]], [-ax[1], ax[0], 0]]
    )
    rot = np.eye(3) + np.sin(angle) * k_mat + (1 - np.cos(angle)) * (k_mat @ k_mat)
    t = rng.uniform(-0.08, 0.08, 3)
    fx = rng.uniform(0.8, 1.3) * width
    fy = rng.uniform(0.8, 1.3) * height
    return Camera(
        Intrinsics(fx=fx, fy=fy, cx=width / 2 + rng.uniform(-1, 1),
                   cy=height / 2 + rng.uniform(-1, 1)),
        Extrinsics.from_rt(rot, t),
    )
