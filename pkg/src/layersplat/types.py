"""Core value types: images, depth maps, cameras, Gaussian sets, scale maps.

All types are immutable after construction (array fields are marked
read-only), so they can be shared freely across workers.  Conventions:
images are row-major with the origin at the top-left, y pointing down,
and pixel centers at integer + 0.5; depth is stored in meters (inverse
depth is computed on demand); quaternions are stored as (w, x, y, z).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class LayersplatError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(LayersplatError):
    """Shapes or sizes of inputs are inconsistent."""


class DomainError(LayersplatError):
    """A value is outside the mathematical domain of an operation."""


def _frozen(a, shape=None, dtype=np.float64) -> np.ndarray:
    arr = np.asarray(a, dtype=dtype)
    if shape is not None and arr.shape != shape:
        raise DimensionError(f"expected shape {shape}, got {arr.shape}")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ImageRGB:
    """RGB image with float channels in [0, 1], stored as (H, W, 3)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise DimensionError(f"image must be (H, W, 3), got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError("image must be at least 1x1")
        if not np.all(np.isfinite(arr)):
            raise DomainError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DomainError("image values must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LayeredDepthMap:
    """Two-layer depth map in meters, stored layer-major as (2, H, W).

    Layer 0 holds the primary visible surfaces, layer 1 the occluded /
    secondary content behind them.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != 2:
            raise DimensionError(f"depth must be (2, H, W), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DomainError("depth contains non-finite values")
        if arr.min() <= 0.0:
            raise DomainError("all depth values must be > 0")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def layer1(self) -> np.ndarray:
        return self.data[0]

    @property
    def layer2(self) -> np.ndarray:
        return self.data[1]

    @classmethod
    def from_layers(cls, layer1, layer2) -> "LayeredDepthMap":
        return cls(np.stack([np.asarray(layer1), np.asarray(layer2)]))


@dataclass(frozen=True)
class ScaleMap:
    """Multiplicative depth-adjustment map, stored as log-scale values.

    The stored field ``log_values`` is u with s = exp(u), so the identity
    adjustment is u = 0 and scaling by s and 1/s cost the same under the
    magnitude regularizer.
    """

    log_values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.log_values, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionError(f"scale map must be (H, W), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DomainError("scale map contains non-finite values")
        object.__setattr__(self, "log_values", _frozen(arr))

    @property
    def height(self) -> int:
        return self.log_values.shape[0]

    @property
    def width(self) -> int:
        return self.log_values.shape[1]

    @property
    def values(self) -> np.ndarray:
        """Multiplicative scale factors s = exp(u), all finite and > 0."""
        return np.exp(self.log_values)

    @classmethod
    def identity(cls, height: int, width: int) -> "ScaleMap":
        return cls(np.zeros((height, width)))

    @classmethod
    def from_values(cls, values) -> "ScaleMap":
        values = np.asarray(values, dtype=np.float64)
        if np.any(~np.isfinite(values)) or np.any(values <= 0):
            raise DomainError("scale values must be finite and > 0")
        return cls(np.log(values))


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics; fx, fy, cx, cy in pixels (or NDC units)."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError("fx and fy must be > 0")

    def matrix4(self) -> np.ndarray:
        """4x4 embedding with a depth-preserving third row, acting on
        homogeneous (x, y, z, 1) with perspective division deferred."""
        return np.array(
            [
                [self.fx, 0.0, self.cx, 0.0],
                [0.0, self.fy, self.cy, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )

    def inverse_matrix4(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx, 0.0],
                [0.0, 1.0 / self.fy, -self.cy / self.fy, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )

    def to_ndc(self, width: int, height: int) -> "Intrinsics":
        """Re-express pixel intrinsics in NDC units, where both image axes
        span [-1, 1].  Used for the source view so that scene positions can
        stay in the normalized space the initializer produces."""
        return Intrinsics(
            fx=2.0 * self.fx / width,
            fy=2.0 * self.fy / height,
            cx=2.0 * self.cx / width - 1.0,
            cy=2.0 * self.cy / height - 1.0,
        )


@dataclass(frozen=True)
class Extrinsics:
    """Rigid world-to-camera transform as a 4x4 matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise DimensionError(f"extrinsics must be 4x4, got {m.shape}")
        r = m[:3, :3]
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6):
            raise DomainError("extrinsics rotation block is not orthonormal")
        if np.linalg.det(r) < 0:
            raise DomainError("extrinsics rotation block has det < 0")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
            raise DomainError("extrinsics last row must be [0, 0, 0, 1]")
        object.__setattr__(self, "matrix", _frozen(m, (4, 4)))

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def inverse(self) -> "Extrinsics":
        r, t = self.rotation, self.translation
        inv = np.eye(4)
        inv[:3, :3] = r.T
        inv[:3, 3] = -r.T @ t
        return Extrinsics(inv)

    @classmethod
    def identity(cls) -> "Extrinsics":
        return cls(np.eye(4))

    @classmethod
    def from_rt(cls, rotation, translation) -> "Extrinsics":
        m = np.eye(4)
        m[:3, :3] = np.asarray(rotation, dtype=np.float64)
        m[:3, 3] = np.asarray(translation, dtype=np.float64)
        return cls(m)


class Camera(NamedTuple):
    """An (intrinsics, extrinsics) pair describing one view."""

    intrinsics: Intrinsics
    extrinsics: Extrinsics


# Gaussian grid flattening: index = (layer * grid_h + row) * grid_w + col.
def grid_index(layer: int, row: int, col: int, grid_h: int, grid_w: int) -> int:
    return (layer * grid_h + row) * grid_w + col


@dataclass(frozen=True)
class GaussianSet:
    """Layered grid of N = layers * grid_h * grid_w Gaussians.

    Per Gaussian: position (x, y, z) in normalized camera space with z in
    meters, scale (3 positive lengths, meters), rotation (unit quaternion
    w, x, y, z), color (RGB in [0, 1]) and opacity in [0, 1] -- 14
    attributes total.  ``smax`` is the canonical-unit constant the composer
    uses to express metric scales inside (0, 1); it is recorded here so the
    mapping stays invertible across serialization.
    """

    grid_w: int
    grid_h: int
    positions: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    colors: np.ndarray
    opacities: np.ndarray
    smax: float = 0.0
    layers: int = 2

    def __post_init__(self):
        n = self.layers * self.grid_h * self.grid_w
        object.__setattr__(self, "positions", _frozen(self.positions, (n, 3)))
        object.__setattr__(self, "scales", _frozen(self.scales, (n, 3)))
        object.__setattr__(self, "rotations", _frozen(self.rotations, (n, 4)))
        object.__setattr__(self, "colors", _frozen(self.colors, (n, 3)))
        object.__setattr__(self, "opacities", _frozen(self.opacities, (n,)))
        if self.smax <= 0.0:
            object.__setattr__(self, "smax", 2.0 * float(self.scales.max()))

    @property
    def count(self) -> int:
        return self.layers * self.grid_h * self.grid_w

    def replace_attributes(self, **kwargs) -> "GaussianSet":
        fields = dict(
            grid_w=self.grid_w,
            grid_h=self.grid_h,
            positions=self.positions,
            scales=self.scales,
            rotations=self.rotations,
            colors=self.colors,
            opacities=self.opacities,
            smax=self.smax,
            layers=self.layers,
        )
        fields.update(kwargs)
        return GaussianSet(**fields)


@dataclass(frozen=True)
class DeltaSet:
    """Raw, unconstrained per-attribute refinements for a Gaussian grid.

    Position deltas are expressed in the composer's screen-ray
    parameterization: channels are (x/z, y/z, 1/z).  The x/z and y/z
    channels are soft-limited by the offset regularizer (delta_limit),
    not by a hard invariant here.
    """

    grid_w: int
    grid_h: int
    d_position: np.ndarray
    d_scale: np.ndarray
    d_rotation: np.ndarray
    d_color: np.ndarray
    d_opacity: np.ndarray
    layers: int = 2

    def __post_init__(self):
        n = self.layers * self.grid_h * self.grid_w
        for name, width in (
            ("d_position", 3),
            ("d_scale", 3),
            ("d_rotation", 4),
            ("d_color", 3),
        ):
            arr = _frozen(getattr(self, name), (n, width))
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{name} contains non-finite values")
            object.__setattr__(self, name, arr)
        arr = _frozen(self.d_opacity, (n,))
        if not np.all(np.isfinite(arr)):
            raise DomainError("d_opacity contains non-finite values")
        object.__setattr__(self, "d_opacity", arr)

    @property
    def count(self) -> int:
        return self.layers * self.grid_h * self.grid_w

    @classmethod
    def zeros(cls, grid_w: int, grid_h: int, layers: int = 2) -> "DeltaSet":
        n = layers * grid_h * grid_w
        return cls(
            grid_w=grid_w,
            grid_h=grid_h,
            d_position=np.zeros((n, 3)),
            d_scale=np.zeros((n, 3)),
            d_rotation=np.zeros((n, 4)),
            d_color=np.zeros((n, 3)),
            d_opacity=np.zeros(n),
            layers=layers,
        )


@dataclass(frozen=True)
class RenderOutput:
    """Rendered color, alpha and inverse-depth images for one view."""

    color: ImageRGB
    alpha: np.ndarray
    inv_depth: np.ndarray

    def __post_init__(self):
        h, w = self.color.height, self.color.width
        object.__setattr__(self, "alpha", _frozen(self.alpha, (h, w)))
        object.__setattr__(self, "inv_depth", _frozen(self.inv_depth, (h, w)))


class Violation(NamedTuple):
    """One failed invariant: which attribute, where, and which rule."""

    attribute: str
    index: int
    rule: str

    def __str__(self):
        return f"{self.attribute}[{self.index}]: {self.rule}"


QUAT_NORM_TOL = 1e-6


def validate(scene: GaussianSet) -> list[Violation]:
    """Check every per-Gaussian invariant; reports, never raises."""
    violations: list[Violation] = []

    def check(attr: str, bad: np.ndarray, rule: str):
        for idx in np.flatnonzero(bad):
            violations.append(Violation(attr, int(idx), rule))

    check("position", ~np.all(np.isfinite(scene.positions), axis=1), "finite")
    check("position", scene.positions[:, 2] <= 0, "z > 0")
    check("scale", ~np.all(np.isfinite(scene.scales), axis=1), "finite")
    check("scale", np.any(scene.scales <= 0, axis=1), "components > 0")
    norms = np.linalg.norm(scene.rotations, axis=1)
    check("rotation", ~np.isfinite(norms), "finite")
    check(
        "rotation",
        np.isfinite(norms) & (np.abs(norms - 1.0) > QUAT_NORM_TOL),
        f"unit norm within {QUAT_NORM_TOL:g}",
    )
    check("color", ~np.all(np.isfinite(scene.colors), axis=1), "finite")
    check(
        "color",
        np.any((scene.colors < 0) | (scene.colors > 1), axis=1),
        "in [0, 1]",
    )
    check("opacity", ~np.isfinite(scene.opacities), "finite")
    check(
        "opacity",
        np.isfinite(scene.opacities)
        & ((scene.opacities < 0) | (scene.opacities > 1)),
        "in [0, 1]",
    )
    return violations
