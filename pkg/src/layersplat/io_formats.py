"""File formats: the binary splat container, PFM and PNG depth/image I/O,
camera files, view manifests, loss-weight files and trace CSVs.

All writes are atomic (temp file + rename), so partially written files are
never parseable.  The splat container is little-endian with a fixed header
(magic "SHRP") and a body of 14 float32 attributes per Gaussian; in-memory
sets are float64, so writing quantizes to float32 -- ``quantize`` applies
the same rounding to an in-memory set, after which a write/read round trip
is bit-exact.
"""

from __future__ import annotations

import csv
import json
import os
import struct
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .losses import LossWeights
from .types import (
    Camera,
    DimensionError,
    Extrinsics,
    GaussianSet,
    ImageRGB,
    Intrinsics,
    LayeredDepthMap,
    LayersplatError,
)


class FileFormatError(LayersplatError):
    """Unreadable, malformed or wrong-format input file."""


class SchemaError(LayersplatError):
    """A manifest or config file violates its schema."""


@contextmanager
def atomic_write(path: str | Path, mode: str = "wb"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# Splat container
# --------------------------------------------------------------------------

SPLAT_MAGIC = b"SHRP"
SPLAT_VERSION = 1
# magic, version, count, gridW, gridH, layers, smax,
# fx, fy, cx, cy, srcW, srcH, extrinsics (16)
_HEADER = struct.Struct("<4sHQIII d 4d II 16d")
GAUSSIAN_RECORD_BYTES = 14 * 4


@dataclass(frozen=True)
class SplatBundle:
    """A Gaussian set together with its source camera and image size."""

    scene: GaussianSet
    camera: Camera
    source_size: tuple[int, int]  # (width, height) of the source image


def quantize(scene: GaussianSet) -> GaussianSet:
    """Round all attributes to float32 (the on-disk precision)."""
    f32 = lambda a: a.astype(np.float32).astype(np.float64)
    return GaussianSet(
        grid_w=scene.grid_w,
        grid_h=scene.grid_h,
        positions=f32(scene.positions),
        scales=f32(scene.scales),
        rotations=f32(scene.rotations),
        colors=f32(scene.colors),
        opacities=f32(scene.opacities),
        smax=scene.smax,
        layers=scene.layers,
    )


def write_splat(path: str | Path, bundle: SplatBundle) -> None:
    scene = bundle.scene
    k, e = bundle.camera.intrinsics, bundle.camera.extrinsics
    header = _HEADER.pack(
        SPLAT_MAGIC,
        SPLAT_VERSION,
        scene.count,
        scene.grid_w,
        scene.grid_h,
        scene.layers,
        scene.smax,
        k.fx,
        k.fy,
        k.cx,
        k.cy,
        bundle.source_size[0],
        bundle.source_size[1],
        *e.matrix.reshape(16),
    )
    body = np.concatenate(
        [
            scene.positions,
            scene.scales,
            scene.rotations,
            scene.colors,
            scene.opacities[:, None],
        ],
        axis=1,
    ).astype("<f4")
    with atomic_write(path) as f:
        f.write(header)
        f.write(body.tobytes())


def read_splat(path: str | Path) -> SplatBundle:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise FileFormatError(f"{path}: truncated header")
    (
        magic,
        version,
        count,
        grid_w,
        grid_h,
        layers,
        smax,
        fx,
        fy,
        cx,
        cy,
        src_w,
        src_h,
        *ext,
    ) = _HEADER.unpack_from(raw)
    if magic != SPLAT_MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}")
    if version != SPLAT_VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}")
    if count != layers * grid_h * grid_w:
        raise FileFormatError(f"{path}: count does not match the grid")
    expected = _HEADER.size + GAUSSIAN_RECORD_BYTES * count
    if len(raw) != expected:
        raise FileFormatError(
            f"{path}: file length {len(raw)} != expected {expected}"
        )
    body = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(count, 14)
    body = body.astype(np.float64)
    scene = GaussianSet(
        grid_w=grid_w,
        grid_h=grid_h,
        positions=body[:, 0:3],
        scales=body[:, 3:6],
        rotations=body[:, 6:10],
        colors=body[:, 10:13],
        opacities=body[:, 13],
        smax=smax,
        layers=layers,
    )
    camera = Camera(
        Intrinsics(fx=fx, fy=fy, cx=cx, cy=cy),
        Extrinsics(np.array(ext).reshape(4, 4)),
    )
    return SplatBundle(scene=scene, camera=camera, source_size=(src_w, src_h))


# --------------------------------------------------------------------------
# Images and depth maps
# --------------------------------------------------------------------------


def read_image(path: str | Path) -> ImageRGB:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise FileFormatError(f"cannot read image {path}: {exc}") from exc
    return ImageRGB(arr)


def write_image(path: str | Path, image: ImageRGB | np.ndarray) -> None:
    data = image.data if isinstance(image, ImageRGB) else np.asarray(image)
    u8 = np.clip(np.rint(data * 255.0), 0, 255).astype(np.uint8)
    with atomic_write(path) as f:
        Image.fromarray(u8, mode="RGB").save(f, format="PNG")


def write_gray16(path: str | Path, values: np.ndarray) -> None:
    arr = np.asarray(values)
    if arr.dtype != np.uint16:
        raise DimensionError("expected uint16 values")
    with atomic_write(path) as f:
        Image.fromarray(arr).save(f, format="PNG")


def read_depth_png16(path: str | Path) -> np.ndarray:
    """16-bit PNG depth in millimeters -> meters; zeros become holes
    (invalid, returned as 0.0)."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im, dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise FileFormatError(f"cannot read depth {path}: {exc}") from exc
    if arr.ndim != 2:
        raise FileFormatError(f"{path}: depth PNG must be single-channel")
    return arr / 1000.0


def write_depth_png16(path: str | Path, depth_m: np.ndarray) -> None:
    mm = np.clip(np.rint(np.asarray(depth_m) * 1000.0), 0, 65535).astype(np.uint16)
    write_gray16(path, mm)


def read_pfm(path: str | Path) -> np.ndarray:
    """Portable float map; returns (H, W) or (H, W, 3) with the top row
    first (PFM stores rows bottom-to-top; negative scale = little-endian)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc}") from exc
    parts = raw.split(b"\n", 3)
    if len(parts) < 4:
        raise FileFormatError(f"{path}: truncated PFM header")
    header, dims, scale_s, body = parts
    if header.strip() not in (b"Pf", b"PF"):
        raise FileFormatError(f"{path}: not a PFM file")
    channels = 3 if header.strip() == b"PF" else 1
    try:
        w, h = (int(v) for v in dims.split())
        scale = float(scale_s)
    except ValueError as exc:
        raise FileFormatError(f"{path}: bad PFM header") from exc
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * channels
    if len(body) < count * 4:
        raise FileFormatError(f"{path}: truncated PFM body")
    data = np.frombuffer(body, dtype=dtype, count=count).astype(np.float64)
    data = data.reshape(h, w, channels)[::-1]
    return data[..., 0] if channels == 1 else data


def write_pfm(path: str | Path, values: np.ndarray) -> None:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2:
        header, channels = b"Pf", 1
        arr = arr[..., None]
    elif arr.ndim == 3 and arr.shape[2] == 3:
        header, channels = b"PF", 3
    else:
        raise DimensionError("PFM supports (H, W) or (H, W, 3) arrays")
    h, w = arr.shape[:2]
    with atomic_write(path) as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(arr[::-1].astype("<f4").tobytes())


def read_depth_any(path: str | Path) -> np.ndarray:
    """Depth from PFM (meters) or 16-bit PNG (millimeters)."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        depth = read_pfm(path)
        if depth.ndim != 2:
            raise FileFormatError(f"{path}: depth PFM must be grayscale")
        return depth
    if suffix == ".png":
        return read_depth_png16(path)
    raise FileFormatError(f"{path}: unsupported depth format {suffix!r}")


# --------------------------------------------------------------------------
# Camera files (shared JSON schema with the viewer)
# --------------------------------------------------------------------------


def camera_to_dict(camera: Camera) -> dict:
    return {
        "fx": camera.intrinsics.fx,
        "fy": camera.intrinsics.fy,
        "cx": camera.intrinsics.cx,
        "cy": camera.intrinsics.cy,
        "extrinsics": camera.extrinsics.matrix.tolist(),
    }


def camera_from_dict(d: dict) -> Camera:
    try:
        k = Intrinsics(
            fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"])
        )
        e = Extrinsics(np.asarray(d["extrinsics"], dtype=np.float64))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad camera file: {exc}") from exc
    return Camera(k, e)


def read_camera(path: str | Path) -> Camera:
    try:
        d = json.loads(Path(path).read_text())
    except OSError as exc:
        raise FileFormatError(f"cannot read camera {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON: {exc}") from exc
    return camera_from_dict(d)


def write_camera(path: str | Path, camera: Camera) -> None:
    with atomic_write(path, "w") as f:
        json.dump(camera_to_dict(camera), f, indent=2)
        f.write("\n")


# --------------------------------------------------------------------------
# Views manifest
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestView:
    role: str
    image_path: Path
    camera_path: Path
    depth_path: Path | None


def read_views_manifest(path: str | Path) -> list[ManifestView]:
    """Line-oriented manifest: ``role image camera [depth]`` per line,
    role in {input, novel}; blank lines and # comments allowed.  Schema
    errors report every offending line number."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FileFormatError(f"cannot read manifest {path}: {exc}") from exc
    base = Path(path).parent
    views: list[ManifestView] = []
    errors: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if len(fields) not in (3, 4):
            errors.append(f"line {lineno}: expected 3 or 4 fields, got {len(fields)}")
            continue
        role = fields[0]
        if role not in ("input", "novel"):
            errors.append(f"line {lineno}: role must be input|novel, got {role!r}")
            continue
        views.append(
            ManifestView(
                role=role,
                image_path=base / fields[1],
                camera_path=base / fields[2],
                depth_path=(base / fields[3]) if len(fields) == 4 else None,
            )
        )
    if errors:
        raise SchemaError(f"{path}: " + "; ".join(errors))
    if sum(1 for v in views if v.role == "input") != 1:
        raise SchemaError(f"{path}: manifest needs exactly one input view")
    return views


# --------------------------------------------------------------------------
# Loss weights
# --------------------------------------------------------------------------


def read_weights(path: str | Path) -> LossWeights:
    try:
        d = json.loads(Path(path).read_text())
    except OSError as exc:
        raise FileFormatError(f"cannot read weights {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON: {exc}") from exc
    try:
        return LossWeights.from_dict(d)
    except LayersplatError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def write_weights(path: str | Path, weights: LossWeights) -> None:
    with atomic_write(path, "w") as f:
        json.dump(weights.to_dict(), f, indent=2)
        f.write("\n")


def write_trace_csv(path: str | Path, trace) -> None:
    with atomic_write(path, "w") as f:
        writer = csv.writer(f)
        for row in trace.csv_rows():
            writer.writerow(row)


# --------------------------------------------------------------------------
# Viewer bundle
# --------------------------------------------------------------------------

DEFAULT_HEADBOX_RADIUS_M = 0.5


def export_viewer_bundle(
    out_dir: str | Path,
    bundle: SplatBundle,
    headbox_radius_m: float = DEFAULT_HEADBOX_RADIUS_M,
) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_splat(out / "scene.splat", bundle)
    manifest = {
        "splat": "scene.splat",
        "count": bundle.scene.count,
        "gridW": bundle.scene.grid_w,
        "gridH": bundle.scene.grid_h,
        "layers": bundle.scene.layers,
        "sourceWidth": bundle.source_size[0],
        "sourceHeight": bundle.source_size[1],
        "headboxRadiusMeters": headbox_radius_m,
        "camera": camera_to_dict(bundle.camera),
    }
    with atomic_write(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
