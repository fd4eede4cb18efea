"""View-synthesis image metrics: PSNR, SSIM, and the shift-sensitivity
harness that motivates treating both with caution."""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .types import DimensionError

PSNR_CAP_DB = 99.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray, cap: float = PSNR_CAP_DB) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images; identical images
    report the cap instead of infinity."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError("image shapes differ")
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return cap
    return min(10.0 * np.log10(1.0 / mse), cap)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _windowed(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Valid-region weighted window sums via stride tricks; (H, W) ->
    (H - k + 1, W - k + 1)."""
    k = window.shape[0]
    v = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.einsum("rcij,ij->rc", v, window)


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel SSIM over valid 11x11 Gaussian windows (sigma 1.5); for
    RGB input the map is averaged over channels.  Shape shrinks by the
    window margin on each side."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError("image shapes differ")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise DimensionError("image smaller than the SSIM window")

    window = _gaussian_window()
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    maps = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx = _windowed(x, window)
        my = _windowed(y, window)
        mxx = _windowed(x * x, window)
        myy = _windowed(y * y, window)
        mxy = _windowed(x * y, window)
        vx = mxx - mx * mx
        vy = myy - my * my
        cxy = mxy - mx * my
        maps.append(
            ((2 * mx * my + c1) * (2 * cxy + c2))
            / ((mx * mx + my * my + c1) * (vx + vy + c2))
        )
    return np.mean(maps, axis=0)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    return float(ssim_map(a, b).mean())


def masked_metrics(
    a: np.ndarray, b: np.ndarray, mask: np.ndarray
) -> tuple[float | None, float | None]:
    """PSNR/SSIM restricted to mask == 1 pixels; None when the mask is
    empty (metrics not applicable)."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return None, None
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff2 = ((a - b) ** 2).mean(axis=-1) if a.ndim == 3 else (a - b) ** 2
    mse = float(diff2[mask].mean())
    p = PSNR_CAP_DB if mse == 0 else min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)
    margin = (SSIM_WINDOW - 1) // 2
    smap = ssim_map(a, b)
    inner = mask[margin:-margin, margin:-margin]
    s = float(smap[inner].mean()) if inner.any() else None
    return p, s


def metrics(rendered: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    """(PSNR dB, SSIM) of a rendered view against its ground truth."""
    return psnr(rendered, target), ssim(rendered, target)


def shift_image(image: np.ndarray, pixels: int) -> np.ndarray:
    """Horizontal translation by an integer pixel count with edge
    replication on the vacated side."""
    if pixels == 0:
        return image.copy()
    out = np.empty_like(image)
    p = abs(pixels)
    if pixels > 0:
        out[:, p:] = image[:, :-p]
        out[:, :p] = image[:, :1]
    else:
        out[:, :-p] = image[:, p:]
        out[:, -p:] = image[:, -1:]
    return out


class ShiftSensitivityRow(NamedTuple):
    label: str
    shift_pixels: int
    psnr: float
    ssim: float


def shift_sensitivity(
    image: np.ndarray, fractions: Sequence[float]
) -> list[ShiftSensitivityRow]:
    """Compare an image against horizontally shifted copies of itself (one
    row per shift fraction of the width) and against its global mean image
    (final row)."""
    image = np.asarray(image, dtype=np.float64)
    w = image.shape[1]
    rows = []
    for f in fractions:
        px = int(round(f * w))
        shifted = shift_image(image, px)
        rows.append(
            ShiftSensitivityRow(
                label=f"translated {f * 100:g}%",
                shift_pixels=px,
                psnr=psnr(image, shifted),
                ssim=ssim(image, shifted),
            )
        )
    mean_img = np.broadcast_to(
        image.reshape(-1, image.shape[-1]).mean(axis=0), image.shape
    ) if image.ndim == 3 else np.full_like(image, image.mean())
    rows.append(
        ShiftSensitivityRow(
            label="mean image",
            shift_pixels=0,
            psnr=psnr(image, mean_img),
            ssim=ssim(image, mean_img),
        )
    )
    return rows
