"""Training objectives: data terms, regularizers, depth-adjustment terms,
and the weighted total.

Every term returns its raw value; the ``*_grad`` variants also return the
analytic gradient w.r.t. the differentiable inputs so the fit harness can
assemble the end-to-end adjoint without an autodiff engine.  Expectation
operators are realized as uniform means over all pixels (or Gaussians);
novel-view image terms take a binary frustum mask and use a masked mean
whose value is exactly zero under an all-zero mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .camera import ComposedProjection
from .renderer import cov2d_eigen_max, cov2d_eigen_max_backward, prepare
from .renderer.common import splat_grads_to_attributes
from .types import DimensionError, DomainError, GaussianSet, LayeredDepthMap

DATA_TERMS = ("color", "alpha", "depth", "percep")
REGULARIZER_TERMS = ("tv", "grad", "delta", "splat")
SCALE_TERMS = ("scale", "grad_scale")
ALL_TERMS = DATA_TERMS + REGULARIZER_TERMS + SCALE_TERMS


@dataclass(frozen=True)
class LossWeights:
    """Loss weights and constants; defaults are the trained configuration."""

    lambda_color: float = 1.0
    lambda_alpha: float = 1.0
    lambda_percep: float = 3.0
    lambda_depth: float = 0.2
    lambda_tv: float = 1.0
    lambda_grad: float = 0.5
    lambda_delta: float = 1.0
    lambda_splat: float = 1.0
    lambda_scale: float = 0.1
    lambda_grad_scale: float = 5.0
    floater_sigma: float = 1e-2
    floater_epsilon: float = 1e-2
    delta_limit: float = 400.0
    splat_sigma_min: float = 1e-1
    splat_sigma_max: float = 1e2

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise DomainError(f"{f.name} must be nonnegative")

    def weight(self, term: str) -> float:
        return getattr(self, f"lambda_{term}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DomainError(f"unknown loss weight keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class LossReport:
    """Per-term raw and weighted values plus the weighted total."""

    raw: dict[str, float]
    weighted: dict[str, float]
    total: float
    notes: dict[str, str] = field(default_factory=dict)


def total_loss(parts: dict[str, float], weights: LossWeights) -> LossReport:
    raw = {t: float(parts.get(t, 0.0)) for t in ALL_TERMS}
    weighted = {t: weights.weight(t) * raw[t] for t in ALL_TERMS}
    return LossReport(raw=raw, weighted=weighted, total=sum(weighted.values()))


def _masked_mean_grad(diff_abs_grad, mask):
    """Helper for masked L1 means: returns (denominator, scale) where the
    per-element gradient is sign(diff) * mask / denominator."""
    denom = float(mask.sum())
    return max(denom, 1.0)


def color_loss_grad(
    rendered_input: np.ndarray,
    target_input: np.ndarray,
    rendered_novel: Sequence[np.ndarray],
    target_novel: Sequence[np.ndarray],
    masks_novel: Sequence[np.ndarray],
):
    """L1 color loss: plain mean on the input view plus a frustum-masked
    mean per novel view.  Returns (value, grad_input, [grads_novel])."""
    if rendered_input.shape != target_input.shape:
        raise DimensionError("input view shapes differ")
    d = rendered_input - target_input
    value = float(np.abs(d).mean())
    g_in = np.sign(d) / d.size

    g_novels = []
    for rnv, tnv, m in zip(rendered_novel, target_novel, masks_novel):
        if rnv.shape != tnv.shape or m.shape != rnv.shape[:2]:
            raise DimensionError("novel view shapes differ")
        dn = (rnv - tnv) * m[..., None]
        denom = max(3.0 * float(m.sum()), 1.0)
        value += float(np.abs(dn).sum()) / denom
        g_novels.append(np.sign(dn) * m[..., None] / denom)
    return value, g_in, g_novels


def color_loss(
    rendered_input,
    target_input,
    rendered_novel=(),
    target_novel=(),
    masks_novel=(),
) -> float:
    return color_loss_grad(
        rendered_input, target_input, rendered_novel, target_novel, masks_novel
    )[0]


BCE_ALPHA_CLAMP = 1e-6


def alpha_loss_grad(
    alpha_input: np.ndarray,
    alphas_novel: Sequence[np.ndarray],
    masks_novel: Sequence[np.ndarray],
):
    """BCE of rendered alpha against 1, i.e. mean(-ln A), with A clamped
    at 1e-6; novel views are frustum-masked."""
    a = np.maximum(alpha_input, BCE_ALPHA_CLAMP)
    value = float(-np.log(a).mean())
    g_in = np.where(alpha_input > BCE_ALPHA_CLAMP, -1.0 / a, 0.0) / a.size

    g_novels = []
    for an, m in zip(alphas_novel, masks_novel):
        ac = np.maximum(an, BCE_ALPHA_CLAMP)
        denom = max(float(m.sum()), 1.0)
        value += float(-(np.log(ac) * m).sum()) / denom
        g_novels.append(
            np.where(an > BCE_ALPHA_CLAMP, -m / ac, 0.0) / denom
        )
    return value, g_in, g_novels


def alpha_loss(alpha_input, alphas_novel=(), masks_novel=()) -> float:
    return alpha_loss_grad(alpha_input, alphas_novel, masks_novel)[0]


class PyramidFeatureExtractor:
    """Built-in analytic perceptual features: a 4-level pyramid of
    (luminance, horizontal gradient, vertical gradient) channels, with
    level l downsampled by average pooling with stride 2^(l-1).

    Pluggable: any object with the same ``num_levels``/``features``/
    ``backward`` surface can stand in (e.g. a learned extractor)."""

    num_levels = 4
    _LUMA = np.array([0.299, 0.587, 0.114])

    def _pool(self, y: np.ndarray, f: int) -> np.ndarray:
        if f == 1:
            return y
        h, w = y.shape
        hh, ww = h // f, w // f
        return y[: hh * f, : ww * f].reshape(hh, f, ww, f).mean(axis=(1, 3))

    def features(self, image: np.ndarray) -> list[np.ndarray]:
        """(H, W, 3) image -> list of (3, H_l, W_l) feature maps."""
        y = image @ self._LUMA
        feats = []
        for level in range(self.num_levels):
            yl = self._pool(y, 2**level)
            gx = np.zeros_like(yl)
            gy = np.zeros_like(yl)
            gx[:, :-1] = yl[:, 1:] - yl[:, :-1]
            gy[:-1, :] = yl[1:, :] - yl[:-1, :]
            feats.append(np.stack([yl, gx, gy]))
        return feats

    def backward(
        self, image_shape: tuple[int, int, int], feature_grads: list[np.ndarray]
    ) -> np.ndarray:
        """Adjoint of features(): gradients on the feature maps -> gradient
        on the input image (everything here is linear)."""
        h, w, _ = image_shape
        g_y = np.zeros((h, w))
        for level, gf in enumerate(feature_grads):
            f = 2**level
            g_yl = gf[0].copy()
            # Adjoint of the forward differences.
            gx, gy = gf[1], gf[2]
            g_yl[:, 1:] += gx[:, :-1]
            g_yl[:, :-1] -= gx[:, :-1]
            g_yl[1:, :] += gy[:-1, :]
            g_yl[:-1, :] -= gy[:-1, :]
            # Adjoint of average pooling.
            hh, ww = g_yl.shape
            up = np.repeat(np.repeat(g_yl, f, axis=0), f, axis=1) / (f * f)
            g_y[: hh * f, : ww * f] += up
        return g_y[..., None] * self._LUMA


def perceptual_loss_grad(
    rendered: np.ndarray, target: np.ndarray, extractor: PyramidFeatureExtractor
):
    """Feature MSE plus Gram-matrix MSE over the extractor's levels, with
    per-level weights 1/(D*H*W) and 10/D^2."""
    f_r = extractor.features(rendered)
    f_t = extractor.features(target)
    if len(f_r) != extractor.num_levels:
        raise DimensionError("extractor returned wrong number of levels")

    value = 0.0
    grads = []
    for fr, ft in zip(f_r, f_t):
        d_l, h_l, w_l = fr.shape
        lam_feat = 1.0 / (d_l * h_l * w_l)
        lam_gram = 10.0 / (d_l * d_l)

        diff = fr - ft
        value += lam_feat * float((diff**2).sum())
        g = 2.0 * lam_feat * diff

        fr_flat = fr.reshape(d_l, -1)
        ft_flat = ft.reshape(d_l, -1)
        gram_r = fr_flat @ fr_flat.T
        gram_t = ft_flat @ ft_flat.T
        dg = gram_r - gram_t
        value += lam_gram * float((dg**2).sum())
        g += (4.0 * lam_gram * (dg @ fr_flat)).reshape(d_l, h_l, w_l)
        grads.append(g)

    g_image = extractor.backward(rendered.shape, grads)
    return value, g_image


def perceptual_loss(rendered, target, extractor) -> float:
    return perceptual_loss_grad(rendered, target, extractor)[0]


def depth_loss_grad(depth_layer1: np.ndarray, depth_gt: np.ndarray):
    """Mean absolute disparity error on the first depth layer."""
    if np.any(depth_layer1 <= 0) or np.any(depth_gt <= 0):
        raise DomainError("depths must be > 0")
    d = 1.0 / depth_layer1 - 1.0 / depth_gt
    value = float(np.abs(d).mean())
    # d|1/x - c|/dx = -sign(.) / x^2
    g = -np.sign(d) / depth_layer1**2 / d.size
    return value, g


def depth_loss(depth_layer1, depth_gt) -> float:
    return depth_loss_grad(depth_layer1, depth_gt)[0]


def tv_second_layer_grad(depth_layer2: np.ndarray):
    """Total variation of the second layer's disparity, forward
    differences; boundary rows/cols are excluded from the respective
    gradient's mean."""
    if np.any(depth_layer2 <= 0):
        raise DomainError("depths must be > 0")
    u = 1.0 / depth_layer2
    h, w = u.shape
    gx = u[:, 1:] - u[:, :-1]
    gy = u[1:, :] - u[:-1, :]
    value = 0.0
    g_u = np.zeros_like(u)
    if w > 1:
        value += float(np.abs(gx).mean())
        s = np.sign(gx) / gx.size
        g_u[:, 1:] += s
        g_u[:, :-1] -= s
    if h > 1:
        value += float(np.abs(gy).mean())
        s = np.sign(gy) / gy.size
        g_u[1:, :] += s
        g_u[:-1, :] -= s
    g_depth = -g_u / depth_layer2**2
    return value, g_depth


def tv_second_layer(depth_layer2) -> float:
    return tv_second_layer_grad(depth_layer2)[0]


def project_to_grid(positions: np.ndarray, width: int, height: int):
    """Map normalized-space positions onto integer cells of a (height,
    width) image grid, clamped in-bounds."""
    x = positions[:, 0] / positions[:, 2]
    y = positions[:, 1] / positions[:, 2]
    cols = np.clip(np.floor((x + 1.0) / 2.0 * width).astype(np.int64), 0, width - 1)
    rows = np.clip(np.floor((y + 1.0) / 2.0 * height).astype(np.int64), 0, height - 1)
    return rows, cols


def _disparity_forward_diffs(depth: np.ndarray, rows, cols):
    """Forward differences of a layer's disparity at given cells; the last
    row/column sees a zero difference along its axis."""
    u = 1.0 / depth
    h, w = u.shape
    cols1 = np.minimum(cols + 1, w - 1)
    rows1 = np.minimum(rows + 1, h - 1)
    gx = u[rows, cols1] - u[rows, cols]
    gy = u[rows1, cols] - u[rows, cols]
    return gx, gy, rows1, cols1


def floater_grad_reg_grad(
    opacities: np.ndarray,
    depth: LayeredDepthMap,
    base_positions: np.ndarray,
    layer_of: np.ndarray,
    sigma: float = 1e-2,
    epsilon: float = 1e-2,
):
    """Penalize opaque Gaussians sitting on large disparity gradients.

    Each Gaussian samples the adjusted full-resolution disparity of its own
    layer at the projected cell of its *base* position.  Returns
    (value, grad_opacity, grad_depth (2, H, W))."""
    h, w = depth.height, depth.width
    rows, cols = project_to_grid(base_positions, w, h)
    n = opacities.shape[0]

    value = 0.0
    g_op = np.zeros(n)
    g_depth = np.zeros((2, h, w))
    for layer in (0, 1):
        sel = np.flatnonzero(layer_of == layer)
        if sel.size == 0:
            continue
        d = depth.data[layer]
        r, c = rows[sel], cols[sel]
        gx, gy, r1, c1 = _disparity_forward_diffs(d, r, c)
        mag = np.sqrt(gx * gx + gy * gy)
        excess = np.maximum(0.0, mag - epsilon)
        psi = 1.0 - np.exp(-excess / sigma)
        value += float((opacities[sel] * psi).sum()) / n
        g_op[sel] = psi / n

        active = mag > epsilon
        g_mag = np.where(
            active, opacities[sel] * np.exp(-excess / sigma) / sigma, 0.0
        ) / n
        safe = np.maximum(mag, 1e-12)
        g_gx = g_mag * gx / safe
        g_gy = g_mag * gy / safe
        # Through u = 1/d at the sampled cells.
        gu = np.zeros_like(d)
        np.add.at(gu, (r, c1), g_gx)
        np.add.at(gu, (r, c), -g_gx)
        np.add.at(gu, (r1, c), g_gy)
        np.add.at(gu, (r, c), -g_gy)
        g_depth[layer] = -gu / d**2
    return value, g_op, g_depth


def floater_grad_reg(
    opacities, depth, base_positions, layer_of, sigma=1e-2, epsilon=1e-2
) -> float:
    return floater_grad_reg_grad(
        opacities, depth, base_positions, layer_of, sigma, epsilon
    )[0]


def delta_reg_grad(delta_x: np.ndarray, delta_y: np.ndarray, limit: float = 400.0):
    """Hinge on the raw screen-space position deltas beyond +-limit."""
    n = delta_x.size
    ex = np.maximum(np.abs(delta_x) - limit, 0.0)
    ey = np.maximum(np.abs(delta_y) - limit, 0.0)
    value = float((ex + ey).sum()) / n
    gx = np.where(ex > 0, np.sign(delta_x), 0.0) / n
    gy = np.where(ey > 0, np.sign(delta_y), 0.0) / n
    return value, gx, gy


def delta_reg(delta_x, delta_y, limit: float = 400.0) -> float:
    return delta_reg_grad(delta_x, delta_y, limit)[0]


def splat_size_reg_grad(
    scene: GaussianSet,
    projection: ComposedProjection,
    viewport: tuple[int, int],
    sigma_min: float = 1e-1,
    sigma_max: float = 1e2,
):
    """Hinge on the largest eigenvalue of each projected screen covariance
    (pixels^2).  Culled Gaussians contribute zero; the mean runs over all N.
    Returns (value, per-attribute gradient buffers)."""
    prep = prepare(scene, projection, viewport)
    n = scene.count
    lam = cov2d_eigen_max(prep.cov)
    over = np.maximum(lam - sigma_max, 0.0)
    under = np.maximum(sigma_min - lam, 0.0)
    value = float((over + under).sum()) / n

    g_lam = (np.where(over > 0, 1.0, 0.0) - np.where(under > 0, 1.0, 0.0)) / n
    g_cov = cov2d_eigen_max_backward(prep.cov, g_lam)
    m = prep.cov.shape[0]
    buffers = splat_grads_to_attributes(
        prep,
        g_center=np.zeros((m, 2)),
        g_cov=g_cov,
        g_invdepth=np.zeros(m),
        g_color=np.zeros((m, 3)),
        g_opacity=np.zeros(m),
    )
    return value, buffers


def splat_size_reg(scene, projection, viewport, sigma_min=1e-1, sigma_max=1e2):
    return splat_size_reg_grad(scene, projection, viewport, sigma_min, sigma_max)[0]


def scale_map_regs_grad(log_scale: np.ndarray, max_levels: int = 6):
    """Magnitude and multiscale TV regularizers of the log-scale map.

    The TV sum runs over levels k = 1..6, each average-pooled by 2^k; levels
    whose pooled size drops below 2x2 are truncated (the count of levels
    actually used is reported).  Returns (l_scale, l_grad_scale, g_scale,
    g_grad_scale, levels_used)."""
    u = log_scale
    h, w = u.shape
    l_scale = float(np.abs(u).mean())
    g_scale = np.sign(u) / u.size

    l_tv = 0.0
    g_tv = np.zeros_like(u)
    levels_used = 0
    for k in range(1, max_levels + 1):
        f = 2**k
        hh, ww = h // f, w // f
        if hh < 2 or ww < 2:
            break
        levels_used += 1
        pooled = u[: hh * f, : ww * f].reshape(hh, f, ww, f).mean(axis=(1, 3))
        gx = pooled[:, 1:] - pooled[:, :-1]
        gy = pooled[1:, :] - pooled[:-1, :]
        l_tv += float(np.abs(gx).mean()) + float(np.abs(gy).mean())
        gp = np.zeros_like(pooled)
        sx = np.sign(gx) / gx.size
        gp[:, 1:] += sx
        gp[:, :-1] -= sx
        sy = np.sign(gy) / gy.size
        gp[1:, :] += sy
        gp[:-1, :] -= sy
        g_tv[: hh * f, : ww * f] += (
            np.repeat(np.repeat(gp, f, axis=0), f, axis=1) / (f * f)
        )
    return l_scale, l_tv, g_scale, g_tv, levels_used


def scale_map_regs(log_scale: np.ndarray, max_levels: int = 6):
    out = scale_map_regs_grad(log_scale, max_levels)
    return out[0], out[1]
