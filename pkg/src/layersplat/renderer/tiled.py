"""Tiled rasterization kernels in pure numpy.

Import-time fallback for the compiled kernels: the same tile/splat index
and per-pixel math, vectorized per tile with cumulative products/sums in
depth order.  Outputs agree with the compiled kernels to floating-point
noise (the compiled path may stop compositing once transmittance drops
below T_EXIT ~ 1e-14, which is invisible at test tolerances).
"""

from __future__ import annotations

import numpy as np

from .common import ALPHA_FLOOR, ALPHA_MAX, Q_CUT, TILE, RenderPrep


def _tile_pixels(prep: RenderPrep, tr: int, tc: int):
    r0, c0 = tr * TILE, tc * TILE
    r1, c1 = min(r0 + TILE, prep.height), min(c0 + TILE, prep.width)
    py, px = np.mgrid[r0:r1, c0:c1]
    return r0, r1, c0, c1, px.ravel() + 0.5, py.ravel() + 0.5


def _splat_alphas(prep: RenderPrep, sel: np.ndarray, px: np.ndarray, py: np.ndarray):
    """Per (splat, pixel) kernel evaluation for one tile."""
    dx = px[None, :] - prep.centers[sel, 0, None]
    dy = py[None, :] - prep.centers[sel, 1, None]
    ia = prep.cov_inv[sel, 0, None]
    ib = prep.cov_inv[sel, 1, None]
    ic = prep.cov_inv[sel, 2, None]
    q = ia * dx * dx + 2.0 * ib * dx * dy + ic * dy * dy
    inside = q <= Q_CUT
    g = np.where(inside, np.exp(-0.5 * np.where(inside, q, 0.0)), 0.0)
    a_raw = prep.opacities[sel, None] * g
    a = np.minimum(a_raw, ALPHA_MAX)
    return dx, dy, q, g, a_raw, a, inside


def forward(prep: RenderPrep) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    h, w = prep.height, prep.width
    color = np.zeros((h, w, 3))
    alpha = np.zeros((h, w))
    inv_depth = np.zeros((h, w))

    for tr in range(prep.tiles_y):
        for tc in range(prep.tiles_x):
            tid = tr * prep.tiles_x + tc
            lo, hi = prep.tile_offsets[tid], prep.tile_offsets[tid + 1]
            if hi == lo:
                continue
            sel = prep.tile_splats[lo:hi]
            r0, r1, c0, c1, px, py = _tile_pixels(prep, tr, tc)
            _, _, _, _, _, a, _ = _splat_alphas(prep, sel, px, py)

            one_minus = 1.0 - a
            t_incl = np.cumprod(one_minus, axis=0)
            t_excl = np.vstack([np.ones((1, a.shape[1])), t_incl[:-1]])
            wgt = a * t_excl

            tile_color = wgt.T @ prep.colors[sel]
            tile_alpha = 1.0 - t_incl[-1]
            tile_sd = wgt.T @ prep.inv_depths[sel]
            tile_invd = tile_sd / np.maximum(tile_alpha, ALPHA_FLOOR)

            shape = (r1 - r0, c1 - c0)
            color[r0:r1, c0:c1] = tile_color.reshape(shape + (3,))
            alpha[r0:r1, c0:c1] = tile_alpha.reshape(shape)
            inv_depth[r0:r1, c0:c1] = tile_invd.reshape(shape)

    return color, alpha, inv_depth


def backward(
    prep: RenderPrep,
    g_color_img: np.ndarray,
    g_alpha_img: np.ndarray,
    g_invdepth_img: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Exact adjoint of forward; returns per-sorted-splat gradients
    (center (M,2), cov packed (M,3), inv depth (M,), color (M,3),
    opacity (M,))."""
    m = prep.centers.shape[0]
    g_center = np.zeros((m, 2))
    g_cov = np.zeros((m, 3))
    g_invz = np.zeros(m)
    g_color = np.zeros((m, 3))
    g_opacity = np.zeros(m)

    for tr in range(prep.tiles_y):
        for tc in range(prep.tiles_x):
            tid = tr * prep.tiles_x + tc
            lo, hi = prep.tile_offsets[tid], prep.tile_offsets[tid + 1]
            if hi == lo:
                continue
            sel = prep.tile_splats[lo:hi]
            r0, r1, c0, c1, px, py = _tile_pixels(prep, tr, tc)
            dx, dy, q, g, a_raw, a, inside = _splat_alphas(prep, sel, px, py)

            one_minus = 1.0 - a
            t_incl = np.cumprod(one_minus, axis=0)
            t_excl = np.vstack([np.ones((1, a.shape[1])), t_incl[:-1]])
            wgt = a * t_excl
            t_final = t_incl[-1]
            tile_alpha = 1.0 - t_final
            sd = np.einsum("kp,k->p", wgt, prep.inv_depths[sel])
            dnorm = np.maximum(tile_alpha, ALPHA_FLOOR)

            gc = g_color_img[r0:r1, c0:c1].reshape(-1, 3)
            ga = g_alpha_img[r0:r1, c0:c1].ravel()
            gid = g_invdepth_img[r0:r1, c0:c1].ravel()

            gd_eff = gid / dnorm
            ga_eff = ga + np.where(
                tile_alpha > ALPHA_FLOOR, -gid * sd / (dnorm * dnorm), 0.0
            )

            # b_k(p): loss sensitivity to this splat's composited weight.
            b = prep.colors[sel] @ gc.T + np.outer(prep.inv_depths[sel], gd_eff)
            bw = b * wgt
            rsuf = np.flip(np.cumsum(np.flip(bw, 0), axis=0), 0) - bw

            g_a = (
                b * t_excl
                - rsuf / one_minus
                + ga_eff[None, :] * t_final[None, :] / one_minus
            )
            gate = inside & (a_raw < ALPHA_MAX)
            g_a = np.where(gate, g_a, 0.0)

            opac = prep.opacities[sel, None]
            g_g = g_a * opac
            g_q = g_g * (-0.5 * g)

            ia = prep.cov_inv[sel, 0, None]
            ib = prep.cov_inv[sel, 1, None]
            ic = prep.cov_inv[sel, 2, None]
            m0 = ia * dx + ib * dy
            m1 = ib * dx + ic * dy

            g_center[sel, 0] += np.sum(g_q * (-2.0 * m0), axis=1)
            g_center[sel, 1] += np.sum(g_q * (-2.0 * m1), axis=1)
            g_cov[sel, 0] += np.sum(g_q * (-(m0 * m0)), axis=1)
            g_cov[sel, 1] += np.sum(g_q * (-2.0 * m0 * m1), axis=1)
            g_cov[sel, 2] += np.sum(g_q * (-(m1 * m1)), axis=1)
            g_color[sel] += wgt @ gc
            g_invz[sel] += wgt @ gd_eff
            g_opacity[sel] += np.sum(g_a * g, axis=1)

    return g_center, g_cov, g_invz, g_color, g_opacity
