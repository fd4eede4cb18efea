# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled tile rasterization kernels: forward compositing and its exact
adjoint.  Mirrors the numpy fallback in tiled.py splat for splat; the only
liberty taken is an early exit once transmittance falls below t_exit,
whose effect is far below every test tolerance."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def forward(
    double[:, ::1] centers,
    double[:, ::1] cov_inv,
    double[::1] opac,
    double[:, ::1] colors,
    double[::1] invz,
    long long[::1] tile_offsets,
    int[::1] tile_splats,
    int width,
    int height,
    int tile,
    int tiles_x,
    int tiles_y,
    double q_cut,
    double alpha_max,
    double t_exit,
    double alpha_floor,
    double[:, :, ::1] out_color,
    double[:, ::1] out_alpha,
    double[:, ::1] out_invd,
):
    cdef Py_ssize_t tr, tc, tid, lo, hi, k, j, r, c, r0, r1, c0, c1
    cdef double px, py, dx, dy, q, g, a, t, acc0, acc1, acc2, accd, denom

    for tr in range(tiles_y):
        for tc in range(tiles_x):
            tid = tr * tiles_x + tc
            lo = tile_offsets[tid]
            hi = tile_offsets[tid + 1]
            r0 = tr * tile
            r1 = min(r0 + tile, height)
            c0 = tc * tile
            c1 = min(c0 + tile, width)
            for r in range(r0, r1):
                py = r + 0.5
                for c in range(c0, c1):
                    px = c + 0.5
                    t = 1.0
                    acc0 = 0.0
                    acc1 = 0.0
                    acc2 = 0.0
                    accd = 0.0
                    for k in range(lo, hi):
                        if t < t_exit:
                            break
                        j = tile_splats[k]
                        dx = px - centers[j, 0]
                        dy = py - centers[j, 1]
                        q = (
                            cov_inv[j, 0] * dx * dx
                            + 2.0 * cov_inv[j, 1] * dx * dy
                            + cov_inv[j, 2] * dy * dy
                        )
                        if q > q_cut:
                            continue
                        a = opac[j] * exp(-0.5 * q)
                        if a > alpha_max:
                            a = alpha_max
                        acc0 += colors[j, 0] * a * t
                        acc1 += colors[j, 1] * a * t
                        acc2 += colors[j, 2] * a * t
                        accd += invz[j] * a * t
                        t *= 1.0 - a
                    out_color[r, c, 0] = acc0
                    out_color[r, c, 1] = acc1
                    out_color[r, c, 2] = acc2
                    out_alpha[r, c] = 1.0 - t
                    denom = 1.0 - t
                    if denom < alpha_floor:
                        denom = alpha_floor
                    out_invd[r, c] = accd / denom


def backward(
    double[:, ::1] centers,
    double[:, ::1] cov_inv,
    double[::1] opac,
    double[:, ::1] colors,
    double[::1] invz,
    long long[::1] tile_offsets,
    int[::1] tile_splats,
    int width,
    int height,
    int tile,
    int tiles_x,
    int tiles_y,
    double q_cut,
    double alpha_max,
    double t_exit,
    double alpha_floor,
    double[:, :, ::1] up_color,
    double[:, ::1] up_alpha,
    double[:, ::1] up_invd,
    double[:, ::1] g_center,
    double[:, ::1] g_cov,
    double[::1] g_invz,
    double[:, ::1] g_color,
    double[::1] g_opacity,
):
    cdef Py_ssize_t tr, tc, tid, lo, hi, k, j, r, c, r0, r1, c0, c1, n, i
    cdef double px, py, dx, dy, q, g, a_raw, a, t, sd, t_final, tile_alpha
    cdef double dnorm, gd_eff, ga_eff, gc0, gc1, gc2, b, w, rsuf, g_a, g_q
    cdef double m0, m1, one_minus

    cdef Py_ssize_t max_k = 0
    for tid in range(tiles_x * tiles_y):
        if tile_offsets[tid + 1] - tile_offsets[tid] > max_k:
            max_k = tile_offsets[tid + 1] - tile_offsets[tid]
    if max_k == 0:
        return

    # Per-pixel scratch for the contributing-splat stack.
    cdef cnp.ndarray[cnp.int64_t, ndim=1] jbuf_arr = np.empty(max_k, np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] abuf_arr = np.empty(max_k)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gbuf_arr = np.empty(max_k)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] tbuf_arr = np.empty(max_k)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] clampbuf_arr = np.empty(max_k, np.uint8)
    cdef long long[::1] jbuf = jbuf_arr
    cdef double[::1] abuf = abuf_arr
    cdef double[::1] gbuf = gbuf_arr
    cdef double[::1] tbuf = tbuf_arr
    cdef unsigned char[::1] clampbuf = clampbuf_arr

    for tr in range(tiles_y):
        for tc in range(tiles_x):
            tid = tr * tiles_x + tc
            lo = tile_offsets[tid]
            hi = tile_offsets[tid + 1]
            if hi == lo:
                continue
            r0 = tr * tile
            r1 = min(r0 + tile, height)
            c0 = tc * tile
            c1 = min(c0 + tile, width)
            for r in range(r0, r1):
                py = r + 0.5
                for c in range(c0, c1):
                    px = c + 0.5
                    # Forward sweep: record each composited splat.
                    t = 1.0
                    sd = 0.0
                    n = 0
                    for k in range(lo, hi):
                        if t < t_exit:
                            break
                        j = tile_splats[k]
                        dx = px - centers[j, 0]
                        dy = py - centers[j, 1]
                        q = (
                            cov_inv[j, 0] * dx * dx
                            + 2.0 * cov_inv[j, 1] * dx * dy
                            + cov_inv[j, 2] * dy * dy
                        )
                        if q > q_cut:
                            continue
                        g = exp(-0.5 * q)
                        a_raw = opac[j] * g
                        a = a_raw
                        clampbuf[n] = 0
                        if a > alpha_max:
                            a = alpha_max
                            clampbuf[n] = 1
                        jbuf[n] = j
                        abuf[n] = a
                        gbuf[n] = g
                        tbuf[n] = t
                        sd += invz[j] * a * t
                        t *= 1.0 - a
                        n += 1
                    t_final = t
                    tile_alpha = 1.0 - t
                    dnorm = tile_alpha
                    if dnorm < alpha_floor:
                        dnorm = alpha_floor

                    gc0 = up_color[r, c, 0]
                    gc1 = up_color[r, c, 1]
                    gc2 = up_color[r, c, 2]
                    gd_eff = up_invd[r, c] / dnorm
                    ga_eff = up_alpha[r, c]
                    if tile_alpha > alpha_floor:
                        ga_eff -= up_invd[r, c] * sd / (dnorm * dnorm)

                    # Reverse sweep with the suffix accumulator.
                    rsuf = 0.0
                    for i in range(n - 1, -1, -1):
                        j = jbuf[i]
                        a = abuf[i]
                        g = gbuf[i]
                        one_minus = 1.0 - a
                        w = a * tbuf[i]
                        b = (
                            gc0 * colors[j, 0]
                            + gc1 * colors[j, 1]
                            + gc2 * colors[j, 2]
                            + gd_eff * invz[j]
                        )
                        g_color[j, 0] += gc0 * w
                        g_color[j, 1] += gc1 * w
                        g_color[j, 2] += gc2 * w
                        g_invz[j] += gd_eff * w
                        g_a = (
                            b * tbuf[i]
                            - rsuf / one_minus
                            + ga_eff * t_final / one_minus
                        )
                        rsuf += b * w
                        if clampbuf[i]:
                            continue
                        g_opacity[j] += g_a * g
                        g_q = g_a * opac[j] * (-0.5 * g)
                        dx = px - centers[j, 0]
                        dy = py - centers[j, 1]
                        m0 = cov_inv[j, 0] * dx + cov_inv[j, 1] * dy
                        m1 = cov_inv[j, 1] * dx + cov_inv[j, 2] * dy
                        g_center[j, 0] += g_q * (-2.0 * m0)
                        g_cov[j, 0] += g_q * (-(m0 * m0))
                        g_center[j, 1] += g_q * (-2.0 * m1)
                        g_cov[j, 1] += g_q * (-2.0 * m0 * m1)
                        g_cov[j, 2] += g_q * (-(m1 * m1))
