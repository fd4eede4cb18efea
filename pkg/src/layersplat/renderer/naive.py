"""Exact reference rasterizer: per-pixel front-to-back compositing over
every splat, no tiling, no early exit.  Slow on purpose; the tiled backends
are tested against this path."""

from __future__ import annotations

import numpy as np

from ..camera import ComposedProjection
from ..types import GaussianSet, ImageRGB, RenderOutput
from .common import ALPHA_FLOOR, ALPHA_MAX, Q_CUT, RenderPrep, prepare


def render_naive_prepared(prep: RenderPrep) -> RenderOutput:
    w, h = prep.width, prep.height
    color = np.zeros((h, w, 3))
    alpha = np.zeros((h, w))
    inv_depth = np.zeros((h, w))

    centers = prep.centers
    ia, ib, ic = prep.cov_inv[:, 0], prep.cov_inv[:, 1], prep.cov_inv[:, 2]
    opac = prep.opacities
    cols = prep.colors
    invz = prep.inv_depths

    for r in range(h):
        py = r + 0.5
        for c in range(w):
            px = c + 0.5
            dx = px - centers[:, 0]
            dy = py - centers[:, 1]
            q = ia * dx * dx + 2.0 * ib * dx * dy + ic * dy * dy
            hit = np.flatnonzero(q <= Q_CUT)
            t = 1.0
            acc = np.zeros(3)
            acc_d = 0.0
            for k in hit:
                a = opac[k] * np.exp(-0.5 * q[k])
                if a > ALPHA_MAX:
                    a = ALPHA_MAX
                acc += cols[k] * (a * t)
                acc_d += invz[k] * (a * t)
                t *= 1.0 - a
            color[r, c] = acc
            alpha[r, c] = 1.0 - t
            inv_depth[r, c] = acc_d / max(1.0 - t, ALPHA_FLOOR)

    return RenderOutput(
        color=ImageRGB(np.clip(color, 0.0, 1.0)), alpha=alpha, inv_depth=inv_depth
    )


def render_naive(
    scene: GaussianSet, projection: ComposedProjection, viewport: tuple[int, int]
) -> RenderOutput:
    return render_naive_prepared(prepare(scene, projection, viewport))
