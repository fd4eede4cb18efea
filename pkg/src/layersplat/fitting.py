"""Desk-scale end-to-end refinement: optimize the raw refinement variables
(and optionally the depth scale map) against the rendered loss suite on an
input view plus one or more novel views.

The refinement variables stand in for a learned predictor: gradients flow
from every loss term through the renderer and composer adjoints back to
the deltas, and an Adam loop with linear warmup plus cosine decay updates
them in place.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .camera import Camera, compose_projection
from .composer import compose, compose_backward
from .depth_tools import apply_scale_map, frustum_mask
from .initializer import InitConfig, downsample, init_gaussians, normalized_grid
from .losses import (
    LossReport,
    LossWeights,
    PyramidFeatureExtractor,
    alpha_loss_grad,
    color_loss_grad,
    delta_reg_grad,
    depth_loss_grad,
    floater_grad_reg_grad,
    perceptual_loss_grad,
    scale_map_regs_grad,
    splat_size_reg_grad,
    total_loss,
    tv_second_layer_grad,
)
from .renderer import render_backward_prepared, render_prepared
from .renderer.common import prepare
from .types import (
    DeltaSet,
    DomainError,
    GaussianSet,
    ImageRGB,
    LayeredDepthMap,
    LayersplatError,
    ScaleMap,
)


class FitDivergedError(LayersplatError):
    """The total loss became non-finite; carries the failing step index."""

    def __init__(self, step: int):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step


@dataclass(frozen=True)
class FitView:
    """One supervised view: camera, target image, optional target depth.

    For the input view the depth drives the disparity loss; for novel
    views it seeds the frustum mask (when absent, the mask falls back to
    the depth rendered from the initial scene)."""

    role: str  # "input" | "novel"
    camera: Camera
    image: ImageRGB
    depth_gt: np.ndarray | None = None


@dataclass(frozen=True)
class FitConfig:
    steps: int = 200
    lr_peak: float = 5e-2
    lr_final: float = 5e-3
    warmup_steps: int = 20
    weights: LossWeights = field(default_factory=LossWeights)
    optimize_scale_map: bool = False
    init: InitConfig = field(default_factory=InitConfig)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not (self.lr_peak >= self.lr_final > 0):
            raise DomainError("need lr_peak >= lr_final > 0")
        if self.steps > 0 and not (0 <= self.warmup_steps < self.steps):
            raise DomainError("need 0 <= warmup_steps < steps")


def lr_at(step: int, cfg: FitConfig) -> float:
    """Linear warmup to lr_peak over warmup_steps, then cosine decay to
    lr_final at the last step."""
    if cfg.warmup_steps > 0 and step <= cfg.warmup_steps:
        return cfg.lr_peak * step / cfg.warmup_steps
    span = cfg.steps - cfg.warmup_steps
    t = (step - cfg.warmup_steps) / span if span > 0 else 1.0
    return cfg.lr_final + 0.5 * (cfg.lr_peak - cfg.lr_final) * (
        1.0 + np.cos(np.pi * min(max(t, 0.0), 1.0))
    )


@dataclass
class FitTrace:
    reports: list[LossReport]
    lrs: list[float]
    final_scene: GaussianSet
    final_delta: DeltaSet
    final_scale_map: ScaleMap
    wall_time_s: float
    mask_sources: list[str]

    def data_term_sum(self, index: int) -> float:
        r = self.reports[index]
        return sum(r.weighted[t] for t in ("color", "alpha", "depth", "percep"))

    def csv_rows(self):
        terms = list(self.reports[0].raw) if self.reports else []
        yield (
            ["step"]
            + [f"raw_{t}" for t in terms]
            + [f"weighted_{t}" for t in terms]
            + ["total", "lr"]
        )
        for i, (rep, lr) in enumerate(zip(self.reports, self.lrs), start=1):
            yield (
                [i]
                + [rep.raw[t] for t in terms]
                + [rep.weighted[t] for t in terms]
                + [rep.total, lr]
            )


class Adam:
    """Standard first-order adaptive-moment optimizer over array lists."""

    def __init__(self, shapes, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        out = []
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mhat = m / (1 - self.b1**self.t)
            vhat = v / (1 - self.b2**self.t)
            out.append(p - lr * mhat / (np.sqrt(vhat) + self.eps))
        return out


def _delta_from_arrays(template: DeltaSet, arrays) -> DeltaSet:
    return DeltaSet(
        grid_w=template.grid_w,
        grid_h=template.grid_h,
        d_position=arrays[0],
        d_scale=arrays[1],
        d_rotation=arrays[2],
        d_color=arrays[3],
        d_opacity=arrays[4],
        layers=template.layers,
    )


def _min_pool_backward(depth: np.ndarray, factor: int, g_pooled: np.ndarray):
    """Route pooled-depth gradients to each block's (first) argmin."""
    if factor == 1:
        return g_pooled.copy()
    layers, h, w = depth.shape
    hh, ww = h // factor, w // factor
    blocks = (
        depth.reshape(layers, hh, factor, ww, factor)
        .transpose(0, 1, 3, 2, 4)
        .reshape(layers, hh, ww, factor * factor)
    )
    amin = np.argmin(blocks, axis=-1)
    dr, dc = amin // factor, amin % factor
    g = np.zeros_like(depth)
    li, ri, ci = np.meshgrid(
        np.arange(layers), np.arange(hh), np.arange(ww), indexing="ij"
    )
    g[li, ri * factor + dr, ci * factor + dc] = g_pooled
    return g


class FitProblem:
    """Precomputed context for one refinement problem: cameras, frustum
    masks and the frozen canonical-unit constant; ``evaluate`` returns the
    loss report plus analytic gradients for the optimization variables."""

    def __init__(
        self,
        image: ImageRGB,
        depth: LayeredDepthMap,
        views: list[FitView],
        cfg: FitConfig,
        base: GaussianSet | None = None,
        delta0: DeltaSet | None = None,
        scale_map0: ScaleMap | None = None,
        extractor: PyramidFeatureExtractor | None = None,
    ):
        inputs = [v for v in views if v.role == "input"]
        if len(inputs) != 1:
            raise DomainError("exactly one input view is required")
        self.input_view = inputs[0]
        if (self.input_view.image.height, self.input_view.image.width) != (
            image.height,
            image.width,
        ):
            raise DomainError("input view image dimensions differ from the image")

        self.image = image
        self.depth = depth
        self.views = views
        self.cfg = cfg
        self.base = base
        self.extractor = extractor or PyramidFeatureExtractor()
        self.use_scale_map = cfg.optimize_scale_map or scale_map0 is not None

        w_img, h_img = image.width, image.height
        self.src_ndc = Camera(
            self.input_view.camera.intrinsics.to_ndc(w_img, h_img),
            self.input_view.camera.extrinsics,
        )
        self.projections = [compose_projection(self.src_ndc, v.camera) for v in views]
        self.viewports = [(v.image.width, v.image.height) for v in views]
        self.input_idx = views.index(self.input_view)
        self.novel_idx = [vi for vi, v in enumerate(views) if v.role == "novel"]

        self.u0 = (
            scale_map0.log_values.copy()
            if scale_map0 is not None
            else np.zeros((h_img, w_img))
        )
        base0 = self.build_base(self.adjusted_depth(self.u0))
        self.smax0 = base0.smax
        self.delta0 = (
            delta0
            if delta0 is not None
            else DeltaSet.zeros(base0.grid_w, base0.grid_h, base0.layers)
        )
        if (self.delta0.grid_w, self.delta0.grid_h) != (base0.grid_w, base0.grid_h):
            raise DomainError("delta grid does not match the Gaussian grid")

        per_layer = base0.grid_h * base0.grid_w
        self.layer_of = np.repeat(np.arange(base0.layers), per_layer)
        self.i_grid, self.j_grid = normalized_grid(base0.grid_w, base0.grid_h)

        # Frustum masks are frozen up front: ground-truth target depth when
        # given, else depth rendered from the initial scene.
        self.masks: list[np.ndarray] = []
        self.mask_sources: list[str] = []
        scene0 = compose(base0, self.delta0)
        for vi, view in enumerate(views):
            if view.role != "novel":
                self.masks.append(np.ones((view.image.height, view.image.width)))
                self.mask_sources.append("n/a")
                continue
            if view.depth_gt is not None:
                d_tgt = view.depth_gt
                self.mask_sources.append("ground-truth")
            else:
                out = render_prepared(
                    prepare(scene0, self.projections[vi], self.viewports[vi])
                )
                d_tgt = 1.0 / np.clip(out.inv_depth, 1e-6, None)
                self.mask_sources.append("rendered")
            self.masks.append(
                frustum_mask(
                    view.camera,
                    self.input_view.camera,
                    d_tgt,
                    (w_img, h_img),
                )
            )

    def adjusted_depth(self, u: np.ndarray) -> LayeredDepthMap:
        if self.use_scale_map:
            return apply_scale_map(self.depth, ScaleMap(u))
        return self.depth

    def build_base(
        self, depth_adj: LayeredDepthMap, smax: float | None = None
    ) -> GaussianSet:
        if self.base is not None:
            return self.base
        img_ds, dep_ds = downsample(
            self.image, depth_adj, self.cfg.init.downsample_factor
        )
        g0 = init_gaussians(img_ds, dep_ds, self.cfg.init)
        if smax is not None:
            g0 = g0.replace_attributes(smax=smax)
        return g0

    def evaluate(self, delta: DeltaSet, u: np.ndarray):
        """One forward/backward pass.  Returns (report, scene, delta grads
        as an array list, scale-map gradient or None)."""
        cfg, weights = self.cfg, self.cfg.weights
        views, input_view = self.views, self.input_view

        depth_adj = self.adjusted_depth(u)
        base_cur = self.build_base(depth_adj, smax=self.smax0)
        scene = compose(base_cur, delta)

        preps = [
            prepare(scene, self.projections[vi], self.viewports[vi])
            for vi in range(len(views))
        ]
        outs = [render_prepared(p) for p in preps]

        parts: dict[str, float] = {}
        c_val, g_c_in, g_c_nv = color_loss_grad(
            outs[self.input_idx].color.data,
            input_view.image.data,
            [outs[vi].color.data for vi in self.novel_idx],
            [views[vi].image.data for vi in self.novel_idx],
            [self.masks[vi] for vi in self.novel_idx],
        )
        parts["color"] = c_val

        a_val, g_a_in, g_a_nv = alpha_loss_grad(
            outs[self.input_idx].alpha,
            [outs[vi].alpha for vi in self.novel_idx],
            [self.masks[vi] for vi in self.novel_idx],
        )
        parts["alpha"] = a_val

        p_val = 0.0
        g_p_nv = []
        for vi in self.novel_idx:
            v, g = perceptual_loss_grad(
                outs[vi].color.data, views[vi].image.data, self.extractor
            )
            p_val += v
            g_p_nv.append(g)
        parts["percep"] = p_val

        if input_view.depth_gt is not None:
            d_val, g_depth1 = depth_loss_grad(depth_adj.layer1, input_view.depth_gt)
        else:
            d_val, g_depth1 = 0.0, np.zeros_like(depth_adj.layer1)
        parts["depth"] = d_val

        tv_val, g_depth2 = tv_second_layer_grad(depth_adj.layer2)
        parts["tv"] = tv_val

        fl_val, g_fl_op, g_fl_depth = floater_grad_reg_grad(
            scene.opacities,
            depth_adj,
            base_cur.positions,
            self.layer_of,
            sigma=weights.floater_sigma,
            epsilon=weights.floater_epsilon,
        )
        parts["grad"] = fl_val

        dl_val, g_dx, g_dy = delta_reg_grad(
            delta.d_position[:, 0], delta.d_position[:, 1], weights.delta_limit
        )
        parts["delta"] = dl_val

        sp_val, sp_buffers = splat_size_reg_grad(
            scene,
            self.projections[self.input_idx],
            self.viewports[self.input_idx],
            weights.splat_sigma_min,
            weights.splat_sigma_max,
        )
        parts["splat"] = sp_val

        sc_val, sgrad_val, g_u_mag, g_u_tv, levels = scale_map_regs_grad(u)
        parts["scale"] = sc_val
        parts["grad_scale"] = sgrad_val

        report = total_loss(parts, weights)
        report.notes["scale_tv_levels"] = str(levels)

        # Attribute-space gradients: the splat-size and floater terms first,
        # then each view's rendered-image terms through the rasterizer.
        g_pos = weights.lambda_splat * sp_buffers.position
        g_scale = weights.lambda_splat * sp_buffers.scale
        g_rot = weights.lambda_splat * sp_buffers.rotation
        g_col = weights.lambda_splat * sp_buffers.color
        g_op = weights.lambda_splat * sp_buffers.opacity + weights.lambda_grad * g_fl_op

        novel_pos = {vi: k for k, vi in enumerate(self.novel_idx)}
        for vi in range(len(views)):
            if vi == self.input_idx:
                g_color_img = weights.lambda_color * g_c_in
                g_alpha_img = weights.lambda_alpha * g_a_in
            else:
                k = novel_pos[vi]
                g_color_img = (
                    weights.lambda_color * g_c_nv[k]
                    + weights.lambda_percep * g_p_nv[k]
                )
                g_alpha_img = weights.lambda_alpha * g_a_nv[k]
            buf = render_backward_prepared(
                preps[vi], g_color_img, g_alpha_img, np.zeros_like(g_alpha_img)
            )
            g_pos = g_pos + buf.position
            g_scale = g_scale + buf.scale
            g_rot = g_rot + buf.rotation
            g_col = g_col + buf.color
            g_op = g_op + buf.opacity

        cb = compose_backward(base_cur, delta, g_pos, g_scale, g_rot, g_col, g_op)
        d_grads = [
            cb.d_position.copy(),
            cb.d_scale,
            cb.d_rotation,
            cb.d_color,
            cb.d_opacity,
        ]
        d_grads[0][:, 0] += weights.lambda_delta * g_dx
        d_grads[0][:, 1] += weights.lambda_delta * g_dy

        g_u = None
        if cfg.optimize_scale_map:
            g_depth_adj = np.zeros_like(depth_adj.data)
            g_depth_adj[0] += weights.lambda_depth * g_depth1
            g_depth_adj[1] += weights.lambda_tv * g_depth2
            g_depth_adj += weights.lambda_grad * g_fl_depth
            if self.base is None:
                # Initializer path: pooled depth -> positions and scales.
                f = cfg.init.downsample_factor
                s0 = cfg.init.resolved_s0(base_cur.grid_w, base_cur.grid_h)
                gl = base_cur.layers
                gp = cb.base_position.reshape(
                    gl, base_cur.grid_h, base_cur.grid_w, 3
                )
                gs = cb.base_scale.reshape(gl, base_cur.grid_h, base_cur.grid_w, 3)
                g_pooled = (
                    gp[..., 0] * self.i_grid[None]
                    + gp[..., 1] * self.j_grid[None]
                    + gp[..., 2]
                    + s0 * gs.sum(axis=-1)
                )
                g_depth_adj += _min_pool_backward(depth_adj.data, f, g_pooled)
            # dD/du = D (per pixel, shared by both layers).
            g_u = (g_depth_adj * depth_adj.data).sum(axis=0)
            g_u += weights.lambda_scale * g_u_mag
            g_u += weights.lambda_grad_scale * g_u_tv

        return report, scene, d_grads, g_u


def fit(
    image: ImageRGB,
    depth: LayeredDepthMap,
    views: list[FitView],
    cfg: FitConfig,
    base: GaussianSet | None = None,
    delta0: DeltaSet | None = None,
    scale_map0: ScaleMap | None = None,
    extractor: PyramidFeatureExtractor | None = None,
) -> FitTrace:
    """Run the refinement loop and return the per-step trace.

    ``base`` bypasses the initializer (used when fine-tuning an existing
    scene, e.g. for the swapped-pair procedure); ``delta0``/``scale_map0``
    seed the optimization variables."""
    problem = FitProblem(image, depth, views, cfg, base, delta0, scale_map0, extractor)
    t0 = time.perf_counter()

    delta = problem.delta0
    u = problem.u0.copy()
    d_arrays = [
        delta.d_position.copy(),
        delta.d_scale.copy(),
        delta.d_rotation.copy(),
        delta.d_color.copy(),
        delta.d_opacity.copy(),
    ]
    adam = Adam(
        [a.shape for a in d_arrays], cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    )
    adam_u = Adam([u.shape], cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    reports: list[LossReport] = []
    lrs: list[float] = []
    for step in range(1, cfg.steps + 1):
        delta_cur = _delta_from_arrays(delta, d_arrays)
        report, _scene, d_grads, g_u = problem.evaluate(delta_cur, u)
        if not np.isfinite(report.total):
            raise FitDivergedError(step)
        lr = lr_at(step, cfg)
        reports.append(report)
        lrs.append(lr)
        d_arrays = adam.step(d_arrays, d_grads, lr)
        if cfg.optimize_scale_map and g_u is not None:
            u = adam_u.step([u], [g_u], lr)[0]

    final_delta = _delta_from_arrays(delta, d_arrays)
    final_scene = compose(
        problem.build_base(problem.adjusted_depth(u), smax=problem.smax0), final_delta
    )
    return FitTrace(
        reports=reports,
        lrs=lrs,
        final_scene=final_scene,
        final_delta=final_delta,
        final_scale_map=ScaleMap(u),
        wall_time_s=time.perf_counter() - t0,
        mask_sources=problem.mask_sources,
    )


def make_ssft_pair(
    scene: GaussianSet,
    source_camera: Camera,
    pseudo_camera: Camera,
    image_real: ImageRGB,
) -> tuple[FitView, FitView]:
    """Swapped-pair construction for self-supervised fine-tuning: render a
    pseudo-novel view from the current scene, then return it as the input
    view while the real photograph becomes the novel-view target at the
    original source pose."""
    w, h = image_real.width, image_real.height
    src_ndc = Camera(source_camera.intrinsics.to_ndc(w, h), source_camera.extrinsics)
    proj = compose_projection(src_ndc, pseudo_camera)
    rendered = render_prepared(prepare(scene, proj, (w, h)))
    return (
        FitView(role="input", camera=pseudo_camera, image=rendered.color),
        FitView(role="novel", camera=source_camera, image=image_real),
    )
