"""Command-line surface: init, fit, render, eval, export-viewer.

Exit codes: 0 success, 1 runtime math failure, 2 I/O or schema failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import io_formats as io
from .camera import Camera, compose_projection
from .depth_tools import frustum_mask, second_layer_heuristic
from .fitting import FitConfig, FitView, fit
from .initializer import InitConfig, initialize
from .losses import LossWeights
from .metrics import masked_metrics, metrics, shift_sensitivity
from .renderer import render
from .types import (
    Extrinsics,
    ImageRGB,
    Intrinsics,
    LayeredDepthMap,
    LayersplatError,
)

DEFAULT_DILATION_RADIUS = 4


def _default_camera(width: int, height: int) -> Camera:
    f = float(max(width, height))
    return Camera(
        Intrinsics(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0),
        Extrinsics.identity(),
    )


def _load_rgbd(
    image_path: str, depth_path: str, depth2_path: str | None, dilation: int
) -> tuple[ImageRGB, LayeredDepthMap]:
    image = io.read_image(image_path)
    d1 = io.read_depth_any(depth_path)
    if d1.shape != (image.height, image.width):
        raise io.SchemaError(
            f"depth {d1.shape} does not match image "
            f"{(image.height, image.width)}"
        )
    if depth2_path is not None:
        d2 = io.read_depth_any(depth2_path)
        depth = LayeredDepthMap.from_layers(d1, np.maximum(d1, d2))
    else:
        depth = second_layer_heuristic(d1, dilation)
    return image, depth


def cmd_init(args) -> int:
    image, depth = _load_rgbd(args.image, args.depth, args.depth2, args.dilation)
    cfg = InitConfig(s0=args.s0, downsample_factor=args.downsample)
    scene = io.quantize(initialize(image, depth, cfg))
    camera = io.read_camera(args.camera) if args.camera else _default_camera(
        image.width, image.height
    )
    bundle = io.SplatBundle(
        scene=scene, camera=camera, source_size=(image.width, image.height)
    )
    io.write_splat(args.out, bundle)
    lo = scene.positions.min(axis=0)
    hi = scene.positions.max(axis=0)
    print(f"wrote {args.out}: {scene.count} Gaussians")
    print(
        f"position bounds: x [{lo[0]:.4g}, {hi[0]:.4g}]  "
        f"y [{lo[1]:.4g}, {hi[1]:.4g}]  z [{lo[2]:.4g}, {hi[2]:.4g}]"
    )
    return 0


def _views_from_manifest(path: str) -> list[FitView]:
    views = []
    for mv in io.read_views_manifest(path):
        image = io.read_image(mv.image_path)
        camera = io.read_camera(mv.camera_path)
        depth_gt = io.read_depth_any(mv.depth_path) if mv.depth_path else None
        views.append(
            FitView(role=mv.role, camera=camera, image=image, depth_gt=depth_gt)
        )
    return views


def cmd_fit(args) -> int:
    views = _views_from_manifest(args.views)
    input_view = next(v for v in views if v.role == "input")

    base = None
    scene_arg = args.scene
    if "," in scene_arg:
        parts = scene_arg.split(",")
        if len(parts) not in (2, 3):
            raise io.SchemaError(
                "rgbd scene must be IMAGE,DEPTH or IMAGE,DEPTH,DEPTH2"
            )
        image, depth = _load_rgbd(
            parts[0], parts[1], parts[2] if len(parts) == 3 else None, args.dilation
        )
        camera = input_view.camera
    else:
        bundle = io.read_splat(scene_arg)
        base = bundle.scene
        image = input_view.image
        depth_arr = (
            input_view.depth_gt
            if input_view.depth_gt is not None
            else np.ones((image.height, image.width))
        )
        depth = second_layer_heuristic(depth_arr, args.dilation)
        camera = bundle.camera

    weights = io.read_weights(args.weights_file) if args.weights_file else LossWeights()
    cfg = FitConfig(
        steps=args.steps,
        lr_peak=args.lr_peak,
        lr_final=args.lr_final,
        warmup_steps=args.warmup,
        weights=weights,
        optimize_scale_map=args.optimize_scale_map,
        init=InitConfig(s0=args.s0, downsample_factor=args.downsample),
    )
    trace = fit(image, depth, views, cfg, base=base)

    out_scene = io.quantize(trace.final_scene)
    io.write_splat(
        args.out,
        io.SplatBundle(
            scene=out_scene,
            camera=camera,
            source_size=(image.width, image.height),
        ),
    )
    if args.trace:
        io.write_trace_csv(args.trace, trace)
    print(f"wrote {args.out}: {out_scene.count} Gaussians after {args.steps} steps")
    if trace.reports:
        first, last = trace.reports[0], trace.reports[-1]
        print(f"total loss: {first.total:.6f} -> {last.total:.6f}")
        for term in last.raw:
            print(
                f"  {term:>10s}: raw {last.raw[term]:.6f}  "
                f"weighted {last.weighted[term]:.6f}"
            )
    return 0


def cmd_render(args) -> int:
    bundle = io.read_splat(args.splat)
    target = io.read_camera(args.camera)
    src_w, src_h = bundle.source_size
    src_ndc = Camera(
        bundle.camera.intrinsics.to_ndc(src_w, src_h), bundle.camera.extrinsics
    )
    projection = compose_projection(src_ndc, target)
    out = render(bundle.scene, projection, (args.width, args.height))

    io.write_image(args.out_color, out.color)
    print(f"wrote {args.out_color}")
    if args.out_alpha:
        alpha16 = np.clip(np.rint(out.alpha * 65535.0), 0, 65535).astype(np.uint16)
        io.write_gray16(args.out_alpha, alpha16)
        print(f"wrote {args.out_alpha}")
    if args.out_invdepth:
        scale = float(out.inv_depth.max())
        denom = scale if scale > 0 else 1.0
        inv16 = np.clip(
            np.rint(out.inv_depth / denom * 65535.0), 0, 65535
        ).astype(np.uint16)
        io.write_gray16(args.out_invdepth, inv16)
        with io.atomic_write(str(args.out_invdepth) + ".scale.txt", "w") as f:
            f.write(f"{scale:.17g}\n")
        print(f"wrote {args.out_invdepth} (scale {scale:.6g} 1/m at 65535)")
    return 0


def cmd_eval(args) -> int:
    rendered = io.read_image(args.rendered)
    truth = io.read_image(args.groundtruth)
    p, s = metrics(rendered.data, truth.data)
    report: dict = {"psnr": p, "ssim": s}

    if args.mask_from:
        parts = args.mask_from.split(",")
        if len(parts) != 3:
            raise io.SchemaError("--mask-from needs SRC_CAMERA,TGT_CAMERA,DEPTH")
        src_cam = io.read_camera(parts[0])
        tgt_cam = io.read_camera(parts[1])
        depth = io.read_depth_any(parts[2])
        mask = frustum_mask(
            tgt_cam, src_cam, depth, (truth.width, truth.height)
        )
        mp, ms = masked_metrics(rendered.data, truth.data, mask > 0.5)
        report["masked_psnr"] = mp
        report["masked_ssim"] = ms
        report["mask_coverage"] = float(mask.mean())

    if args.shifts:
        fractions = [float(x) for x in args.shifts.split(",")]
        rows = shift_sensitivity(truth.data, fractions)
        report["shift_sensitivity"] = [
            {"label": r.label, "pixels": r.shift_pixels, "psnr": r.psnr, "ssim": r.ssim}
            for r in rows
        ]

    text = json.dumps(report, indent=2)
    if args.out:
        with io.atomic_write(args.out, "w") as f:
            f.write(text + "\n")
    print(text)
    return 0


def cmd_export_viewer(args) -> int:
    bundle = io.read_splat(args.splat)
    io.export_viewer_bundle(args.out, bundle, headbox_radius_m=args.headbox)
    print(f"exported viewer bundle to {args.out} ({bundle.scene.count} Gaussians)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="layersplat",
        description="Layered Gaussian scenes from a single RGB-D image: "
        "initialize, refine, render, evaluate, export.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("init", help="build a base Gaussian set from RGB-D")
    q.add_argument("image")
    q.add_argument("depth")
    q.add_argument("depth2", nargs="?", default=None)
    q.add_argument("--s0", type=float, default=None)
    q.add_argument("--downsample", type=int, default=2)
    q.add_argument("--dilation", type=int, default=DEFAULT_DILATION_RADIUS)
    q.add_argument("--camera", default=None)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_init)

    q = sub.add_parser("fit", help="refine a scene against target views")
    q.add_argument("scene", help="splat file, or IMAGE,DEPTH[,DEPTH2]")
    q.add_argument("views", help="views manifest")
    q.add_argument("--steps", type=int, default=200)
    q.add_argument("--lr-peak", type=float, default=5e-2)
    q.add_argument("--lr-final", type=float, default=5e-3)
    q.add_argument("--warmup", type=int, default=20)
    q.add_argument("--weights-file", default=None)
    q.add_argument("--optimize-scale-map", action="store_true")
    q.add_argument("--s0", type=float, default=None)
    q.add_argument("--downsample", type=int, default=2)
    q.add_argument("--dilation", type=int, default=DEFAULT_DILATION_RADIUS)
    q.add_argument("--out", required=True)
    q.add_argument("--trace", default=None)
    q.set_defaults(func=cmd_fit)

    q = sub.add_parser("render", help="rasterize a splat file to images")
    q.add_argument("splat")
    q.add_argument("camera")
    q.add_argument("--width", type=int, required=True)
    q.add_argument("--height", type=int, required=True)
    q.add_argument("--out-color", required=True)
    q.add_argument("--out-alpha", default=None)
    q.add_argument("--out-invdepth", default=None)
    q.set_defaults(func=cmd_render)

    q = sub.add_parser("eval", help="PSNR/SSIM against ground truth")
    q.add_argument("rendered")
    q.add_argument("groundtruth")
    q.add_argument("--mask-from", default=None,
                   help="SRC_CAMERA,TGT_CAMERA,DEPTH for frustum masking")
    q.add_argument("--shifts", default=None,
                   help="comma-separated width fractions for the sensitivity table")
    q.add_argument("--out", default=None)
    q.set_defaults(func=cmd_eval)

    q = sub.add_parser("export-viewer", help="emit a browser viewer bundle")
    q.add_argument("splat")
    q.add_argument("--out", required=True)
    q.add_argument("--headbox", type=float, default=io.DEFAULT_HEADBOX_RADIUS_M)
    q.set_defaults(func=cmd_export_viewer)

    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (io.FileFormatError, io.SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LayersplatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
