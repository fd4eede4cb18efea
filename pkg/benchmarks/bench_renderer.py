"""Benchmark the rasterizer backends: compiled kernels vs the numpy
fallback vs the naive reference, forward and backward.

Usage: python benchmarks/bench_renderer.py [--size N] [--grid G] [--repeat K]
"""

import argparse
import time

import numpy as np

import layersplat.renderer as R
from layersplat.camera import Camera, compose_projection
from layersplat.composer import compose
from layersplat.initializer import initialize
from layersplat.renderer.naive import render_naive_prepared
from layersplat.synthetic import layered_depth, textured_image
from layersplat.types import DeltaSet, Extrinsics, Intrinsics


def build_scene(size):
    image = textured_image(size)
    depth = layered_depth(size)
    base = initialize(image, depth)
    return compose(base, DeltaSet.zeros(base.grid_w, base.grid_h))


def time_call(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=128, help="source image size")
    ap.add_argument("--viewport", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--naive", action="store_true",
                    help="also time the per-pixel reference (slow)")
    args = ap.parse_args()

    scene = build_scene(args.size)
    w = h = args.viewport
    src = Camera(
        Intrinsics(args.size, args.size, args.size / 2, args.size / 2).to_ndc(
            args.size, args.size
        ),
        Extrinsics.identity(),
    )
    tgt = Camera(
        Intrinsics(float(w), float(w), w / 2, h / 2),
        Extrinsics.from_rt(np.eye(3), [0.02, 0.0, 0.0]),
    )
    proj = compose_projection(src, tgt)
    prep = R.prepare(scene, proj, (w, h))
    pairs = int(prep.tile_offsets[-1])
    print(
        f"scene: {scene.count} Gaussians, viewport {w}x{h}, "
        f"{pairs} tile-splat pairs, backend default = {R.BACKEND}"
    )

    rng = np.random.default_rng(0)
    up_c = rng.normal(size=(h, w, 3))
    up_a = rng.normal(size=(h, w))
    up_d = rng.normal(size=(h, w))

    backends = ["numpy"] + (["cython"] if R.BACKEND == "cython" else [])
    results = {}
    for backend in backends:
        fwd = time_call(lambda: R.render_prepared(prep, backend=backend), args.repeat)
        bwd = time_call(
            lambda: R.render_backward_prepared(prep, up_c, up_a, up_d, backend=backend),
            args.repeat,
        )
        results[backend] = (fwd, bwd)

    if args.naive:
        results["naive"] = (time_call(lambda: render_naive_prepared(prep), 1), None)

    print(f"{'backend':>8s} {'forward':>12s} {'backward':>12s} {'speedup':>9s}")
    base_fwd = results["numpy"][0]
    for backend, (fwd, bwd) in results.items():
        bwd_s = f"{bwd * 1e3:9.2f} ms" if bwd is not None else "          --"
        print(
            f"{backend:>8s} {fwd * 1e3:9.2f} ms {bwd_s} {base_fwd / fwd:8.2f}x"
        )

    # The backends must agree on the actual pixels.
    outs = [R.render_prepared(prep, backend=b) for b in backends]
    if len(outs) == 2:
        diff = np.abs(outs[0].color.data - outs[1].color.data).max()
        print(f"max |color difference| between backends: {diff:.2e}")


if __name__ == "__main__":
    main()
