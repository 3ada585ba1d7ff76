"""Benchmark the compiled blend kernel against the pure-numpy fallback.

Usage: python3 benchmarks/bench_blend.py [--gaussians N] [--size S] [--repeat R]

Both kernels implement identical blending semantics; this script times a
full-scene render with each and reports the speedup, verifying along the
way that the outputs agree to float tolerance.
"""

import argparse
import time

import numpy as np

from oig import rasterizer
from oig import _kernel_py
from oig.synth import SynthConfig, _make_scene, _make_views


def build_fixture(n_gaussians, size):
    per_object = max(1, n_gaussians // 8)
    config = SynthConfig(n_objects=8, gaussians_per_object=per_object,
                         n_views=1, image_size=size, embed_dim=8, seed=0)
    scene = _make_scene(config)
    view = _make_views(config)[0]
    rng = np.random.default_rng(42)
    payloads = rng.normal(size=(len(scene), 6))
    return scene, view, payloads


def time_backend(kernel, splats, payloads, width, height, repeat):
    saved = rasterizer._kernel
    rasterizer._kernel = kernel
    try:
        fmap, _ = rasterizer.blend(splats, payloads, width, height)  # warmup
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            rasterizer.blend(splats, payloads, width, height)
            best = min(best, time.perf_counter() - t0)
        return best, fmap
    finally:
        rasterizer._kernel = saved


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--gaussians", type=int, default=2000)
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    scene, view, payloads = build_fixture(args.gaussians, args.size)
    splats = rasterizer.project(scene, view)
    print(f"scene: {len(scene)} gaussians, {args.size}x{args.size} px, "
          f"{len(splats)} visible splats")

    t_py, map_py = time_backend(_kernel_py, splats, payloads,
                                view.width, view.height, args.repeat)
    print(f"python kernel: {t_py * 1e3:9.2f} ms")

    try:
        from oig import _kernel as compiled
    except ImportError:
        print("cython kernel: not built (pip install -e . to compile)")
        return
    t_cy, map_cy = time_backend(compiled, splats, payloads,
                                view.width, view.height, args.repeat)
    print(f"cython kernel: {t_cy * 1e3:9.2f} ms")
    print(f"speedup: {t_py / t_cy:.1f}x")

    err = np.abs(map_py.data - map_cy.data).max()
    print(f"max |python - cython|: {err:.3e}")
    assert err < 1e-9, "kernels disagree"


if __name__ == "__main__":
    main()
