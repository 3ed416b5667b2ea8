"""Benchmark the compiled kernels against the numpy fallback.

Run:  python benchmarks/bench_kernels.py [--reps N]

Shapes mirror one training episode at desk scale (20 videos, M=16 dense
frames, T=8 selected, 48x48 frames, 32x32 scan input).  This table is
what justifies the kernel routing in stsampler.kernels: conv goes through
im2col + BLAS everywhere, the resampling and top-k kernels prefer the
compiled extension.
"""

import argparse
import time

import numpy as np

from stsampler.kernels import numpy_backend

try:
    from stsampler.kernels import _ckernels
except ImportError:
    _ckernels = None


def timeit(fn, reps):
    fn()
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def bench(reps):
    rng = np.random.default_rng(0)
    rows = []

    def add_row(name, np_fn, c_fn):
        t_np = timeit(np_fn, reps)
        t_c = timeit(c_fn, reps) if c_fn is not None else float("nan")
        rows.append((name, t_np, t_c))

    # convolution at scan and backbone shapes
    for tag, xs, ws in [
        ("conv fwd scan L2 (320,16,16,16)", (320, 16, 16, 16), (32, 16, 3, 3)),
        ("conv fwd backbone L1 (160,1,48,48)", (160, 1, 48, 48), (16, 1, 3, 3)),
        ("conv fwd backbone L2 (160,16,24,24)", (160, 16, 24, 24), (32, 16, 3, 3)),
    ]:
        x = rng.standard_normal(xs).astype(np.float32)
        w = rng.standard_normal(ws).astype(np.float32)
        add_row(tag, lambda x=x, w=w: numpy_backend.conv2d_forward(x, w, 2, 1),
                None if _ckernels is None
                else (lambda x=x, w=w: _ckernels.conv2d_forward(x, w, 2, 1)))
        y = numpy_backend.conv2d_forward(x, w, 2, 1)
        g = rng.standard_normal(y.shape).astype(np.float32)
        add_row(tag.replace("fwd", "bwd-x"),
                lambda g=g, w=w, xs=xs: numpy_backend.conv2d_backward_input(
                    g, w, 2, 1, xs[2], xs[3]),
                None if _ckernels is None
                else (lambda g=g, w=w, xs=xs: _ckernels.conv2d_backward_input(
                    g, w, 2, 1, xs[2], xs[3])))

    # resampling at amplifier shapes
    x = rng.uniform(0, 1, (160, 1, 48, 48)).astype(np.float32)
    g = rng.standard_normal((160, 1, 64, 64)).astype(np.float32)
    add_row("resize fwd 48->64 (160 maps)",
            lambda: numpy_backend.resize_forward(x, 64, 64),
            None if _ckernels is None else (lambda: _ckernels.resize_forward(x, 64, 64)))
    add_row("resize bwd 64->48 (160 maps)",
            lambda: numpy_backend.resize_backward(g, 48, 48),
            None if _ckernels is None else (lambda: _ckernels.resize_backward(g, 48, 48)))

    ys = np.sort(rng.uniform(-0.5, 47.5, (160, 64)).astype(np.float32), axis=1)
    xsg = np.sort(rng.uniform(-0.5, 47.5, (160, 64)).astype(np.float32), axis=1)
    add_row("warp fwd (160 frames)",
            lambda: numpy_backend.warp_forward(x, ys, xsg),
            None if _ckernels is None else (lambda: _ckernels.warp_forward(x, ys, xsg)))
    add_row("warp bwd (160 frames)",
            lambda: numpy_backend.warp_backward(x, ys, xsg, g),
            None if _ckernels is None else (lambda: _ckernels.warp_backward(x, ys, xsg, g)))

    # smoothed top-k, one episode's worth of videos
    s = rng.uniform(0, 1, 16)
    z = rng.standard_normal((500, 16))
    up = rng.standard_normal((16, 8))
    _, idx = numpy_backend.topk_sample(s, z, 0.1, 8)

    def np_topk():
        for _ in range(20):
            numpy_backend.topk_sample(s, z, 0.1, 8)
            numpy_backend.topk_backward(idx, z, 0.1, up)

    def c_topk():
        for _ in range(20):
            _ckernels.topk_sample(s, z, 0.1, 8)
            _ckernels.topk_backward(idx, z, 0.1, up)

    add_row("perturbed topk fwd+bwd (20 videos)", np_topk,
            None if _ckernels is None else c_topk)
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=5)
    args = ap.parse_args()
    rows = bench(args.reps)
    print(f"{'kernel':42s} {'numpy (ms)':>12s} {'compiled (ms)':>14s} {'speedup':>8s}")
    for name, t_np, t_c in rows:
        ratio = t_np / t_c if t_c == t_c else float("nan")
        print(f"{name:42s} {t_np:12.2f} {t_c:14.2f} {ratio:8.2f}")
    if _ckernels is None:
        print("\ncompiled extension not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
