#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the numpy fallback.

Shapes mirror what training actually runs: feature-extractor convs on a
96px compact model and a 224px wide model, pooling, and the bilinear
sampler. Run after building the extension:

    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from cropenhance.kernels import _native, numpy_backend

if _native is None:
    raise SystemExit("native backend not built; run pip install -e . first")


def bench(fn, *args, reps=5, warmup=1):
    for _ in range(warmup):
        fn(*args)
    t0 = time.perf_counter()
    for _ in range(reps):
        fn(*args)
    return (time.perf_counter() - t0) / reps * 1e3  # ms


def row(label, np_ms, nat_ms):
    ratio = np_ms / nat_ms if nat_ms > 0 else float("inf")
    print(f"{label:<44} {np_ms:>9.3f} {nat_ms:>9.3f} {ratio:>7.2f}x")


def conv_case(label, c_in, c_out, size, k=3, stride=1, pads=(1, 1, 1, 1)):
    rng = np.random.default_rng(0)
    x = rng.random((c_in, size, size)).astype(np.float32)
    w = rng.random((c_out, c_in, k, k)).astype(np.float32)
    row(
        f"conv2d fwd {label}",
        bench(numpy_backend.conv2d_forward, x, w, stride, pads),
        bench(_native.conv2d_forward, x, w, stride, pads),
    )
    gy = numpy_backend.conv2d_forward(x, w, stride, pads)
    row(
        f"conv2d bwd-weight {label}",
        bench(numpy_backend.conv2d_backward_weight, gy, x, k, k, stride, pads),
        bench(_native.conv2d_backward_weight, gy, x, k, k, stride, pads),
    )
    row(
        f"conv2d bwd-input {label}",
        bench(numpy_backend.conv2d_backward_input, gy, w, x.shape, stride, pads),
        bench(_native.conv2d_backward_input, gy, w, x.shape, stride, pads),
    )


def main():
    print(f"{'kernel':<44} {'numpy ms':>9} {'native ms':>9} {'speedup':>8}")
    conv_case("3->16 @96 (compact head)", 3, 16, 96)
    conv_case("32->64 @24 (compact mid)", 32, 64, 24)
    conv_case("64->64 @6 (compact tail)", 64, 64, 6)
    conv_case("64->64 @96 (enhancer body)", 64, 64, 96)
    conv_case("256->512 @28 (wide mid)", 256, 512, 28)

    rng = np.random.default_rng(1)
    x = rng.random((64, 96, 96)).astype(np.float32)
    row(
        "maxpool2d fwd 64x96x96 k=2",
        bench(numpy_backend.maxpool2d_forward, x, 2),
        bench(_native.maxpool2d_forward, x, 2),
    )
    row(
        "avgpool2d fwd 64x96x96 k=2",
        bench(numpy_backend.avgpool2d_forward, x, 2),
        bench(_native.avgpool2d_forward, x, 2),
    )

    img = rng.random((3, 224, 224)).astype(np.float32)
    px = rng.uniform(0, 223, (224, 224))
    py = rng.uniform(0, 223, (224, 224))
    row(
        "bilinear fwd 3x224x224",
        bench(numpy_backend.bilinear_forward, img, px, py),
        bench(_native.bilinear_forward, img, px, py),
    )
    gy = rng.random((3, 224, 224)).astype(np.float32)
    row(
        "bilinear bwd 3x224x224 (src+coords)",
        bench(numpy_backend.bilinear_backward, gy, img, px, py, True, True),
        bench(_native.bilinear_backward, gy, img, px, py, True, True),
    )


if __name__ == "__main__":
    main()
