#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Runs the GRU and conv1d hot loops at benchmark-like shapes on both
implementations and reports per-call times plus end-to-end training
throughput. Select the package-wide backend with HCTMG_BACKEND=numpy|numba.

    python benchmarks/bench_kernels.py [--repeats 20]
"""

import argparse
import time

import numpy as np

from hctmg.data import SyntheticSpec, generate_synthetic
from hctmg.kernels import numba_impl, numpy_impl
from hctmg.model import HctConfig, init_hct
from hctmg.training import TrainConfig, train


def _time(fn, repeats):
    fn()  # warmup (jit compile on the numba path)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_gru(repeats):
    rng = np.random.default_rng(0)
    B, L, d = 36, 375, 40  # audio-like stream at benchmark width
    xz, xr, xh = (rng.standard_normal((B, L, d)).astype(np.float32) for _ in range(3))
    us = tuple(rng.standard_normal((d, d)).astype(np.float32) * 0.3 for _ in range(3))
    h0 = np.zeros((B, d), dtype=np.float32)
    bufs = lambda: tuple(np.empty_like(xz) for _ in range(4))

    rows = []
    for name, impl in (("numpy", numpy_impl), ("numba", numba_impl)):
        h, z, r, hc = bufs()
        t_fwd = _time(lambda: impl.gru_forward(h, z, r, hc, xz, xr, xh, *us, h0),
                      repeats)
        g = np.ones_like(xz)
        gz, gr, ghc = (np.empty_like(g) for _ in range(3))
        gh0 = np.empty((B, d), dtype=np.float32)
        t_bwd = _time(lambda: impl.gru_backward(gz, gr, ghc, gh0, g, h, z, r, hc,
                                                *us, h0), repeats)
        rows.append((f"gru fwd [{B}x{L}x{d}]", name, t_fwd))
        rows.append((f"gru bwd [{B}x{L}x{d}]", name, t_bwd))
    return rows


def bench_conv(repeats):
    rng = np.random.default_rng(1)
    B, L, din, dout, k = 36, 500, 20, 40, 3
    x = rng.standard_normal((B, L, din)).astype(np.float32)
    w = rng.standard_normal((dout, din, k)).astype(np.float32)
    b = rng.standard_normal(dout).astype(np.float32)
    rows = []
    for name, impl in (("numpy", numpy_impl), ("numba", numba_impl)):
        out = np.empty((B, L, dout), dtype=np.float32)
        t_fwd = _time(lambda: impl.conv1d_forward(out, x, w, b), repeats)
        g = np.ones_like(out)

        def bwd():
            gx = np.zeros_like(x)
            gw = np.zeros_like(w)
            gb = np.zeros(dout, dtype=np.float32)
            impl.conv1d_backward(gx, gw, gb, g, x, w)
        t_bwd = _time(bwd, repeats)
        rows.append((f"conv1d fwd [{B}x{L}x{din}->{dout} k{k}]", name, t_fwd))
        rows.append((f"conv1d bwd [{B}x{L}x{din}->{dout} k{k}]", name, t_bwd))
    return rows


def bench_training(epochs=2):
    shapes = {"T": (16, 16), "A": (20, 16), "V": (18, 16)}
    ds = generate_synthetic(SyntheticSpec(n=360, shapes=shapes, noise_sigma=0.2, seed=0))
    cfg = HctConfig(hidden=16, layers=2, heads=4,
                    conv_kernels={"T": 1, "A": 1, "V": 1},
                    input_dims={m: 16 for m in shapes},
                    max_lengths={m: shapes[m][0] for m in shapes}, seed=0)
    params = init_hct(cfg)
    tc = TrainConfig(batch_size=36, epochs=1, seed=0, eval_every=0)
    train(params, ds, tc)  # warmup
    t0 = time.perf_counter()
    train(params, ds, TrainConfig(batch_size=36, epochs=epochs, seed=0, eval_every=0))
    steps = epochs * (360 // 36)
    return (time.perf_counter() - t0) / steps


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()

    rows = bench_gru(args.repeats) + bench_conv(args.repeats)
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  backend  per-call")
    baselines = {}
    for label, backend, t in rows:
        speedup = ""
        if backend == "numpy":
            baselines[label] = t
        else:
            speedup = f"  ({baselines[label] / t:.1f}x vs numpy)"
        print(f"{label:<{width}}  {backend:<7}  {t * 1e3:8.2f} ms{speedup}")

    from hctmg import kernels
    per_step = bench_training()
    print(f"\nend-to-end training ({kernels.BACKEND} backend): "
          f"{per_step * 1e3:.0f} ms/step")


if __name__ == "__main__":
    main()
