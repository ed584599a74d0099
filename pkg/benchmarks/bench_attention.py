#!/usr/bin/env python3
"""Benchmark the compiled attention kernels against the numpy fallback.

Times attention_forward and attention_backward on block workloads shaped
like real training steps (batch x temporal-blocks x windows blocks of
block_len x window_size nodes) and prints per-call medians plus the
speedup of the compiled extension over pure numpy.

Usage: python benchmarks/bench_attention.py [--repeats N] [--dtype DTYPE]
"""

import argparse
import math
import statistics
import time

import numpy as np

from hwgat._kernels import fallback

try:
    from hwgat._kernels import _attention as compiled
except ImportError:
    compiled = None

# label, blocks, heads, block nodes, head dim: one forward's worth of
# blocks for (batch, frames, block_len, windows, embed, heads) settings
CASES = [
    ("toy layer 1      ", 8 * 4 * 4, 2, 32, 4),       # b=8  F=8  d=8
    ("default layer 1  ", 16 * 32 * 4, 4, 32, 16),    # b=16 F=64 d=64
    ("default layer 2  ", 16 * 16 * 4, 4, 32, 32),    # merged once
    ("long blocks T=4  ", 16 * 16 * 4, 4, 64, 16),    # b=16 F=64 T=4
]


def make_case(blocks, heads, nodes, head_dim, dtype, seed=0):
    rng = np.random.default_rng(seed)
    shape = (blocks, heads, nodes, head_dim)
    q, k, v = (rng.standard_normal(shape).astype(dtype) for _ in range(3))
    mask = rng.random((nodes, nodes)) < 0.3
    mask |= mask.T
    np.fill_diagonal(mask, True)
    bias = np.where(mask, 0.0, -np.inf).astype(dtype)[None]
    idx = np.zeros(blocks, dtype=np.int64)
    scale = 1.0 / math.sqrt(head_dim)
    return q, k, v, bias, idx, scale


def time_call(fn, repeats):
    fn()  # warmup
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    return statistics.median(samples)


def bench_backend(mod, case, repeats):
    q, k, v, bias, idx, scale = case
    fwd = lambda: mod.attention_forward(q, k, v, bias, idx, scale)
    t_fwd = time_call(fwd, repeats)
    out, probs = mod.attention_forward(q, k, v, bias, idx, scale)
    dout = np.ones_like(out)
    bwd = lambda: mod.attention_backward(dout, q, k, v, probs, bias, idx, scale)
    t_bwd = time_call(bwd, repeats)
    return t_fwd, t_bwd, (out, probs)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=7)
    parser.add_argument("--dtype", default="float32",
                        choices=("float32", "float64"))
    args = parser.parse_args()

    if compiled is None:
        print("compiled extension unavailable; timing numpy fallback only")
    print(f"dtype={args.dtype} repeats={args.repeats} (median per call, ms)")
    header = f"{'case':18s} {'blocks':>6s} {'n':>4s}  " \
             f"{'numpy fwd':>10s} {'numpy bwd':>10s}"
    if compiled is not None:
        header += f" {'cy fwd':>10s} {'cy bwd':>10s} {'speedup':>8s}"
    print(header)

    for label, blocks, heads, nodes, head_dim in CASES:
        case = make_case(blocks, heads, nodes, head_dim, args.dtype)
        np_fwd, np_bwd, np_res = bench_backend(fallback, case, args.repeats)
        row = f"{label:18s} {blocks:6d} {nodes:4d}  " \
              f"{np_fwd * 1e3:10.2f} {np_bwd * 1e3:10.2f}"
        if compiled is not None:
            cy_fwd, cy_bwd, cy_res = bench_backend(compiled, case,
                                                   args.repeats)
            drift = max(float(np.abs(a - b).max())
                        for a, b in zip(np_res, cy_res))
            speedup = (np_fwd + np_bwd) / (cy_fwd + cy_bwd)
            row += f" {cy_fwd * 1e3:10.2f} {cy_bwd * 1e3:10.2f} " \
                   f"{speedup:7.2f}x"
            tol = 2e-5 if args.dtype == "float32" else 1e-10
            if drift > tol:
                row += f"  MISMATCH {drift:.2e}"
        print(row)


if __name__ == "__main__":
    main()
