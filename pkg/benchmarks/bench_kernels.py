"""Time the numba kernels against their pure-numpy counterparts.

    python benchmarks/bench_kernels.py --size 64 --repeat 5

Both paths get identical uniform blocks, so the script also confirms that
their outputs agree. Set POTTSABC_DISABLE_NUMBA=1 to make the library itself
use the numpy path; this script always times both.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from pottsabc import kernels
from pottsabc._accel import NUMBA_OK


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(size, k, steps, rng):
    z0 = rng.integers(1, k + 1, (size, size)).astype(np.int64)
    y = rng.normal(size=(size, size)) * 2
    mu = np.arange(k, dtype=float) * 2
    var = np.full(k, 1.0)
    u_sw = rng.random((steps, kernels.sw_uniforms_per_step(size, size)))
    u_gb = rng.random((steps, size * size))
    u_cb = rng.random((1, size * size))

    def sw(impl):
        z = z0.copy()
        stats = np.zeros(steps, np.int64)
        impl["sw_block"](z, k, 0.9, u_sw, stats)
        return z

    def gibbs(impl):
        z = z0.copy()
        impl["gibbs_block"](z, k, 0.9, u_gb, np.zeros(0, np.int64))
        return z

    def cheq(impl):
        z = z0.copy()
        impl["cheq_block"](z, y, -0.5 * np.log(2 * np.pi * var), mu, 1 / (2 * var), 0.9, u_cb)
        return z

    def suff(impl):
        return impl["suff_stat"](z0)

    def enum(impl):
        return impl["enumerate_counts"](4, 4, 2)

    return {
        f"swendsen-wang x{steps} ({size}x{size})": sw,
        f"raster gibbs x{steps} ({size}x{size})": gibbs,
        f"chequerboard sweep ({size}x{size})": cheq,
        f"sufficient statistic ({size}x{size})": suff,
        "enumerate 4x4, k=2": enum,
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if not NUMBA_OK:
        print("numba is disabled or missing; only the numpy path can be timed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'numba':>11s} {'numpy':>11s} {'speedup':>8s}  agree")
    for name, fn in cases(args.size, args.k, args.steps, rng).items():
        t_np, out_np = best_of(lambda: fn(kernels.IMPLEMENTATIONS["numpy"]), args.repeat)
        if NUMBA_OK:
            fn(kernels.IMPLEMENTATIONS["numba"])  # compile outside the timing
            t_nb, out_nb = best_of(lambda: fn(kernels.IMPLEMENTATIONS["numba"]), args.repeat)
            agree = np.array_equal(np.asarray(out_nb), np.asarray(out_np))
            print(f"{name:40s} {t_nb * 1e3:9.3f}ms {t_np * 1e3:9.3f}ms {t_np / t_nb:7.1f}x  {agree}")
        else:
            print(f"{name:40s} {'-':>11s} {t_np * 1e3:9.3f}ms {'-':>8s}  -")


if __name__ == "__main__":
    main()
