"""Compiled engine vs pure Python/numpy fallback.

Times the interpreter on every kernel (native and one hooked technique) and
the batch numerics on 10^6 values.  Compilation is excluded: each compiled
path is warmed up once before timing.

    python benchmarks/bench_jit.py [--repeat N] [--skip-interp]
"""
import argparse
import time

import numpy as np

from aisc import _accel
from aisc.interp import run
from aisc.kernels import KERNEL_NAMES, generate_input, load_kernel
from aisc.numerics import discard_mantissa_bits_array, div_to_mul_array, splitmix_uniforms
from aisc.transforms import Technique, make_technique


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def row(label, t_jit, t_py):
    speed = t_py / t_jit if t_jit > 0 else float("inf")
    print(f"{label:34s} {t_jit * 1e3:10.2f} {t_py * 1e3:11.2f} {speed:9.1f}x")


def bench_interp(repeat):
    for name in KERNEL_NAMES:
        spec = load_kernel(name)
        p, img = spec.program(), generate_input(spec)
        for tech in ("native", "dptohp"):
            hooks = make_technique(p, Technique.parse(tech)).hooks
            a = run(p, img, hooks, jit=True)  # warm-up and sanity check
            b = run(p, img, hooks, jit=False)
            assert a.stats == b.stats
            t_jit = best_of(lambda: run(p, img, hooks, jit=True), repeat)
            t_py = best_of(lambda: run(p, img, hooks, jit=False), max(1, repeat // 3))
            row(f"run {name}@{tech} ({a.stats.total_dynamic})", t_jit, t_py)


def bench_numerics(repeat, n=10**6):
    rng = np.random.default_rng(0)
    x = rng.uniform(-1e3, 1e3, n)
    d = 10.0 ** rng.uniform(-3, 3, n)
    cases = [
        ("discard 48 bits", lambda jit: discard_mantissa_bits_array(x, 48, jit=jit)),
        ("div_to_mul NR", lambda jit: div_to_mul_array(x, d, True, jit=jit)),
        ("splitmix64 draws", lambda jit: splitmix_uniforms(12345, n, jit=jit)),
    ]
    for label, fn in cases:
        assert np.array_equal(fn(True), fn(False))
        row(f"{label} (10^6)", best_of(lambda: fn(True), repeat), best_of(lambda: fn(False), repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-interp", action="store_true")
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'case':34s} {'jit ms':>10s} {'python ms':>11s} {'speedup':>10s}")
    if not args.skip_interp:
        bench_interp(args.repeat)
    bench_numerics(args.repeat)


if __name__ == "__main__":
    main()
