"""Benchmark the numba kernels against the pure-numpy fallback.

Run without arguments to time both backends (each in its own process,
since the backend is fixed at import time via DPS_DISABLE_NUMBA) and
print a comparison table:

    python3 benchmarks/bench_kernels.py
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

REPEATS = 5

CASES = [
    ("fft_batch 64x4096", "fft"),
    ("masked_softmax_grad b8 M256 N4096", "softmax"),
    ("accumulate_outer 8x256x4096", "outer"),
]


def _bench_one(which: str) -> float:
    from dps import kernels

    rng = np.random.default_rng(0)
    if which == "fft":
        z = rng.standard_normal((64, 4096)) + 1j * rng.standard_normal((64, 4096))
        fn = lambda: kernels.fft_batch(z, -1)
    elif which == "softmax":
        keys = rng.standard_normal((8, 1, 4096))
        order = np.argsort(-keys[:, 0], axis=1)[:, :256].astype(np.int64)
        upstream = rng.standard_normal((8, 256, 4096))
        fn = lambda: kernels.masked_softmax_grad(keys, order, upstream, 5.0, shared=True)
    elif which == "outer":
        out = np.zeros((8, 256, 4096))
        row = rng.standard_normal((8, 256))
        col = rng.standard_normal((8, 4096))
        fn = lambda: kernels.accumulate_outer(out, row, col)
    else:
        raise ValueError(which)
    fn()  # warm-up (includes JIT compilation on the numba path)
    t0 = time.perf_counter()
    for _ in range(REPEATS):
        fn()
    return (time.perf_counter() - t0) / REPEATS


def _run_backend(disable_numba: bool) -> dict:
    env = dict(os.environ, DPS_DISABLE_NUMBA="1" if disable_numba else "0")
    out = subprocess.run(
        [sys.executable, __file__, "--worker"],
        env=env, capture_output=True, text=True, check=True,
    )
    return json.loads(out.stdout)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.worker:
        from dps import kernels

        results = {"backend": "numba" if kernels.using_numba() else "numpy"}
        for label, which in CASES:
            results[label] = _bench_one(which)
        print(json.dumps(results))
        return

    numba = _run_backend(disable_numba=False)
    numpy_ = _run_backend(disable_numba=True)
    if numba["backend"] != "numba":
        print("note: numba unavailable; both columns use the numpy fallback")
    print(f"{'kernel':<40} {'numba (s)':>12} {'numpy (s)':>12} {'speedup':>9}")
    for label, _ in CASES:
        a, b = numba[label], numpy_[label]
        print(f"{label:<40} {a:>12.4f} {b:>12.4f} {b / a:>8.1f}x")


if __name__ == "__main__":
    main()
