"""Benchmark the compiled kernels against the pure-Python fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--walk-steps N] [--tags N] [--repeats R]
"""

import argparse
import time

import numpy as np

from polarlink._kernels import _purepy

try:
    from polarlink._kernels import _native
except ImportError:
    _native = None


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_rotation_walk(n_steps, repeats):
    rng = np.random.default_rng(0)
    axes = rng.standard_normal((n_steps, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = rng.normal(0.0, 0.01, n_steps)
    r0 = np.eye(3)
    stride = max(1, n_steps // 100)
    results = {}
    results["python"] = timeit(lambda: _purepy.rotation_walk(r0, axes, angles, stride), repeats)
    if _native is not None:
        results["native"] = timeit(
            lambda: _native.rotation_walk(r0, axes, angles, stride), repeats
        )
        rp, _ = _purepy.rotation_walk(r0, axes, angles, stride)
        rn, _ = _native.rotation_walk(r0, axes, angles, stride)
        assert np.allclose(rp, rn, atol=1e-12), "backends disagree"
    return results


def bench_greedy_match(n_tags, repeats):
    rng = np.random.default_rng(1)
    span = n_tags * 5e-6
    ref = np.sort(rng.uniform(0, span, n_tags))
    tags = np.sort(rng.uniform(0, span, n_tags))
    half_window = 2e-6
    results = {}
    results["python"] = timeit(lambda: _purepy.greedy_match(ref, tags, half_window), repeats)
    if _native is not None:
        results["native"] = timeit(lambda: _native.greedy_match(ref, tags, half_window), repeats)
        assert _purepy.greedy_match(ref, tags, half_window) == _native.greedy_match(
            ref, tags, half_window
        ), "backends disagree"
    return results


def report(name, size, results):
    py = results["python"]
    line = f"{name:<16} n={size:<9} python {py * 1e3:9.2f} ms"
    if "native" in results:
        nat = results["native"]
        line += f"   native {nat * 1e3:9.2f} ms   speedup {py / nat:6.1f}x"
    else:
        line += "   (compiled backend unavailable)"
    print(line)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--walk-steps", type=int, default=200_000)
    parser.add_argument("--tags", type=int, default=200_000)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    report("rotation_walk", args.walk_steps, bench_rotation_walk(args.walk_steps, args.repeats))
    report("greedy_match", args.tags, bench_greedy_match(args.tags, args.repeats))


if __name__ == "__main__":
    main()
