"""Benchmark the compiled kernel core against the pure numpy fallback.

Times the two hot kernels at solver-realistic sizes and verifies that both
lanes return identical bits.  Run as `python benchmarks/bench_kernels.py`.
"""

import time

import numpy as np

from switchbsde.kernels import pure

try:
    from switchbsde.kernels import _core
except ImportError:
    _core = None


def _time(fn, *args, repeat=5):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_block_function(n_blocks=5_000_000):
    rng = np.random.default_rng(1)
    args = [rng.integers(0, 2**32, size=n_blocks, dtype=np.uint32) for _ in range(6)]
    rows = []
    t_pure, out_pure = _time(pure.philox4x32_10, *args, repeat=3)
    rows.append(("counter blocks", "python", n_blocks, t_pure, None))
    if _core is not None:
        t_core, out_core = _time(_core.philox4x32_10, *args, repeat=3)
        for a, b in zip(out_pure, out_core):
            assert np.array_equal(a, b), "lane outputs differ"
        rows.append(("counter blocks", "compiled", n_blocks, t_core, t_pure / t_core))
    return rows


def bench_root_solve(n_paths=100_000, n_obstacles=2, repeats=50):
    rng = np.random.default_rng(2)
    c = rng.normal(size=n_paths)
    obstacles = rng.normal(size=(n_paths, n_obstacles))
    coef = 2.56
    rows = []

    def run(fn):
        for _ in range(repeats):
            out = fn(c, obstacles, coef)
        return out

    t_pure, out_pure = _time(run, pure.penalized_root_batch, repeat=3)
    rows.append(("penalty roots", "python", n_paths * repeats, t_pure, None))
    if _core is not None:
        t_core, out_core = _time(run, _core.penalized_root_batch, repeat=3)
        assert np.array_equal(out_pure, out_core), "lane outputs differ"
        rows.append(("penalty roots", "compiled", n_paths * repeats, t_core, t_pure / t_core))
    return rows


def main():
    if _core is None:
        print("compiled core not built; benchmarking the python lane only")
    rows = bench_block_function() + bench_root_solve()
    print(f"{'kernel':<16} {'lane':<10} {'items':>12} {'seconds':>10} {'speedup':>9}")
    for kernel, lane, items, seconds, speedup in rows:
        extra = f"{speedup:8.1f}x" if speedup else "        -"
        print(f"{kernel:<16} {lane:<10} {items:>12,} {seconds:>10.4f} {extra}")
    if _core is not None:
        print("bit-identical outputs across lanes: verified")


if __name__ == "__main__":
    main()
