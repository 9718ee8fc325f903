"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one line per (kernel, size) with the best-of-``repeat`` time per call
for each backend and the speedup.  Numba compile time is excluded by a
warm-up call.
"""

import argparse
import timeit

import numpy as np

from dualmind import _kernels


def cases():
    rng = np.random.default_rng(0)
    for n in (1, 100, 10_000):
        th, om, u = rng.uniform(-3, 3, n), rng.normal(size=n), rng.uniform(-1, 1, n)
        yield "pendulum_substeps", n, (th, om, u, 6, 0.01, 9.81, 1.0, 1.0, 0.0, 2.0)
        s = [rng.normal(size=n) for _ in range(4)]
        yield "cartpole_substeps", n, (*s, u, 8, 0.01, 9.81, 1.0, 0.1, 0.5, 10.0)
    lengths = rng.integers(400, 502, size=200)
    offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
    flat = rng.normal(size=(int(lengths.sum()), 3)).astype(np.float32)
    for b in (16, 50, 1000):
        n_valid = (lengths - 64 + 1).astype(np.int64)
        draws = rng.integers(0, n_valid.sum(), size=b).astype(np.int64)
        yield "window_starts", b, (offsets, n_valid, draws)
        starts = _kernels.NUMPY["window_starts"](offsets, n_valid, draws)[1]
        yield "gather_windows", b, (flat, starts, 64)


def best_time(fn, args, repeat):
    fn(*args)  # warm-up (compiles numba)
    number = 1
    while timeit.timeit(lambda: fn(*args), number=number) < 0.05:
        number *= 4
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels.NUMBA is None:
        raise SystemExit("numba is not installed")
    print(f"{'kernel':<20}{'size':>7}{'numpy us':>12}{'numba us':>12}{'speedup':>9}")
    for name, size, kargs in cases():
        t_np = best_time(_kernels.NUMPY[name], kargs, args.repeat)
        t_nb = best_time(_kernels.NUMBA[name], kargs, args.repeat)
        print(f"{name:<20}{size:>7}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}{t_np / t_nb:>9.1f}")


if __name__ == "__main__":
    main()
