"""Time the numba kernel backend against the pure-numpy fallback.

Runs each hot kernel on a few workload sizes, reports the median wall time
per call for both backends and the speedup. Run from the repository root:

    python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from xtalssl import kernels


def median_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def image_block(lattice, reach):
    offsets = np.arange(-reach, reach + 1)
    grid = np.stack(np.meshgrid(offsets, offsets, offsets, indexing="ij"), axis=-1)
    images = grid.reshape(-1, 3).astype(np.float64)
    zero_index = int(np.flatnonzero((images == 0).all(axis=1))[0])
    return images @ lattice, zero_index


def neighbor_workload(rng, n_atoms):
    lattice = 6.0 * np.eye(3)
    cart = rng.uniform(0.0, 6.0, (n_atoms, 3))
    image_carts, zero_index = image_block(lattice, 2)
    return lambda: kernels.neighbor_candidates(cart, image_carts, zero_index, 8.0)


def scatter_workload(rng, n_edges, width, n_rows):
    x = rng.normal(size=(n_edges, width))
    index = rng.integers(0, n_rows, n_edges)
    return lambda: kernels.scatter_add_rows(x, index, n_rows)


def expand_workload(rng, n_edges):
    dist = rng.uniform(0.0, 8.0, n_edges)
    centers = np.arange(0.0, 8.2, 0.2)
    return lambda: kernels.gaussian_expand(dist, centers, 0.04)


WORKLOADS = [
    ("neighbor_candidates", "N=32", lambda rng: neighbor_workload(rng, 32)),
    ("neighbor_candidates", "N=96", lambda rng: neighbor_workload(rng, 96)),
    ("scatter_add_rows", "E=20k K=64", lambda rng: scatter_workload(rng, 20_000, 64, 2_000)),
    ("scatter_add_rows", "E=200k K=64", lambda rng: scatter_workload(rng, 200_000, 64, 20_000)),
    ("gaussian_expand", "E=20k", lambda rng: expand_workload(rng, 20_000)),
    ("gaussian_expand", "E=200k", lambda rng: expand_workload(rng, 200_000)),
]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()

    if not kernels.HAVE_NUMBA:
        print("numba is not installed; only the numpy backend is available")
        return

    print(f"{'kernel':<22} {'workload':<14} {'numpy':>12} {'numba':>12} {'speedup':>9}")
    for name, label, build in WORKLOADS:
        fn = build(np.random.default_rng(0))
        kernels.set_backend("numba")
        fn()  # trigger JIT compilation outside the timed region
        t_numba = median_time(fn, args.repeats)
        kernels.set_backend("numpy")
        t_numpy = median_time(fn, args.repeats)
        print(f"{name:<22} {label:<14} {t_numpy * 1e3:>10.3f}ms {t_numba * 1e3:>10.3f}ms "
              f"{t_numpy / t_numba:>8.1f}x")


if __name__ == "__main__":
    main()
