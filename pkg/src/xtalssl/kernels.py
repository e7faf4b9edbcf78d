"""Hot numeric kernels: numba-compiled with a pure-numpy fallback.

The inner loops that dominate graph construction and message aggregation
live here in two interchangeable implementations.  The active backend is
chosen once at import from the ``CT_BACKEND`` environment variable
("numba" or "numpy"); when unset, numba is used if it imports.  Both
backends iterate in the same (row-major) order so results agree to the
last bit for pure arithmetic and to ~1 ulp where libm calls differ.

``benchmarks/bench_kernels.py`` times the two backends against each other.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# pure-numpy implementations


def _neighbor_candidates_numpy(cart, image_carts, zero_image_index, cutoff):
    n = cart.shape[0]
    # disp[i, j, m] = position of atom j in image m relative to atom i
    disp = cart[None, :, None, :] + image_carts[None, None, :, :] - cart[:, None, None, :]
    d2 = disp[..., 0] * disp[..., 0] + disp[..., 1] * disp[..., 1] + disp[..., 2] * disp[..., 2]
    keep = d2 <= cutoff * cutoff
    idx = np.arange(n)
    keep[idx, idx, zero_image_index] = False
    src, dst, img = np.nonzero(keep)
    return (
        src.astype(np.int64),
        dst.astype(np.int64),
        img.astype(np.int64),
        np.sqrt(d2[keep]),
    )


def _scatter_add_rows_numpy(x, index, n_rows):
    out = np.zeros((n_rows, x.shape[1]), dtype=np.float64)
    np.add.at(out, index, x)
    return out


def _gaussian_expand_numpy(dist, centers, var):
    diff = dist[:, None] - centers[None, :]
    return np.exp(-(diff * diff) / var)


# ---------------------------------------------------------------------------
# numba implementations (same loop order as the numpy versions)

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _neighbor_candidates_numba(cart, image_carts, zero_image_index, cutoff):
        n = cart.shape[0]
        m = image_carts.shape[0]
        c2 = cutoff * cutoff
        count = 0
        for i in range(n):
            for j in range(n):
                for k in range(m):
                    if i == j and k == zero_image_index:
                        continue
                    dx = cart[j, 0] + image_carts[k, 0] - cart[i, 0]
                    dy = cart[j, 1] + image_carts[k, 1] - cart[i, 1]
                    dz = cart[j, 2] + image_carts[k, 2] - cart[i, 2]
                    if dx * dx + dy * dy + dz * dz <= c2:
                        count += 1
        src = np.empty(count, dtype=np.int64)
        dst = np.empty(count, dtype=np.int64)
        img = np.empty(count, dtype=np.int64)
        dist = np.empty(count, dtype=np.float64)
        e = 0
        for i in range(n):
            for j in range(n):
                for k in range(m):
                    if i == j and k == zero_image_index:
                        continue
                    dx = cart[j, 0] + image_carts[k, 0] - cart[i, 0]
                    dy = cart[j, 1] + image_carts[k, 1] - cart[i, 1]
                    dz = cart[j, 2] + image_carts[k, 2] - cart[i, 2]
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 <= c2:
                        src[e] = i
                        dst[e] = j
                        img[e] = k
                        dist[e] = np.sqrt(d2)
                        e += 1
        return src, dst, img, dist

    @numba.njit(cache=True)
    def _scatter_add_rows_numba(x, index, n_rows):
        out = np.zeros((n_rows, x.shape[1]), dtype=np.float64)
        for e in range(x.shape[0]):
            r = index[e]
            for c in range(x.shape[1]):
                out[r, c] += x[e, c]
        return out

    @numba.njit(cache=True)
    def _gaussian_expand_numba(dist, centers, var):
        out = np.empty((dist.shape[0], centers.shape[0]), dtype=np.float64)
        for e in range(dist.shape[0]):
            for k in range(centers.shape[0]):
                diff = dist[e] - centers[k]
                out[e, k] = np.exp(-(diff * diff) / var)
        return out


_IMPLS = {
    "numpy": {
        "neighbor_candidates": _neighbor_candidates_numpy,
        "scatter_add_rows": _scatter_add_rows_numpy,
        "gaussian_expand": _gaussian_expand_numpy,
    }
}
if HAVE_NUMBA:
    _IMPLS["numba"] = {
        "neighbor_candidates": _neighbor_candidates_numba,
        "scatter_add_rows": _scatter_add_rows_numba,
        "gaussian_expand": _gaussian_expand_numba,
    }

_backend = "numpy"


def set_backend(name: str) -> None:
    """Select the kernel backend ("numba" or "numpy")."""
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise ValueError("numba backend requested but numba is not importable")
    global _backend
    _backend = name


def active_backend() -> str:
    return _backend


def neighbor_candidates(cart, image_carts, zero_image_index, cutoff):
    """All (src, dst, image) triples with 0 < distance <= cutoff.

    ``cart``: (N, 3) cartesian site positions; ``image_carts``: (M, 3)
    cartesian lattice translations; ``zero_image_index``: row of the zero
    translation, excluded for src == dst.  Triples come out in
    lexicographic (src, dst, image) order.
    """
    cart = np.ascontiguousarray(cart, dtype=np.float64)
    image_carts = np.ascontiguousarray(image_carts, dtype=np.float64)
    return _IMPLS[_backend]["neighbor_candidates"](
        cart, image_carts, int(zero_image_index), float(cutoff)
    )


def scatter_add_rows(x, index, n_rows):
    """out[index[e]] += x[e] over rows, accumulated in row order."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    index = np.ascontiguousarray(index, dtype=np.int64)
    return _IMPLS[_backend]["scatter_add_rows"](x, index, int(n_rows))


def gaussian_expand(dist, centers, var):
    """exp(-(d - mu_k)^2 / var) for every distance/center pair, (E, K)."""
    dist = np.ascontiguousarray(dist, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    return _IMPLS[_backend]["gaussian_expand"](dist, centers, float(var))


def _init_backend_from_env() -> None:
    choice = os.environ.get("CT_BACKEND")
    if choice is None:
        choice = "numba" if HAVE_NUMBA else "numpy"
    set_backend(choice)


_init_backend_from_env()
