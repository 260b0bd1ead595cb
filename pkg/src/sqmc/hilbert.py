"""Hilbert space-filling curve at fixed dyadic depth.

Maps between points of [0,1)^d and integer positions along the depth-m
approximation of the Hilbert curve, entirely in integer arithmetic after
the initial coordinate quantization.  Used to impose a locality-preserving
total order on particle clouds.

The orientation is fixed so that index 0 labels the cell containing the
origin at every depth, and d = 1 degenerates to the identity map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["HilbertMap", "default_depth", "point_to_index", "index_to_cell_center", "hilbert_sort"]

MAX_TOTAL_BITS = 126
# beyond 52 bits per axis, cell centers are no longer exact in float64
MAX_EXACT_AXIS_BITS = 52


def default_depth(d: int) -> int:
    """Bits per axis keeping the full index within 62 bits (and centers exact)."""
    return min(62 // d, MAX_EXACT_AXIS_BITS)


@dataclass(frozen=True)
class HilbertMap:
    """Curve parameters: spatial dimension and bits per axis."""

    d: int
    depth_m: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if self.depth_m == 0:
            object.__setattr__(self, "depth_m", default_depth(self.d))
        if self.depth_m < 1:
            raise ValueError("depth_m must be >= 1")
        if self.d * self.depth_m > MAX_TOTAL_BITS:
            raise ValueError(f"total index bits {self.d * self.depth_m} > {MAX_TOTAL_BITS}")

    @property
    def total_bits(self) -> int:
        return self.d * self.depth_m

    @property
    def n_cells(self) -> int:
        return 1 << self.total_bits


def _quantize(hm: HilbertMap, x: np.ndarray) -> np.ndarray:
    if np.any(~np.isfinite(x)) or np.any(x < 0.0) or np.any(x >= 1.0):
        raise ValueError("coordinates must lie in [0, 1)")
    # scaling by a power of two is exact, so the floor is the true cell index
    ints = np.floor(x * float(1 << hm.depth_m)).astype(np.uint64)
    return np.minimum(ints, np.uint64((1 << hm.depth_m) - 1))


def _axes_to_transpose(X: np.ndarray, m: int) -> np.ndarray:
    """Skilling sweep turning axis words into the transposed Hilbert index.

    X has shape (d, N); the sweep works bit plane by bit plane with only
    XOR/AND/shift operations, vectorized over the N points.
    """
    d = X.shape[0]
    one = np.uint64(1)
    for q in range(m - 1, 0, -1):
        Q = np.uint64(1) << np.uint64(q)
        P = Q - one
        for i in range(d):
            mask = (X[i] & Q) != 0
            X[0][mask] ^= P
            t = (X[0] ^ X[i]) & P
            t[mask] = 0
            X[0] ^= t
            X[i] ^= t
    for i in range(1, d):
        X[i] ^= X[i - 1]
    t = np.zeros_like(X[0])
    for q in range(m - 1, 0, -1):
        Q = np.uint64(1) << np.uint64(q)
        t ^= np.where((X[d - 1] & Q) != 0, Q - one, np.uint64(0))
    X ^= t
    return X


def _transpose_to_axes(X: np.ndarray, m: int) -> np.ndarray:
    """Inverse of :func:`_axes_to_transpose`."""
    d = X.shape[0]
    t = X[d - 1] >> np.uint64(1)
    for i in range(d - 1, 0, -1):
        X[i] ^= X[i - 1]
    X[0] ^= t
    for q in range(1, m):
        Q = np.uint64(1) << np.uint64(q)
        P = Q - np.uint64(1)
        for i in range(d - 1, -1, -1):
            mask = (X[i] & Q) != 0
            X[0][mask] ^= P
            t = (X[0] ^ X[i]) & P
            t[mask] = 0
            X[0] ^= t
            X[i] ^= t
    return X


def _interleave(X: np.ndarray, m: int):
    """Pack transpose words into single indices, MSB-first across axes."""
    d, n = X.shape
    if d * m <= 63:
        h = np.zeros(n, dtype=np.uint64)
        for b in range(m - 1, -1, -1):
            for i in range(d):
                h = (h << np.uint64(1)) | ((X[i] >> np.uint64(b)) & np.uint64(1))
        return h
    cols = [[int(v) for v in X[i]] for i in range(d)]
    out = np.empty(n, dtype=object)
    for p in range(n):
        h = 0
        for b in range(m - 1, -1, -1):
            for i in range(d):
                h = (h << 1) | ((cols[i][p] >> b) & 1)
        out[p] = h
    return out


def _deinterleave(h: np.ndarray, m: int, d: int) -> np.ndarray:
    n = len(h)
    X = np.zeros((d, n), dtype=np.uint64)
    if d * m <= 63:
        hh = h.astype(np.uint64)
        pos = d * m
        for b in range(m - 1, -1, -1):
            for i in range(d):
                pos -= 1
                X[i] |= ((hh >> np.uint64(pos)) & np.uint64(1)) << np.uint64(b)
    else:
        for p in range(n):
            v = int(h[p])
            pos = d * m
            for b in range(m - 1, -1, -1):
                for i in range(d):
                    pos -= 1
                    X[i, p] |= np.uint64(((v >> pos) & 1) << b)
    return X


def point_to_index(hm: HilbertMap, x: np.ndarray):
    """Curve position of the depth-m cell containing each point.

    Parameters
    ----------
    x : array, shape (N, d) or (d,)
        Points in [0,1)^d.

    Returns
    -------
    Integer array of length N (uint64 when the index fits 63 bits, Python
    ints otherwise); a scalar for a single point.
    """
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 1
    if scalar:
        x = x[None, :]
    if x.shape[1] != hm.d:
        raise ValueError(f"expected {hm.d}-dimensional points")
    ints = _quantize(hm, x)
    if hm.d == 1:
        h = ints[:, 0]
    else:
        h = _interleave(_axes_to_transpose(ints.T.copy(), hm.depth_m), hm.depth_m)
    return h[0] if scalar else h


def index_to_cell_center(hm: HilbertMap, k) -> np.ndarray:
    """Center of the depth-m cell at curve position k.

    Round-trips through :func:`point_to_index` as long as depth_m stays
    within float64 resolution (the default depths do).
    """
    ks = np.atleast_1d(np.asarray(k, dtype=object))
    if any(int(v) < 0 or int(v) >= hm.n_cells for v in ks):
        raise ValueError("index out of range for this map")
    if hm.d == 1:
        axes = np.array([[int(v) for v in ks]], dtype=np.uint64)
    else:
        axes = _transpose_to_axes(_deinterleave(ks, hm.depth_m, hm.d), hm.depth_m)
    centers = (axes.T.astype(np.float64) + 0.5) / float(1 << hm.depth_m)
    return centers[0] if np.isscalar(k) or np.asarray(k).ndim == 0 else centers


def hilbert_sort(hm: HilbertMap, xs: np.ndarray) -> np.ndarray:
    """Permutation ordering points by nondecreasing curve position.

    Ties (points falling in one cell) break by lexicographic coordinate
    order, then by original position, so the order is a deterministic
    total order.
    """
    xs = np.asarray(xs, dtype=np.float64)
    h = point_to_index(hm, xs)
    if h.dtype == object:
        key = sorted(range(len(h)), key=lambda i: (h[i], tuple(xs[i]), i))
        return np.array(key, dtype=np.int64)
    # lexsort: last key is primary; stability yields the positional tiebreak
    keys = tuple(xs[:, j] for j in range(xs.shape[1] - 1, -1, -1)) + (h,)
    return np.lexsort(keys)


def count_index_collisions(hm: HilbertMap, xs: np.ndarray) -> int:
    """Number of points sharing a cell with another point (diagnostic)."""
    h = point_to_index(hm, np.asarray(xs, dtype=np.float64))
    if h.dtype == object:
        h = np.array([int(v) % (1 << 63) for v in h], dtype=np.uint64)
    _, counts = np.unique(h, return_counts=True)
    return int(counts[counts > 1].sum())
