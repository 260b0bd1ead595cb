"""Low-discrepancy point sets.

Sobol sequences (Gray-code construction, direction numbers embedded for
dimensions 1..64), Owen-style nested scrambling driven by a counter-based
hash, IID uniform controls, and an exact extreme-discrepancy computation
for small point sets, used as a test oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

__all__ = [
    "PointSet",
    "UnsupportedDimensionError",
    "OracleLimitError",
    "generate_sobol",
    "generate_iid",
    "sort_by_first_coordinate",
    "measure_extreme_discrepancy",
    "save_points_csv",
]

MAX_SOBOL_DIM = 512
SOBOL_BITS = 32

GENERATORS = ("sobol", "van_der_corput", "iid")


class UnsupportedDimensionError(ValueError):
    """Requested dimension exceeds the embedded direction-number table."""


class OracleLimitError(ValueError):
    """Exact discrepancy computation requested outside its supported range."""


@dataclass(frozen=True)
class PointSet:
    """N points in [0,1)^s plus generator metadata.

    The coordinate array is made read-only on construction; PointSet values
    are safe to share across threads.
    """

    points: np.ndarray
    generator: str
    scramble_seed: int | None = None
    sorted_by_first_coord: bool = False

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2:
            raise ValueError("points must be a 2-d array")
        n, s = pts.shape
        if n < 1 or s < 1:
            raise ValueError("need N >= 1 and s >= 1")
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}")
        if not np.all((pts >= 0.0) & (pts < 1.0)):
            raise ValueError("coordinates must lie in [0, 1)")
        if self.sorted_by_first_coord and np.any(np.diff(pts[:, 0]) < 0):
            raise ValueError("sorted_by_first_coord set but first column is not sorted")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@lru_cache(maxsize=1)
def _direction_table() -> list[dict]:
    text = resources.files("sqmc.data").joinpath("sobol_directions.json").read_text()
    return json.loads(text)["dimensions"]


@lru_cache(maxsize=None)
def _direction_integers(dim_index: int, bits: int = SOBOL_BITS) -> np.ndarray:
    """Direction integers v_1..v_bits for one dimension (0-based index).

    v_k carries the k-th column of the generating matrix, aligned so that
    the binary point sits just above bit ``bits``.
    """
    if dim_index == 0:
        # radical-inverse dimension: identity generating matrix
        return np.array([1 << (bits - k) for k in range(1, bits + 1)], dtype=np.uint64)
    entry = _direction_table()[dim_index]
    poly, m_init = entry["poly"], list(entry["m"])
    deg = poly.bit_length() - 1
    m = list(m_init)
    for k in range(deg, bits):
        new = m[k - deg] ^ (m[k - deg] << deg)
        for i in range(1, deg):
            if (poly >> (deg - i)) & 1:
                new ^= m[k - i] << i
        m.append(new)
    return np.array([m[k] << (bits - 1 - k) for k in range(bits)], dtype=np.uint64)


def _sobol_integers(n: int, s: int, bits: int = SOBOL_BITS) -> np.ndarray:
    """First n Sobol points in dimension s as (n, s) integers below 2^bits.

    Gray-code ordering: point i is the XOR of direction integers selected
    by the set bits of gray(i) = i ^ (i >> 1).
    """
    gray = np.arange(n, dtype=np.uint64)
    gray ^= gray >> np.uint64(1)
    out = np.zeros((n, s), dtype=np.uint64)
    for j in range(s):
        v = _direction_integers(j, bits)
        acc = out[:, j]
        for b in range(bits):
            mask = (gray >> np.uint64(b)) & np.uint64(1)
            if not mask.any():
                continue
            acc ^= np.where(mask.astype(bool), v[b], np.uint64(0))
    return out


_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_MUL2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer; a stateless 64-bit mixer used as a PRF."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _SM_MUL1
        z = (z ^ (z >> np.uint64(27))) * _SM_MUL2
        return z ^ (z >> np.uint64(31))


def _owen_scramble(ints: np.ndarray, seed: int, bits: int = SOBOL_BITS) -> np.ndarray:
    """Nested uniform scrambling of base-2 digit vectors.

    Every node of the per-coordinate binary tree (identified by the digit
    prefix above the current level) gets an independent flip bit from a
    keyed hash, so points sharing a prefix share the same flips: exactly
    the nested structure of Owen scrambling, with the random tree realised
    lazily by the hash.
    """
    n, s = ints.shape
    out = ints.copy()
    base = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        for j in range(s):
            x = out[:, j]
            dim_key = _mix64(np.uint64([base + _SM_GAMMA * np.uint64(j + 1)]))[0]
            for level in range(bits):
                prefix = x >> np.uint64(bits - level) if level else np.zeros_like(x)
                node = (prefix << np.uint64(7)) | np.uint64(level)
                flip = _mix64(node ^ dim_key) >> np.uint64(63)
                x ^= flip << np.uint64(bits - 1 - level)
            out[:, j] = x
    return out


def generate_sobol(n: int, s: int, scramble_seed: int | None = None) -> PointSet:
    """First n points of the Sobol sequence in [0,1)^s.

    Parameters
    ----------
    n : int
        Number of points (>= 1).
    s : int
        Dimension, at most 512 (the embedded direction-number table; high
        dimensions exist for long backward-pass inputs).
    scramble_seed : int, optional
        If given, apply Owen-style nested scrambling keyed by this seed.
        Each point is then marginally uniform on [0,1)^s while the set
        keeps its low discrepancy.

    Notes
    -----
    The sequence starts at the origin (index-0 point is all zeros), and
    dimension 1 is the base-2 radical-inverse (van der Corput) sequence
    in Gray-code order.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if s < 1 or s > MAX_SOBOL_DIM:
        raise UnsupportedDimensionError(
            f"dimension {s} outside 1..{MAX_SOBOL_DIM}; no direction numbers available"
        )
    ints = _sobol_integers(n, s)
    if scramble_seed is not None:
        ints = _owen_scramble(ints, int(scramble_seed))
    pts = ints.astype(np.float64) / float(1 << SOBOL_BITS)
    # [0,1) must hold bit-exactly even if future bit depths stress division
    np.minimum(pts, np.nextafter(1.0, 0.0), out=pts)
    return PointSet(points=pts, generator="sobol", scramble_seed=scramble_seed)


def generate_iid(n: int, s: int, seed: int) -> PointSet:
    """n IID uniform points on [0,1)^s from a counter-based generator.

    Philox is keyed by ``seed``, so output is reproducible bit-for-bit
    across platforms and independent streams come from distinct seeds.
    """
    if n < 1 or s < 1:
        raise ValueError("need n >= 1 and s >= 1")
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    pts = rng.random((n, s))
    return PointSet(points=pts, generator="iid", scramble_seed=int(seed))


def sort_by_first_coordinate(ps: PointSet) -> PointSet:
    """Rows permuted so first coordinates are nondecreasing (stable)."""
    order = np.argsort(ps.points[:, 0], kind="stable")
    return PointSet(
        points=ps.points[order],
        generator=ps.generator,
        scramble_seed=ps.scramble_seed,
        sorted_by_first_coord=True,
    )


def save_points_csv(ps: PointSet, path) -> None:
    """Dump one point per row in plain, locale-independent decimal."""
    with open(path, "w") as f:
        f.write(",".join(f"u{j}" for j in range(ps.dim)) + "\n")
        for row in ps.points:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# Exact extreme discrepancy
#
# D(u^{1:N}) is the supremum over axis-aligned boxes of
# |empirical fraction - volume|.  Over the closure of the box family the
# supremum is attained on a finite grid: split each axis at every distinct
# coordinate value into zero-width "atom" cells (points sitting exactly at
# the value) and open "gap" cells between them.  Every open/closed boundary
# combination is then a contiguous run of cells, and the supremum is an
# exact maximum over runs.

_ORACLE_MAX_N = 512
_ORACLE_MAX_DIM = 3
_ORACLE_MAX_CELLS = 80_000_000


def measure_extreme_discrepancy(ps: PointSet) -> float:
    """Exact extreme discrepancy of a small point set.

    Supported for dim <= 3 and N <= 512; cost grows roughly like the cube
    of the number of distinct coordinates per axis (one extra power per
    axis beyond the second), so dim 3 is practical only for N up to ~100.
    This is a test oracle, not a production path.
    """
    pts = ps.points
    n, s = pts.shape
    if s > _ORACLE_MAX_DIM or n > _ORACLE_MAX_N:
        raise OracleLimitError(
            f"exact discrepancy limited to dim <= {_ORACLE_MAX_DIM}, N <= {_ORACLE_MAX_N}"
        )
    cell_idx = []
    widths = []
    for j in range(s):
        vals = np.unique(pts[:, j])
        k = len(vals)
        # cells: [0,v1), {v1}, (v1,v2), {v2}, ..., (vk,1)
        w = np.zeros(2 * k + 1)
        w[0] = vals[0]
        w[2::2] = np.diff(np.append(vals, 1.0))
        idx = 2 * np.searchsorted(vals, pts[:, j]) + 1
        cell_idx.append(idx)
        widths.append(w)
    shape = tuple(len(w) for w in widths)
    if np.prod([float(m) for m in shape]) > _ORACLE_MAX_CELLS:
        raise OracleLimitError("cell grid too large for the exact oracle")
    counts = np.zeros(shape, dtype=np.int32)
    np.add.at(counts, tuple(cell_idx), 1)
    return _max_box_deviation(counts, widths, n, 1.0)


def _max_box_deviation(counts, widths, n, outer_width) -> float:
    """Max |count/n - outer_width * volume| over boxes of contiguous cells."""
    if counts.ndim == 1:
        f = np.concatenate(([0.0], np.cumsum(counts) / n - outer_width * np.cumsum(widths[0])))
        lo = np.minimum.accumulate(f)
        hi = np.maximum.accumulate(f)
        return max((f[1:] - lo[:-1]).max(), (hi[:-1] - f[1:]).max())
    if counts.ndim == 2:
        m1 = counts.shape[0]
        cum2 = np.concatenate(([0.0], np.cumsum(widths[1])))
        # prefix over both axes, leading zero row/col
        pre = np.zeros((m1 + 1, counts.shape[1] + 1))
        pre[1:, 1:] = np.cumsum(np.cumsum(counts, axis=0), axis=1)
        cum1 = np.concatenate(([0.0], np.cumsum(widths[0])))
        best = 0.0
        for i1 in range(m1):
            cnt = pre[i1 + 1 :, :] - pre[i1, :]
            w1 = (cum1[i1 + 1 :] - cum1[i1]) * outer_width
            f = cnt / n - w1[:, None] * cum2[None, :]
            lo = np.minimum.accumulate(f, axis=1)
            hi = np.maximum.accumulate(f, axis=1)
            best = max(best, (f[:, 1:] - lo[:, :-1]).max(), (hi[:, :-1] - f[:, 1:]).max())
        return best
    # leading axis: enumerate slabs, recurse on the rest
    m0 = counts.shape[0]
    pre = np.concatenate((np.zeros((1,) + counts.shape[1:], dtype=np.int64),
                          np.cumsum(counts, axis=0, dtype=np.int64)))
    cum0 = np.concatenate(([0.0], np.cumsum(widths[0])))
    best = 0.0
    for i1 in range(m0):
        for i2 in range(i1 + 1, m0 + 1):
            w = (cum0[i2] - cum0[i1]) * outer_width
            slab = pre[i2] - pre[i1]
            best = max(best, _max_box_deviation(slab, widths[1:], n, w))
    return best
