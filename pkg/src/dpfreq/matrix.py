"""Sparse d-dimensional frequency matrices, regions and partition sets."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

# above this many cells, linear cell ids no longer fit in int64
_LINEAR_ID_LIMIT = 2**62


@dataclass(frozen=True)
class Region:
    """Axis-aligned box of half-open integer intervals ``[lo_i, hi_i)``."""

    bounds: tuple[tuple[int, int], ...]

    def __post_init__(self):
        bounds = tuple((int(lo), int(hi)) for lo, hi in self.bounds)
        for i, (lo, hi) in enumerate(bounds):
            if lo >= hi:
                raise ValueError(f"empty interval [{lo}, {hi}) in dimension {i}")
        object.__setattr__(self, "bounds", bounds)

    @classmethod
    def from_lo_hi(cls, lo: Sequence[int], hi: Sequence[int]) -> "Region":
        return cls(tuple(zip(lo, hi)))

    @classmethod
    def full(cls, extents: Sequence[int]) -> "Region":
        return cls(tuple((0, f) for f in extents))

    @property
    def d(self) -> int:
        return len(self.bounds)

    @property
    def lo(self) -> tuple[int, ...]:
        return tuple(b[0] for b in self.bounds)

    @property
    def hi(self) -> tuple[int, ...]:
        return tuple(b[1] for b in self.bounds)

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(hi - lo for lo, hi in self.bounds)

    @property
    def volume(self) -> int:
        return math.prod(self.widths)

    def within(self, extents: Sequence[int]) -> bool:
        return len(extents) == self.d and all(
            0 <= lo and hi <= f for (lo, hi), f in zip(self.bounds, extents)
        )

    def intersection(self, other: "Region") -> "Region | None":
        bounds = []
        for (a, b), (c, e) in zip(self.bounds, other.bounds):
            lo, hi = max(a, c), min(b, e)
            if lo >= hi:
                return None
            bounds.append((lo, hi))
        return Region(tuple(bounds))

    def with_interval(self, dim: int, lo: int, hi: int) -> "Region":
        bounds = list(self.bounds)
        bounds[dim] = (lo, hi)
        return Region(tuple(bounds))

    def contains_mask(self, coords: np.ndarray) -> np.ndarray:
        """Boolean mask of the rows of ``coords`` (n x d) lying inside the region."""
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return np.all((coords >= lo) & (coords < hi), axis=1)

    def __str__(self):
        return "x".join(f"[{lo},{hi})" for lo, hi in self.bounds)


class FrequencyMatrix:
    """Immutable sparse count array.

    Cells are kept in COO form: ``coords`` is an ``(nnz, d)`` int64 array of
    distinct coordinates sorted lexicographically and ``counts`` the matching
    positive counts. Zero cells are never stored.
    """

    __slots__ = ("extents", "coords", "counts", "total", "_cells")

    def __init__(self, extents: Sequence[int], coords: np.ndarray, counts: np.ndarray):
        extents = tuple(int(f) for f in extents)
        if not extents or any(f < 1 for f in extents):
            raise ValueError(f"extents must be positive integers, got {extents}")
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, len(extents))
        counts = np.asarray(counts, dtype=np.int64).reshape(-1)
        if len(coords) != len(counts):
            raise ValueError("coords and counts differ in length")
        if np.any(counts <= 0):
            raise ValueError("stored counts must be positive")
        self.extents = extents
        self.coords = coords
        self.counts = counts
        self.total = int(counts.sum())
        self._cells = None
        coords.flags.writeable = False
        counts.flags.writeable = False

    @property
    def d(self) -> int:
        return len(self.extents)

    @property
    def nnz(self) -> int:
        return len(self.counts)

    @property
    def volume(self) -> int:
        return math.prod(self.extents)

    @property
    def cells(self) -> dict[tuple[int, ...], int]:
        """Coordinate -> count mapping (built on first access)."""
        if self._cells is None:
            self._cells = {
                tuple(int(v) for v in c): int(n) for c, n in zip(self.coords, self.counts)
            }
        return self._cells

    def to_dense(self) -> np.ndarray:
        """Dense array of counts; only for small domains."""
        out = np.zeros(self.extents, dtype=np.int64)
        if self.nnz:
            out[tuple(self.coords.T)] = self.counts
        return out

    def __eq__(self, other):
        if not isinstance(other, FrequencyMatrix):
            return NotImplemented
        return (
            self.extents == other.extents
            and np.array_equal(self.coords, other.coords)
            and np.array_equal(self.counts, other.counts)
        )

    def __repr__(self):
        return f"FrequencyMatrix(extents={self.extents}, nnz={self.nnz}, total={self.total})"


def _aggregate(coords: np.ndarray, weights: np.ndarray, extents: tuple[int, ...]):
    if len(coords) == 0:
        return coords.reshape(0, len(extents)), weights[:0]
    if math.prod(extents) < _LINEAR_ID_LIMIT:
        ids = np.ravel_multi_index(tuple(coords.T), extents)
        uniq, inverse = np.unique(ids, return_inverse=True)
        counts = np.bincount(inverse, weights=weights).astype(np.int64)
        return np.stack(np.unravel_index(uniq, extents), axis=1).astype(np.int64), counts
    uniq, inverse = np.unique(coords, axis=0, return_inverse=True)
    counts = np.bincount(inverse.reshape(-1), weights=weights).astype(np.int64)
    return uniq.astype(np.int64), counts


def from_points(
    points: Iterable[Sequence[int]] | np.ndarray,
    extents: Sequence[int],
    weights: Iterable[int] | np.ndarray | None = None,
) -> FrequencyMatrix:
    """Accumulate (optionally weighted) points into a frequency matrix."""
    extents = tuple(int(f) for f in extents)
    d = len(extents)
    pts = np.asarray(points if isinstance(points, np.ndarray) else list(points), dtype=np.int64)
    pts = pts.reshape(-1, d)
    if weights is None:
        w = np.ones(len(pts), dtype=np.int64)
    else:
        w = np.asarray(weights if isinstance(weights, np.ndarray) else list(weights), dtype=np.int64)
        if w.shape != (len(pts),):
            raise ValueError("weights must match the number of points")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
    bad = (pts < 0) | (pts >= np.asarray(extents))
    if bad.any():
        row, dim = np.argwhere(bad)[0]
        raise ValueError(
            f"point {tuple(int(v) for v in pts[row])} out of range in dimension {dim} "
            f"(extent {extents[dim]})"
        )
    coords, counts = _aggregate(pts, w, extents)
    return FrequencyMatrix(extents, coords, counts)


def region_sum(m: FrequencyMatrix, r: Region, idx: np.ndarray | None = None) -> int:
    """Exact count inside ``r``.

    ``idx`` optionally restricts the scan to a subset of stored cells already
    known to contain every cell of ``r`` (tree builds pass their node's cells).
    """
    if not r.within(m.extents):
        raise ValueError(f"region {r} outside extents {m.extents}")
    if idx is None:
        coords, counts = m.coords, m.counts
    else:
        coords, counts = m.coords[idx], m.counts[idx]
    return int(counts[r.contains_mask(coords)].sum())


def split_intervals(lo: int, hi: int, m: int) -> list[tuple[int, int]]:
    """Equal-width integer split of ``[lo, hi)`` with floor boundaries."""
    if m < 1:
        raise ValueError(f"fanout must be >= 1, got {m}")
    w = hi - lo
    m = min(m, w)
    edges = [lo + (j * w) // m for j in range(m + 1)]
    return list(zip(edges[:-1], edges[1:]))


def split_dimension(r: Region, dim: int, m: int) -> list[Region]:
    """Split ``r`` along ``dim`` into ``m`` equal-width pieces (``m`` clamped to the width)."""
    lo, hi = r.bounds[dim]
    return [r.with_interval(dim, a, b) for a, b in split_intervals(lo, hi, m)]


@dataclass
class PartitionSet:
    regions: list[Region]
    counts: list[int]

    def __post_init__(self):
        if len(self.regions) != len(self.counts):
            raise ValueError("regions and counts differ in length")

    @classmethod
    def from_matrix(cls, m: FrequencyMatrix, regions: list[Region]) -> "PartitionSet":
        return cls(list(regions), [region_sum(m, r) for r in regions])

    def is_cover(self, extents: Sequence[int]) -> bool:
        return is_disjoint_cover(self.regions, extents)


def is_disjoint_cover(regions: Sequence[Region], extents: Sequence[int]) -> bool:
    """True iff the regions are pairwise disjoint and tile the whole domain."""
    if not regions:
        return False
    lo = np.array([r.lo for r in regions], dtype=np.int64)
    hi = np.array([r.hi for r in regions], dtype=np.int64)
    return boxes_form_cover(lo, hi, extents)


def boxes_form_cover(lo: np.ndarray, hi: np.ndarray, extents: Sequence[int]) -> bool:
    """Array form of :func:`is_disjoint_cover` for ``(P, d)`` bound arrays."""
    extents = tuple(int(f) for f in extents)
    if np.any(lo < 0) or np.any(hi > np.asarray(extents)) or np.any(lo >= hi):
        return False
    vol = sum(math.prod(int(w) for w in row) for row in (hi - lo))
    if vol != math.prod(extents):
        return False
    if math.prod(extents) <= 10**7:
        # each cell covered exactly once <=> disjoint cover
        return bool(np.all(coverage_counts(lo, hi, extents) == 1))
    return _pairwise_disjoint(lo, hi)


def coverage_counts(lo: np.ndarray, hi: np.ndarray, extents: Sequence[int]) -> np.ndarray:
    """Dense array holding, for every cell, how many boxes cover it."""
    diff = np.zeros(tuple(f + 1 for f in extents), dtype=np.int64)
    d = len(extents)
    for corner in range(1 << d):
        pick = [(corner >> i) & 1 for i in range(d)]
        idx = tuple(np.where(pick[i], hi[:, i], lo[:, i]) for i in range(d))
        np.add.at(diff, idx, (-1) ** sum(pick))
    for axis in range(d):
        np.cumsum(diff, axis=axis, out=diff)
    return diff[tuple(slice(0, f) for f in extents)]


def _pairwise_disjoint(lo: np.ndarray, hi: np.ndarray, chunk: int = 512) -> bool:
    for start in range(0, len(lo), chunk):
        a_lo, a_hi = lo[start : start + chunk, None, :], hi[start : start + chunk, None, :]
        overlap = np.all((a_lo < hi[None]) & (lo[None] < a_hi), axis=2)
        rows = np.arange(start, start + len(a_lo))
        overlap[np.arange(len(rows)), rows] = False
        if overlap.any():
            return False
    return True


def entropy(p: PartitionSet | Sequence[float]) -> float:
    """Shannon entropy (bits) of the partition count distribution.

    An all-zero set has entropy 0; a ``RuntimeWarning`` flags it.
    """
    counts = np.asarray(p.counts if isinstance(p, PartitionSet) else p, dtype=float)
    if np.any(counts < 0):
        raise ValueError("partition counts must be non-negative")
    total = counts.sum()
    if total <= 0:
        warnings.warn("entropy of an all-zero partition set taken as 0", RuntimeWarning)
        return 0.0
    q = counts[counts > 0] / total
    return float(max(0.0, -(q * np.log2(q)).sum()))
