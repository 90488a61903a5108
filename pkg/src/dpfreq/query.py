"""Range queries over sanitized matrices, MRE and query workloads."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .matrix import FrequencyMatrix, Region, region_sum
from .sanitized import SanitizedMatrix

# domains up to this many cells are answered through dense prefix sums
DENSE_CELL_LIMIT = 2 * 10**7


@dataclass(frozen=True)
class RangeQuery:
    region: Region


@dataclass(frozen=True)
class WorkloadSpec:
    kind: Literal["random_shape_size", "fixed_coverage"] = "random_shape_size"
    count: int = 1000
    seed: int = 0
    coverage: float | None = None

    def __post_init__(self):
        if self.kind not in ("random_shape_size", "fixed_coverage"):
            raise ValueError(f"unknown workload kind {self.kind!r}")
        if (self.kind == "fixed_coverage") != (self.coverage is not None):
            raise ValueError("coverage must be given exactly for fixed_coverage workloads")
        if self.coverage is not None and not 0 < self.coverage <= 1:
            raise ValueError("coverage must lie in (0, 1]")
        if self.count < 0:
            raise ValueError("count must be non-negative")


def _as_region(q) -> Region:
    return q.region if isinstance(q, RangeQuery) else q


def answer(sm: SanitizedMatrix, q: RangeQuery | Region) -> float:
    """Query answer under the uniformity assumption inside every partition."""
    r = _as_region(q)
    if not r.within(sm.extents):
        raise ValueError(f"query {r} outside extents {sm.extents}")
    lo, hi = np.asarray(r.lo), np.asarray(r.hi)
    overlap = np.minimum(sm.hi, hi) - np.maximum(sm.lo, lo)
    hit = np.all(overlap > 0, axis=1)
    if not hit.any():
        return 0.0
    frac = np.prod(overlap[hit] / sm.widths[hit], axis=1)
    return float(np.dot(sm.noisy[hit], frac))


def true_answer(m: FrequencyMatrix, q: RangeQuery | Region) -> int:
    return region_sum(m, _as_region(q))


def mre(true_count: float, noisy_answer: float, floor: float = 1.0) -> float:
    """Relative error in percent, with the denominator floored at ``floor``."""
    return abs(true_count - noisy_answer) / max(true_count, floor) * 100


def _prefix_sums(density: np.ndarray) -> np.ndarray:
    out = np.zeros(tuple(s + 1 for s in density.shape))
    out[tuple(slice(1, None) for _ in density.shape)] = density
    for axis in range(density.ndim):
        np.cumsum(out, axis=axis, out=out)
    return out


def _box_sums(prefix: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    d = lo.shape[1]
    total = np.zeros(len(lo))
    for corner in range(1 << d):
        pick = [(corner >> i) & 1 for i in range(d)]
        idx = tuple(np.where(pick[i], hi[:, i], lo[:, i]) for i in range(d))
        sign = -1.0 if (d - sum(pick)) % 2 else 1.0
        total += sign * prefix[idx]
    return total


def density_array(sm: SanitizedMatrix) -> np.ndarray:
    """Per-cell published values ``noisy / volume`` materialised densely."""
    d = sm.d
    vols = np.prod(sm.widths.astype(float), axis=1)
    dens = sm.noisy / vols
    if np.all(vols == 1):
        out = np.zeros(sm.extents)
        out[tuple(sm.lo.T)] = dens
        return out
    diff = np.zeros(tuple(f + 1 for f in sm.extents))
    for corner in range(1 << d):
        pick = [(corner >> i) & 1 for i in range(d)]
        idx = tuple(np.where(pick[i], sm.hi[:, i], sm.lo[:, i]) for i in range(d))
        np.add.at(diff, idx, dens * (-1) ** sum(pick))
    for axis in range(d):
        np.cumsum(diff, axis=axis, out=diff)
    return diff[tuple(slice(0, f) for f in sm.extents)]


def query_bounds(queries: Sequence[RangeQuery | Region]) -> tuple[np.ndarray, np.ndarray]:
    regions = [_as_region(q) for q in queries]
    return (np.array([r.lo for r in regions], dtype=np.int64),
            np.array([r.hi for r in regions], dtype=np.int64))


def answer_many(sm: SanitizedMatrix, queries: Sequence[RangeQuery | Region]) -> np.ndarray:
    """Vectorised :func:`answer` for a whole workload."""
    if not len(queries):
        return np.zeros(0)
    qlo, qhi = query_bounds(queries)
    if math.prod(sm.extents) <= DENSE_CELL_LIMIT:
        return _box_sums(_prefix_sums(density_array(sm)), qlo, qhi)
    out = np.empty(len(qlo))
    widths = sm.widths.astype(float)
    for k in range(len(qlo)):
        overlap = np.minimum(sm.hi, qhi[k]) - np.maximum(sm.lo, qlo[k])
        hit = np.all(overlap > 0, axis=1)
        out[k] = np.dot(sm.noisy[hit], np.prod(overlap[hit] / widths[hit], axis=1))
    return out


def true_answers(m: FrequencyMatrix, queries: Sequence[RangeQuery | Region]) -> np.ndarray:
    if not len(queries):
        return np.zeros(0, dtype=np.int64)
    qlo, qhi = query_bounds(queries)
    if m.volume <= DENSE_CELL_LIMIT:
        prefix = _prefix_sums(m.to_dense().astype(float))
        return np.rint(_box_sums(prefix, qlo, qhi)).astype(np.int64)
    out = np.empty(len(qlo), dtype=np.int64)
    for k in range(len(qlo)):
        inside = np.all((m.coords >= qlo[k]) & (m.coords < qhi[k]), axis=1)
        out[k] = m.counts[inside].sum()
    return out


def generate_workload(spec: WorkloadSpec, extents: Sequence[int]) -> list[RangeQuery]:
    """Random boxes; deterministic under ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    extents = np.asarray(extents, dtype=np.int64)
    n, d = spec.count, len(extents)
    if spec.kind == "random_shape_size":
        # two distinct boundaries per dimension out of 0..F_i
        a = rng.integers(0, extents + 1, size=(n, d))
        b = rng.integers(0, extents, size=(n, d))
        b = b + (b >= a)
        lo, hi = np.minimum(a, b), np.maximum(a, b)
    else:
        width = np.clip(np.ceil(spec.coverage * extents).astype(np.int64), 1, extents)
        lo = rng.integers(0, extents - width + 1, size=(n, d))
        hi = lo + width
    return [RangeQuery(Region.from_lo_hi(l, h)) for l, h in zip(lo.tolist(), hi.tolist())]


@dataclass
class Evaluation:
    true: np.ndarray
    noisy: np.ndarray
    errors: np.ndarray
    mre_floor: float

    @property
    def mean_mre(self) -> float:
        return float(np.mean(self.errors)) if len(self.errors) else float("nan")

    @property
    def median_mre(self) -> float:
        return float(np.median(self.errors)) if len(self.errors) else float("nan")


def evaluate(sm: SanitizedMatrix, m: FrequencyMatrix, workload: Sequence[RangeQuery],
             mre_floor: float = 1.0) -> Evaluation:
    if tuple(sm.extents) != tuple(m.extents):
        raise ValueError(f"extents differ: sanitized {sm.extents} vs matrix {m.extents}")
    true = true_answers(m, workload)
    noisy = answer_many(sm, workload)
    errors = np.abs(true - noisy) / np.maximum(true, mre_floor) * 100
    return Evaluation(true, noisy, errors, mre_floor)
