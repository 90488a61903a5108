"""Synthetic frequency matrices and trajectory -> OD-matrix ingestion."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Literal, Sequence

import numpy as np

from .matrix import FrequencyMatrix, from_points

log = logging.getLogger(__name__)

MIN_ACCEPTANCE = 1e-3


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a synthetic dataset.

    ``variance`` is the per-dimension variance of the Gaussian cluster in
    cells squared; ``a`` the Zipf exponent. Extents default to
    ``floor(n_points ** (1/d))`` in every dimension.
    """

    kind: Literal["gaussian", "zipf"]
    d: int
    n_points: int = 10**6
    extents: tuple[int, ...] | None = None
    variance: float | None = None
    a: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gaussian", "zipf"):
            raise ValueError(f"unknown synthetic kind {self.kind!r}")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.n_points <= 0:
            raise ValueError("n_points must be positive")
        if self.extents is None:
            object.__setattr__(self, "extents", (default_width(self.n_points, self.d),) * self.d)
        else:
            object.__setattr__(self, "extents", tuple(int(f) for f in self.extents))
        if len(self.extents) != self.d:
            raise ValueError("extents must have d entries")
        if self.kind == "gaussian":
            if self.variance is None or self.variance < 0:
                raise ValueError("gaussian data needs a non-negative variance")
        elif self.a is None or not self.a > 1:
            raise ValueError(f"zipf data needs a > 1, got {self.a}")


def default_width(n_points: int, d: int) -> int:
    w = int(round(n_points ** (1 / d)))
    while w**d > n_points:
        w -= 1
    while (w + 1) ** d <= n_points:
        w += 1
    return max(w, 1)


def gen_gaussian(spec: SyntheticSpec, batch: int = 1 << 20) -> FrequencyMatrix:
    """Points ~ N(center, variance) per dimension, rounded; out-of-range draws are redrawn.

    The cluster center is a uniform cell (the 1-based ``Uniform(1, F_i)``
    shifted to 0-based indices).
    """
    rng = np.random.default_rng(spec.seed)
    ext = np.asarray(spec.extents, dtype=np.int64)
    center = rng.integers(0, ext)
    std = math.sqrt(spec.variance)
    accepted: list[np.ndarray] = []
    have = drawn = 0
    while have < spec.n_points:
        size = max(min(batch, 2 * (spec.n_points - have)), 1024)
        pts = np.rint(rng.normal(center, std, size=(size, spec.d))).astype(np.int64)
        ok = np.all((pts >= 0) & (pts < ext), axis=1)
        drawn += size
        accepted.append(pts[ok])
        have += int(ok.sum())
        if have / drawn < MIN_ACCEPTANCE:
            raise ValueError(
                f"gaussian acceptance rate {have / drawn:.2e} below {MIN_ACCEPTANCE}: "
                f"extents {spec.extents} too small for variance {spec.variance} around {center.tolist()}"
            )
    pts = np.concatenate(accepted)[: spec.n_points]
    return from_points(pts, spec.extents)


def zipf_pmf(a: float, n: int) -> np.ndarray:
    """Zipf law over ranks 1..n, renormalised to the finite support."""
    if not a > 1:
        raise ValueError(f"zipf exponent must exceed 1, got {a}")
    w = np.arange(1, n + 1, dtype=float) ** -a
    return w / w.sum()


def gen_zipf(spec: SyntheticSpec) -> FrequencyMatrix:
    """Independent truncated-Zipf coordinate per dimension; rank k lands in cell k - 1."""
    if spec.a is None or not spec.a > 1:
        raise ValueError(f"zipf exponent must exceed 1, got {spec.a}")
    rng = np.random.default_rng(spec.seed)
    cols = [rng.choice(f, size=spec.n_points, p=zipf_pmf(spec.a, f)) for f in spec.extents]
    return from_points(np.stack(cols, axis=1), spec.extents)


def generate(spec: SyntheticSpec) -> FrequencyMatrix:
    return gen_gaussian(spec) if spec.kind == "gaussian" else gen_zipf(spec)


@dataclass(frozen=True)
class TrajectorySchema:
    """Layout of trajectory rows: ``stops`` (lat, lon) points per row.

    ``grid`` is the (lat cells, lon cells) raster applied to every stop and
    ``bbox`` the (lat_min, lon_min, lat_max, lon_max) rectangle it covers.
    """

    stops: int = 2
    grid: tuple[int, int] = (1000, 1000)
    bbox: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)

    def __post_init__(self):
        if self.stops < 2:
            raise ValueError("a trajectory needs at least 2 stops")
        if len(self.grid) != 2 or min(self.grid) < 1:
            raise ValueError("grid must be two positive cell counts")
        lat0, lon0, lat1, lon1 = self.bbox
        if not (lat0 < lat1 and lon0 < lon1):
            raise ValueError(f"degenerate bounding box {self.bbox}")

    @property
    def extents(self) -> tuple[int, ...]:
        return tuple(self.grid) * self.stops

    @property
    def header(self) -> list[str]:
        return [f"{k}{i}" for i in range(1, self.stops + 1) for k in ("lat", "lon")]


@dataclass
class IngestReport:
    accepted: int = 0
    malformed: int = 0
    outside: int = 0
    problems: list[str] = field(default_factory=list)

    @property
    def skipped(self) -> int:
        return self.malformed + self.outside


def bin_points(lat: np.ndarray, lon: np.ndarray, schema: TrajectorySchema):
    """Linear binning of coordinates inside the bounding box (max edge folds into the last cell)."""
    lat0, lon0, lat1, lon1 = schema.bbox
    gy, gx = schema.grid
    i = np.minimum(np.floor((lat - lat0) / (lat1 - lat0) * gy).astype(np.int64), gy - 1)
    j = np.minimum(np.floor((lon - lon0) / (lon1 - lon0) * gx).astype(np.int64), gx - 1)
    return i, j


def build_od_matrix(rows: Iterable[Sequence], schema: TrajectorySchema,
                    max_problems: int = 20) -> tuple[FrequencyMatrix, IngestReport]:
    """One count per trajectory at cell (lat1, lon1, ..., latS, lonS)."""
    report = IngestReport()
    width = 2 * schema.stops
    good: list[list[float]] = []
    for lineno, row in enumerate(rows, 1):
        try:
            if len(row) != width:
                raise ValueError(f"expected {width} values, got {len(row)}")
            vals = [float(v) for v in row]
            if not all(math.isfinite(v) for v in vals):
                raise ValueError("non-finite coordinate")
        except (ValueError, TypeError) as exc:
            report.malformed += 1
            if len(report.problems) < max_problems:
                report.problems.append(f"row {lineno}: {exc}")
            continue
        good.append(vals)
    arr = np.asarray(good, dtype=float).reshape(-1, width)
    lat, lon = arr[:, 0::2], arr[:, 1::2]
    lat0, lon0, lat1, lon1 = schema.bbox
    inside = np.all((lat >= lat0) & (lat <= lat1) & (lon >= lon0) & (lon <= lon1), axis=1)
    report.outside = int((~inside).sum())
    report.accepted = int(inside.sum())
    if report.accepted == 0:
        raise ValueError(f"no usable trajectories ({report.malformed} malformed, "
                         f"{report.outside} outside the bounding box)")
    if report.skipped:
        log.warning("skipped %d trajectories (%d malformed, %d outside bbox)",
                    report.skipped, report.malformed, report.outside)
    i, j = bin_points(lat[inside], lon[inside], schema)
    coords = np.empty((report.accepted, width), dtype=np.int64)
    coords[:, 0::2], coords[:, 1::2] = i, j
    return from_points(coords, schema.extents), report


def read_trajectories(path, schema: TrajectorySchema) -> tuple[FrequencyMatrix, IngestReport]:
    """Ingest a trajectory CSV whose header is ``lat1,lon1,...,latS,lonS``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty trajectory file")
        if [h.strip() for h in header] != schema.header:
            raise ValueError(f"{path}: header {header} does not match {schema.header}")
        return build_od_matrix(reader, schema)
