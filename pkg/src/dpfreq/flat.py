"""Non-hierarchical sanitizers: UNIFORM, IDENTITY and the uniform grid (EUG / EBP)."""

from __future__ import annotations

import math
from typing import Literal

import numpy as np

from . import granularity
from .matrix import FrequencyMatrix, split_intervals
from .mechanism import BudgetLedger, NoiseStream, laplace_from_uniform, sanitize_count
from .sanitized import InfeasibleError, SanitizedMatrix, finalize

IDENTITY_CELL_CAP = 10**8

# stream path prefixes: 0 for the global total, 1 for published partitions
_TOTAL_PATH = 0
_PARTITION_PATH = 1


def partition_noise(seed: int, n: int, scale: float, enabled: bool = True) -> np.ndarray:
    """One Laplace draw per partition, partition ``k`` reading stream ``(seed, (1, k))``."""
    if not enabled:
        return np.zeros(n)
    u = np.fromiter(
        (NoiseStream(seed, (_PARTITION_PATH, k)).uniform() for k in range(n)), float, count=n
    )
    return laplace_from_uniform(u, scale)


def sanitize_uniform(m: FrequencyMatrix, eps: float, seed: int = 0,
                     noiseless: bool = False) -> SanitizedMatrix:
    """Publish the whole domain as one partition with a noisy total."""
    ledger = BudgetLedger(eps)
    noisy = sanitize_count(m.total, 1.0, eps, NoiseStream(seed, (_PARTITION_PATH, 0), not noiseless),
                           ledger, label="total")
    sm = SanitizedMatrix(m.extents, [[0] * m.d], [m.extents], [noisy])
    return finalize(sm, ledger, "uniform", eps, seed)


def sanitize_identity(m: FrequencyMatrix, eps: float, seed: int = 0,
                      cell_cap: int = IDENTITY_CELL_CAP, noiseless: bool = False) -> SanitizedMatrix:
    """Publish every cell (zero cells included) with its own Laplace noise."""
    volume = m.volume
    if volume > cell_cap:
        raise InfeasibleError(
            f"identity must publish all {volume} cells, above the cap of {cell_cap}; "
            "enumerating a domain this size is intractable"
        )
    ledger = BudgetLedger(eps)
    ledger.spend_parallel(eps, volume, "cells", scope="cells")
    counts = m.to_dense().reshape(-1)
    noisy = counts + partition_noise(seed, volume, 1.0 / eps, not noiseless)
    lo = np.stack(np.unravel_index(np.arange(volume), m.extents), axis=1)
    sm = SanitizedMatrix(m.extents, lo, lo + 1, noisy)
    return finalize(sm, ledger, "identity", eps, seed)


def grid_boxes(extents, fanouts) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """Row-major box bounds of a product grid and the per-dimension edges."""
    edges = []
    for f, k in zip(extents, fanouts):
        iv = split_intervals(0, f, k)
        edges.append(np.array([a for a, _ in iv] + [iv[-1][1]], dtype=np.int64))
    starts = np.meshgrid(*[e[:-1] for e in edges], indexing="ij")
    stops = np.meshgrid(*[e[1:] for e in edges], indexing="ij")
    lo = np.stack([s.reshape(-1) for s in starts], axis=1)
    hi = np.stack([s.reshape(-1) for s in stops], axis=1)
    return lo, hi, edges


def grid_sums(m: FrequencyMatrix, edges: list[np.ndarray]) -> np.ndarray:
    """True count of every grid box in row-major order, from the stored cells only."""
    shape = tuple(len(e) - 1 for e in edges)
    if m.nnz == 0:
        return np.zeros(math.prod(shape), dtype=np.int64)
    cell_idx = [np.searchsorted(e, m.coords[:, i], side="right") - 1 for i, e in enumerate(edges)]
    flat = np.ravel_multi_index(tuple(cell_idx), shape)
    return np.bincount(flat, weights=m.counts, minlength=math.prod(shape)).astype(np.int64)


def sanitize_grid(m: FrequencyMatrix, eps_tot: float,
                  provider: Literal["eug", "ebp"] = "eug", eps0_fraction: float = 0.01,
                  seed: int = 0, r: float | None = None, c0: float = granularity.DEFAULT_C0,
                  noiseless: bool = False) -> SanitizedMatrix:
    """Uniform grid whose fanout comes from a privately estimated total."""
    if not 0 < eps0_fraction < 1:
        raise ValueError("eps0_fraction must lie in (0, 1)")
    provider = provider.lower()
    if provider not in ("eug", "ebp"):
        raise ValueError(f"unknown granularity provider {provider!r}")
    enabled = not noiseless
    ledger = BudgetLedger(eps_tot)
    eps0 = eps0_fraction * eps_tot
    noisy_total = sanitize_count(m.total, 1.0, eps0, NoiseStream(seed, (_TOTAL_PATH,), enabled),
                                 ledger, label="total")
    eps = eps_tot - eps0
    cap = granularity.min_extent(m.extents)
    if provider == "ebp":
        fanout = granularity.ebp_m(noisy_total, eps, m.d, cap)
    elif m.d == 1:
        # the EUG formula degenerates at d = 1; the entropy rule still applies
        fanout = granularity.ebp_m(noisy_total, eps, 1, cap)
    else:
        cfg = granularity.GranularityConfig(max(noisy_total, 0.0), eps, m.d, r, c0)
        fanout = granularity.eug_m(cfg, cap)
    lo, hi, edges = grid_boxes(m.extents, [fanout] * m.d)
    sums = grid_sums(m, edges)
    ledger.spend_parallel(eps, len(sums), "grid", scope="grid")
    noisy = sums + partition_noise(seed, len(sums), 1.0 / eps, enabled)
    sm = SanitizedMatrix(m.extents, lo, hi, noisy)
    return finalize(sm, ledger, provider, eps_tot, seed, m=fanout, eps0=eps0,
                    noisy_total=noisy_total)
