"""The published artifact: disjoint boxes with noisy counts."""

from __future__ import annotations

import math
from datetime import datetime, timezone
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .matrix import Region, boxes_form_cover
from .mechanism import BudgetLedger


@dataclass
class SanitizedMatrix:
    """Partition boundaries and their noisy counts.

    ``lo``/``hi`` are ``(P, d)`` int64 arrays of half-open box bounds and
    ``noisy`` the ``(P,)`` published counts. ``metadata`` is a flat
    str -> str/float/int mapping written alongside the partitions.
    """

    extents: tuple[int, ...]
    lo: np.ndarray
    hi: np.ndarray
    noisy: np.ndarray
    metadata: dict = field(default_factory=dict)
    ledger: BudgetLedger | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.extents = tuple(int(f) for f in self.extents)
        d = len(self.extents)
        self.lo = np.asarray(self.lo, dtype=np.int64).reshape(-1, d)
        self.hi = np.asarray(self.hi, dtype=np.int64).reshape(-1, d)
        self.noisy = np.asarray(self.noisy, dtype=float).reshape(-1)
        if not len(self.lo) == len(self.hi) == len(self.noisy):
            raise ValueError("partition arrays differ in length")

    @classmethod
    def from_regions(cls, extents, regions: Sequence[Region], noisy, metadata=None):
        lo = np.array([r.lo for r in regions], dtype=np.int64)
        hi = np.array([r.hi for r in regions], dtype=np.int64)
        return cls(tuple(extents), lo, hi, np.asarray(noisy, dtype=float), dict(metadata or {}))

    @property
    def d(self) -> int:
        return len(self.extents)

    def __len__(self) -> int:
        return len(self.noisy)

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    def volumes(self) -> list[int]:
        return [math.prod(int(w) for w in row) for row in self.widths]

    @property
    def partitions(self) -> Iterator[tuple[Region, float, int]]:
        for lo, hi, n in zip(self.lo, self.hi, self.noisy):
            region = Region.from_lo_hi(lo, hi)
            yield region, float(n), region.volume

    def is_cover(self) -> bool:
        return boxes_form_cover(self.lo, self.hi, self.extents)

    def same_partitions(self, other: "SanitizedMatrix") -> bool:
        return (
            self.extents == other.extents
            and np.array_equal(self.lo, other.lo)
            and np.array_equal(self.hi, other.hi)
            and np.array_equal(self.noisy, other.noisy)
        )


class AuditError(RuntimeError):
    """A sanitizer's ledger ended above its budget."""


class InfeasibleError(RuntimeError):
    """The method cannot run on this input (e.g. the domain is too large)."""


def finalize(sm: SanitizedMatrix, ledger: BudgetLedger, method: str, epsilon: float,
             seed: int, **extra) -> SanitizedMatrix:
    """Attach provenance metadata and run the post-run budget audit."""
    if not ledger.within():
        raise AuditError(f"{method}: budget audit failed\n{ledger.dump()}")
    sm.ledger = ledger
    sm.metadata = {
        "method": method,
        "epsilon": float(epsilon),
        "seed": int(seed),
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "ledger": ledger.summary(),
        **extra,
        **sm.metadata,
    }
    return sm
