"""Laplace noise, seeded noise streams and privacy-budget accounting."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

TOLERANCE = 1e-9


class BudgetExceededError(RuntimeError):
    """Raised when an expenditure would push the ledger past its total."""


class NoiseStream:
    """Reproducible source of uniforms keyed by ``(seed, path)``.

    The path names the consuming site (tree-node child indices, or a
    partition's row-major index), so draws never depend on the order in which
    sites are visited. ``enabled=False`` turns every Laplace draw into 0 while
    leaving the accounting untouched; tests use it as a noise-free oracle.
    """

    __slots__ = ("seed", "path", "enabled", "_rng")

    def __init__(self, seed: int, path: Sequence[int] = (), enabled: bool = True):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        self.enabled = enabled
        self._rng = None

    def child(self, *path: int) -> "NoiseStream":
        return NoiseStream(self.seed, self.path + path, self.enabled)

    @property
    def rng(self) -> np.random.Generator:
        if self._rng is None:
            ss = np.random.SeedSequence(self.seed & (2**64 - 1), spawn_key=self.path)
            self._rng = np.random.default_rng(ss)
        return self._rng

    def uniform(self, size=None):
        return self.rng.random(size)

    def integers(self, low: int, high: int, size=None):
        return self.rng.integers(low, high, size=size)


def laplace_from_uniform(u, b: float):
    """Inverse CDF of the zero-mean Laplace law with scale ``b``."""
    u = np.asarray(u, dtype=float)
    u = np.where(u <= 0.0, np.finfo(float).tiny, u)
    x = np.where(u < 0.5, b * np.log(2.0 * u), -b * np.log(2.0 * (1.0 - u)))
    return x if x.ndim else float(x)


def laplace(b: float, stream: NoiseStream, size=None):
    """Draw Laplace(0, b) noise from ``stream`` by inverse-CDF sampling."""
    if not b > 0:
        raise ValueError(f"Laplace scale must be positive, got {b}")
    u = stream.uniform(size)
    if not stream.enabled:
        return 0.0 if size is None else np.zeros(size)
    return laplace_from_uniform(u, b)


@dataclass(frozen=True)
class LedgerEntry:
    label: str
    epsilon: float
    scope: Hashable | None = None
    part: Hashable | None = None


@dataclass
class BudgetLedger:
    """Append-only record of budget spent under sequential/parallel composition.

    An entry without a scope composes sequentially. Entries sharing a scope
    act on pairwise-disjoint data parts: within one part they add up, and the
    scope as a whole is charged the largest per-part sum. With ``enforce``
    off, over-budget spends are recorded instead of refused, so a replayed
    ledger can still be audited.
    """

    total: float
    entries: list[LedgerEntry] = field(default_factory=list)
    enforce: bool = True

    def __post_init__(self):
        if not self.total > 0:
            raise ValueError(f"total budget must be positive, got {self.total}")
        self._lock = threading.Lock()
        self._sequential = 0.0
        self._parts: dict[tuple, float] = {}
        self._scope_max: dict[Hashable, float] = {}

    @property
    def spent(self) -> float:
        return self._sequential + math.fsum(self._scope_max.values())

    def _charge(self, epsilon: float, scope, part) -> tuple[float, float | None]:
        if scope is None:
            return self._sequential + epsilon, None
        key = (scope, part)
        new_part = self._parts.get(key, 0.0) + epsilon
        old_max = self._scope_max.get(scope, 0.0)
        new_spent = self.spent - old_max + max(old_max, new_part)
        return new_spent, new_part

    def spend(self, epsilon: float, label: str = "", scope: Hashable | None = None,
              part: Hashable | None = None) -> None:
        if not epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {epsilon}")
        with self._lock:
            new_spent, new_part = self._charge(epsilon, scope, part)
            if self.enforce and new_spent > self.total + TOLERANCE:
                raise BudgetExceededError(
                    f"spending {epsilon} on {label!r} would use {new_spent} of {self.total}\n"
                    + self.dump()
                )
            self.entries.append(LedgerEntry(label, float(epsilon), scope, part))
            if scope is None:
                self._sequential = new_spent
            else:
                self._parts[(scope, part)] = new_part
                self._scope_max[scope] = max(self._scope_max.get(scope, 0.0), new_part)

    def spend_parallel(self, epsilon: float, n_parts: int, label: str = "",
                       scope: Hashable = "parallel") -> None:
        """Charge ``epsilon`` to each of ``n_parts`` disjoint parts in one entry."""
        if n_parts < 1:
            raise ValueError("n_parts must be >= 1")
        self.spend(epsilon, label, scope, f"*{n_parts}")

    def within(self) -> bool:
        return self.spent <= self.total + TOLERANCE

    def summary(self) -> str:
        return f"{self.spent!r}/{self.total!r}"

    def dump(self) -> str:
        lines = [
            f"{e.label},{format_scope(e.scope, e.part)},{e.epsilon!r}" for e in self.entries
        ]
        lines.append(self.summary())
        return "\n".join(lines) + "\n"


def format_scope(scope, part) -> str:
    if scope is None:
        return "-"
    if part is None:
        return str(scope)
    if isinstance(part, tuple):
        part = ".".join(str(p) for p in part) or "root"
    return f"{scope}:{part}"


def parse_ledger(text: str) -> BudgetLedger:
    """Rebuild a ledger from :meth:`BudgetLedger.dump` output."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or "/" not in lines[-1]:
        raise ValueError("ledger dump lacks the spent/total summary line")
    ledger = BudgetLedger(float(lines[-1].split("/")[1]), enforce=False)
    for lineno, line in enumerate(lines[:-1], 1):
        try:
            label, scope, eps = line.rsplit(",", 2)
            eps = float(eps)
        except ValueError:
            raise ValueError(f"line {lineno}: malformed ledger record {line!r}") from None
        if scope == "-":
            ledger.spend(eps, label)
        else:
            name, _, part = scope.partition(":")
            ledger.spend(eps, label, name, part or None)
    return ledger


def ledger_assert_within(ledger: BudgetLedger) -> bool:
    return ledger.within()


def sanitize_count(true_count: float, sensitivity: float, epsilon: float,
                   stream: NoiseStream, ledger: BudgetLedger, scope: Hashable | None = None,
                   part: Hashable | None = None, label: str = "count") -> float:
    """Laplace-mechanism release of one count; the spend is recorded first."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if not sensitivity > 0:
        raise ValueError(f"sensitivity must be positive, got {sensitivity}")
    ledger.spend(epsilon, label, scope, part)
    return float(true_count) + laplace(sensitivity / epsilon, stream)
