"""Density-aware hierarchical sanitizers (DAF-Entropy and DAF-Homogeneity).

A node at depth i splits dimension i (0-based) of its region. The root gets
1% of the budget and fixes the root fanout ``m0``; deeper levels receive the
variance-minimising geometric allocation, and leaves spend whatever their
path has left. Sibling nodes hold disjoint data, so each tree level is one
parallel-composition scope in the ledger.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .granularity import ebp_m_continuous, clamp_fanout
from .matrix import FrequencyMatrix, Region, split_intervals
from .mechanism import BudgetLedger, NoiseStream, laplace
from .sanitized import SanitizedMatrix, finalize

HOMOGENEITY_SENSITIVITY = 2.0
CANDIDATE_RULE = "one cell per equal-width interval; boundary after each of the first m-1 cells"


@dataclass(frozen=True)
class DafConfig:
    eps_tot: float
    q: float = 0.3
    p: int = 8
    stop_threshold_multiplier: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if not self.eps_tot > 0:
            raise ValueError("eps_tot must be positive")
        if not 0 < self.q < 1:
            raise ValueError(f"q must lie in (0, 1), got {self.q}")
        if self.p < 1:
            raise ValueError(f"p must be >= 1, got {self.p}")
        if self.stop_threshold_multiplier < 0:
            raise ValueError("stop_threshold_multiplier must be non-negative")


@dataclass(eq=False)
class DafNode:
    region: Region
    depth: int
    count: int
    ncount: float
    path: tuple[int, ...] = ()
    children: list["DafNode"] = field(default_factory=list)
    pruned: bool = False
    acc: float = 0.0  # budget spent on this path before the published release
    eps: float = 0.0  # budget behind ``ncount``

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def leaves(self):
        stack = [self]
        while stack:
            node = stack.pop()
            if node.children:
                stack.extend(reversed(node.children))
            else:
                yield node

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()


def root_budget(eps_tot: float) -> float:
    return eps_tot / 100


def level_budget(i: int, d: int, m0: float, eps_tot_prime: float) -> float:
    """Budget of tree level ``i`` (1..d) minimising the summed per-level noise variance."""
    if not 1 <= i <= d:
        raise ValueError(f"level {i} outside 1..{d}")
    if m0 < 1:
        raise ValueError("root fanout must be >= 1")
    if m0 == 1:
        return eps_tot_prime / d
    weights = [m0 ** (j / 3) for j in range(1, d + 1)]
    return eps_tot_prime * weights[i - 1] / math.fsum(weights)


def level_budget_closed_form(i: int, d: int, m0: float, eps_tot_prime: float) -> float:
    """Geometric-series form of :func:`level_budget` (undefined at ``m0 == 1``)."""
    c = m0 ** (1 / 3)
    return eps_tot_prime * m0 ** (i / 3) * (1 - c) / (c * (1 - m0 ** (d / 3)))


def stop_condition(ncount: float, remaining_eps: float,
                   cfg: DafConfig | float = 2.0) -> bool:
    """True when the noisy count sits below ``multiplier`` noise std-devs of the remaining budget."""
    mult = cfg.stop_threshold_multiplier if isinstance(cfg, DafConfig) else float(cfg)
    return ncount < mult * math.sqrt(2) / remaining_eps


def candidate_sets(r: Region, dim: int, m: int, p: int, stream: NoiseStream) -> np.ndarray:
    """``p`` sorted sets, each one uniform cell drawn from every equal-width interval."""
    lo, hi = r.bounds[dim]
    if m < 2:
        raise ValueError("candidate sets need a fanout of at least 2")
    if hi - lo < m:
        raise ValueError(f"interval width {hi - lo} below fanout {m}")
    iv = np.array(split_intervals(lo, hi, m), dtype=np.int64)
    u = stream.uniform((p, m))
    picks = iv[:, 0] + np.floor(u * (iv[:, 1] - iv[:, 0])).astype(np.int64)
    return np.minimum(picks, iv[:, 1] - 1)


def candidate_boundaries(cands: np.ndarray) -> np.ndarray:
    """Child boundaries for each candidate set: just after each of its first m-1 cells."""
    return cands[:, :-1] + 1


def _objective_from_cells(x: np.ndarray, f: np.ndarray, lo: int, hi: int,
                          cross_volume: float, boundaries) -> float:
    edges = np.concatenate(([lo], np.asarray(boundaries, dtype=np.int64), [hi]))
    k = len(edges) - 1
    child = np.searchsorted(edges[1:-1], x, side="right")
    sums = np.bincount(child, weights=f, minlength=k)
    nnz = np.bincount(child, minlength=k)
    vols = np.diff(edges) * cross_volume
    mu = sums / vols
    abs_dev = np.bincount(child, weights=np.abs(f - mu[child]), minlength=k)
    return float(np.sum(abs_dev + (vols - nnz) * mu))


def homogeneity_objective(m: FrequencyMatrix, r: Region, dim: int, splits,
                          idx: np.ndarray | None = None) -> float:
    """Sum over the sub-regions cut at ``splits`` of the absolute deviations from their mean.

    ``splits`` are boundaries: a value ``k`` starts a new sub-region at
    coordinate ``k``. Zero cells count through their deviation ``|0 - mean|``.
    """
    lo, hi = r.bounds[dim]
    splits = np.asarray(sorted(splits), dtype=np.int64)
    if np.any(splits <= lo) or np.any(splits >= hi):
        raise ValueError(f"splits {splits.tolist()} not strictly inside [{lo}, {hi})")
    coords = m.coords if idx is None else m.coords[idx]
    counts = m.counts if idx is None else m.counts[idx]
    inside = r.contains_mask(coords)
    cross = r.volume / (hi - lo)
    return _objective_from_cells(coords[inside, dim], counts[inside].astype(float),
                                 lo, hi, float(cross), splits)


class _Builder:
    def __init__(self, m: FrequencyMatrix, cfg: DafConfig, variant: str, noiseless: bool):
        self.m = m
        self.cfg = cfg
        self.d = m.d
        self.variant = variant
        self.enabled = not noiseless
        self.ledger = BudgetLedger(cfg.eps_tot)
        self.eps0 = root_budget(cfg.eps_tot)
        self.levels: list[float] = []
        self.m0: int | None = None

    def _release(self, eps: float, label: str, level: int, path) -> None:
        self.ledger.spend(eps, label, f"L{level}", path)

    def build(self) -> DafNode:
        idx = np.arange(self.m.nnz)
        return self._visit(idx, Region.full(self.m.extents), 0, 0.0, ())

    def _set_root_fanout(self, m0: int) -> None:
        self.m0 = m0
        eps_prime = self.cfg.eps_tot - self.eps0
        self.levels = [level_budget(i, self.d, m0, eps_prime) for i in range(1, self.d + 1)]

    def _visit(self, idx, region: Region, depth: int, acc: float, path) -> DafNode:
        cfg, d = self.cfg, self.d
        stream = NoiseStream(cfg.seed, path, self.enabled)
        count = int(self.m.counts[idx].sum())
        if depth == d:
            eps = cfg.eps_tot - acc
            self._release(eps, "leaf", d, path)
            ncount = count + laplace(1.0 / eps, stream)
            return DafNode(region, depth, count, ncount, path, acc=acc, eps=eps)

        level_eps = self.eps0 if depth == 0 else self.levels[depth - 1]
        acc_after = acc + level_eps
        eps_prt = self.cfg.q * level_eps if self.variant == "homogeneity" else 0.0
        eps_data = level_eps - eps_prt
        self._release(eps_data, "count", depth, path)
        ncount = count + laplace(1.0 / eps_data, stream)
        remaining = cfg.eps_tot - acc_after

        lo, hi = region.bounds[depth]
        if ncount > 0:
            fanout = clamp_fanout(ebp_m_continuous(ncount, remaining, d - depth), hi - lo)
        else:
            fanout = 1
        if depth == 0:
            self._set_root_fanout(fanout)

        if stop_condition(ncount, remaining, cfg):
            return self._prune(stream, region, depth, count, acc + eps_data, eps_prt, path)

        node = DafNode(region, depth, count, ncount, path, acc=acc, eps=eps_data)
        if self.variant == "homogeneity":
            edges = self._choose_split(stream, idx, region, depth, fanout, eps_prt, path)
        else:
            edges = [a for a, _ in split_intervals(lo, hi, fanout)] + [hi]
        edges = np.asarray(edges, dtype=np.int64)
        x = self.m.coords[idx, depth]
        child = np.searchsorted(edges[1:-1], x, side="right")
        order = np.argsort(child, kind="stable")
        bounds = np.searchsorted(child[order], np.arange(len(edges)))
        for j in range(len(edges) - 1):
            sub = idx[order[bounds[j]:bounds[j + 1]]]
            node.children.append(self._visit(sub, region.with_interval(depth, int(edges[j]), int(edges[j + 1])),
                                             depth + 1, acc_after, path + (j,)))
        return node

    def _prune(self, stream, region, depth, count, spent, unspent_prt, path) -> DafNode:
        """Turn the node into a leaf and re-release its count with all budget left on the path."""
        final = self.cfg.eps_tot - spent
        # charge each level's share to that level's scope so per-level maxima still sum to eps_tot
        pieces = []
        if unspent_prt > 0:
            pieces.append((depth, unspent_prt))
        pieces += [(j, self.levels[j - 1]) for j in range(depth + 1, self.d)]
        rest = final - math.fsum(e for _, e in pieces)
        if self.d > depth:
            pieces.append((self.d, rest))
        for level, eps in pieces:
            if eps > 0:
                self._release(eps, "prune", level, path)
        ncount = count + laplace(1.0 / final, stream)
        return DafNode(region, depth, count, ncount, path, pruned=True, acc=spent, eps=final)

    def _choose_split(self, stream, idx, region, depth, fanout, eps_prt, path) -> list[int]:
        lo, hi = region.bounds[depth]
        p = self.cfg.p
        for _ in range(p):
            self._release(eps_prt / p, "split", depth, path)
        if fanout < 2:
            # a single child leaves nothing to choose; the draws keep the stream layout fixed
            stream.uniform(p)
            return [lo, hi]
        cands = candidate_sets(region, depth, fanout, p, stream)
        splits = candidate_boundaries(cands)
        x = self.m.coords[idx, depth]
        f = self.m.counts[idx].astype(float)
        cross = float(region.volume // (hi - lo))
        scores = np.array([_objective_from_cells(x, f, lo, hi, cross, s) for s in splits])
        noise = laplace(HOMOGENEITY_SENSITIVITY * p / eps_prt, stream, size=p)
        best = int(np.argmin(scores + noise))
        return [lo, *splits[best].tolist(), hi]


def _run(m: FrequencyMatrix, cfg: DafConfig, variant: Literal["entropy", "homogeneity"],
         noiseless: bool) -> tuple[SanitizedMatrix, DafNode]:
    builder = _Builder(m, cfg, variant, noiseless)
    root = builder.build()
    leaves = list(root.leaves())
    sm = SanitizedMatrix.from_regions(m.extents, [n.region for n in leaves],
                                      [n.ncount for n in leaves])
    extra = dict(
        m0=builder.m0, stop_multiplier=cfg.stop_threshold_multiplier,
        leaves=len(leaves), pruned=sum(n.pruned for n in leaves),
    )
    if variant == "homogeneity":
        extra.update(q=cfg.q, p=cfg.p, candidate_rule=CANDIDATE_RULE)
    return finalize(sm, builder.ledger, f"daf-{variant}", cfg.eps_tot, cfg.seed, **extra), root


def daf_entropy(m: FrequencyMatrix, cfg: DafConfig,
                noiseless: bool = False) -> tuple[SanitizedMatrix, DafNode]:
    return _run(m, cfg, "entropy", noiseless)


def daf_homogeneity(m: FrequencyMatrix, cfg: DafConfig,
                    noiseless: bool = False) -> tuple[SanitizedMatrix, DafNode]:
    return _run(m, cfg, "homogeneity", noiseless)


def dump_tree(root: DafNode, debug: bool = False) -> str:
    """Indented ``depth,bounds,count?,ncount,pruned`` lines.

    With ``debug`` the true counts are included and the header marks the
    dump as non-private.
    """
    lines = ["# NON-PRIVATE: true counts included" if debug else "# depth,bounds,ncount,pruned"]
    for node in root.walk():
        fields = [str(node.depth), str(node.region)]
        if debug:
            fields.append(str(node.count))
        fields += [repr(node.ncount), str(int(node.pruned))]
        lines.append("  " * node.depth + ",".join(fields))
    return "\n".join(lines) + "\n"
