"""Grid granularity (per-dimension fanout) estimators.

Closed forms for the extended uniform grid (EUG) and the entropy-balance
rule (EBP), plus a golden-section solver on the underlying objectives that
serves as an independent check of the closed forms.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from scipy import optimize

DEFAULT_C0 = 10 / math.sqrt(2)
M_SEARCH_RANGE = (1.0, 1e6)


class BracketError(RuntimeError):
    """The objective is not unimodal with an interior minimum on the search range."""


@dataclass(frozen=True)
class GranularityConfig:
    noisy_total: float
    epsilon: float
    d: int
    r: float | None = None
    c0: float = DEFAULT_C0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if not self.c0 > 0:
            raise ValueError("c0 must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.r is not None and not 0 < self.r <= 1:
            raise ValueError(f"r must lie in (0, 1], got {self.r}")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def clamp_fanout(m: float, max_fanout: int | None = None) -> int:
    """Round half-up, then clamp to ``[1, max_fanout]``."""
    if not math.isfinite(m):
        m = 1.0 if m != math.inf else float(max_fanout or 1)
    k = max(1, round_half_up(m))
    if max_fanout is not None:
        k = min(k, max_fanout)
    return k


def _degenerate(cfg: GranularityConfig) -> bool:
    if cfg.noisy_total <= 0:
        warnings.warn(
            f"non-positive noisy total {cfg.noisy_total}; falling back to m = 1",
            RuntimeWarning,
        )
        return True
    return False


def _eug_alpha(cfg: GranularityConfig, r_factor: float) -> float:
    d = cfg.d
    base = (2 * (d - 1) / d) * r_factor * cfg.noisy_total * cfg.epsilon / (math.sqrt(2) * cfg.c0)
    return base ** (2 / (3 * d - 2))


def eug_m_known_r_continuous(cfg: GranularityConfig) -> float:
    if cfg.d < 2:
        raise ValueError("the EUG formula needs d >= 2")
    if cfg.noisy_total <= 0:
        return 0.0
    r = 1.0 if cfg.r is None else cfg.r
    return _eug_alpha(cfg, r ** (1 / cfg.d - 0.5))


def eug_integration_factor(d: int) -> float:
    return d * (3 * d - 2) / (3 * d * d - 3 * d + 2)


def eug_m_integrated_continuous(cfg: GranularityConfig) -> float:
    if cfg.d < 2:
        raise ValueError("the EUG formula needs d >= 2")
    if cfg.noisy_total <= 0:
        return 0.0
    return _eug_alpha(cfg, 1.0) * eug_integration_factor(cfg.d)


def eug_m_known_r(cfg: GranularityConfig, max_fanout: int | None = None) -> int:
    if cfg.r is None:
        raise ValueError("query selectivity r is required")
    if _degenerate(cfg):
        return 1
    return clamp_fanout(eug_m_known_r_continuous(cfg), max_fanout)


def eug_m_integrated(cfg: GranularityConfig, max_fanout: int | None = None) -> int:
    if _degenerate(cfg):
        return 1
    return clamp_fanout(eug_m_integrated_continuous(cfg), max_fanout)


def eug_m(cfg: GranularityConfig, max_fanout: int | None = None) -> int:
    """Known-selectivity formula when ``cfg.r`` is set, the r-integrated one otherwise."""
    if cfg.r is not None:
        return eug_m_known_r(cfg, max_fanout)
    return eug_m_integrated(cfg, max_fanout)


def ebp_m_continuous(noisy_total: float, epsilon: float, d: int) -> float:
    if d < 1:
        raise ValueError("d must be >= 1")
    if noisy_total <= 0:
        return 0.0
    return (noisy_total * epsilon / math.sqrt(2)) ** (2 / (3 * d))


def ebp_m(noisy_total: float, epsilon: float, d: int, max_fanout: int | None = None) -> int:
    """Entropy-balance fanout. ``d`` may be a residual dimension count."""
    if noisy_total <= 0:
        warnings.warn(
            f"non-positive noisy total {noisy_total}; falling back to m = 1", RuntimeWarning
        )
        return 1
    return clamp_fanout(ebp_m_continuous(noisy_total, epsilon, d), max_fanout)


def min_extent(extents: Sequence[int]) -> int:
    return min(int(f) for f in extents)


# numeric oracles


def eug_objective(m, cfg: GranularityConfig):
    """Noise error plus non-uniformity error of a query covering fraction r."""
    d = cfg.d
    r = 1.0 if cfg.r is None else cfg.r
    noise = math.sqrt(2 * r) * np.power(m, d / 2) / cfg.epsilon
    uniformity = r ** (1 / d) * cfg.noisy_total / (cfg.c0 * np.power(m, d - 1))
    return noise + uniformity


def ebp_imbalance(m, cfg: GranularityConfig):
    """Squared gap (bits) between noise entropy and information lost to coarsening."""
    d = cfg.d
    noise_entropy = -np.log2(cfg.epsilon / (math.sqrt(2) * np.power(m, d / 2)))
    information_loss = np.log2(cfg.noisy_total) - d * np.log2(m)
    return (noise_entropy - information_loss) ** 2


def solve_m_numeric(objective: Literal["eug", "ebp"], cfg: GranularityConfig,
                    bounds: tuple[float, float] = M_SEARCH_RANGE, grid: int = 401) -> float:
    """Golden-section minimiser of the chosen objective over ``m`` in ``bounds``.

    The search runs in log m. A coarse scan locates the bracket and rejects
    objectives whose minimum sits on the boundary or that are not unimodal.
    """
    if objective == "eug":
        f = lambda x: eug_objective(np.exp(x), cfg)
    elif objective == "ebp":
        if cfg.noisy_total <= 0:
            raise ValueError("the entropy balance needs a positive noisy total")
        f = lambda x: ebp_imbalance(np.exp(x), cfg)
    else:
        raise ValueError(f"unknown objective {objective!r}")
    xs = np.linspace(math.log(bounds[0]), math.log(bounds[1]), grid)
    ys = f(xs)
    k = int(np.argmin(ys))
    if k == 0 or k == grid - 1:
        raise BracketError(
            f"{objective} minimum lies on the search boundary (m={math.exp(xs[k]):.6g}, "
            f"f={ys[k]:.6g}); cfg={cfg}"
        )
    steps = np.sign(np.diff(ys))
    steps = steps[steps != 0]
    if np.count_nonzero(np.diff(steps)) > 1:
        raise BracketError(f"{objective} objective is not unimodal on {bounds}; cfg={cfg}")
    x = optimize.golden(f, brack=(xs[k - 1], xs[k], xs[k + 1]), tol=1e-12)
    return float(math.exp(x))
