"""Experiment harness: method dispatch, single runs and plan sweeps."""

from __future__ import annotations

import configparser
import itertools
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .daf import DafConfig, daf_entropy, daf_homogeneity
from .data import SyntheticSpec, default_width, generate
from .flat import sanitize_grid, sanitize_identity, sanitize_uniform
from .matrix import FrequencyMatrix
from .query import WorkloadSpec, evaluate, generate_workload
from .sanitized import InfeasibleError, SanitizedMatrix

log = logging.getLogger(__name__)

METHODS = ("uniform", "identity", "eug", "ebp", "daf-entropy", "daf-homogeneity")
FLAT_METHODS = METHODS[:4]
DAF_METHODS = METHODS[4:]
BUDGETS = (0.1, 0.3, 0.5)
WORKERS_ENV = "DPFREQ_WORKERS"


def sanitize(method: str, m: FrequencyMatrix, eps: float, seed: int = 0,
             noiseless: bool = False, **opts) -> SanitizedMatrix:
    """Run a sanitizer by name; ``opts`` carries method-specific settings."""
    method = method.lower()
    if method == "uniform":
        return sanitize_uniform(m, eps, seed, noiseless=noiseless)
    if method == "identity":
        return sanitize_identity(m, eps, seed, noiseless=noiseless,
                                 **_pick(opts, "cell_cap"))
    if method in ("eug", "ebp"):
        return sanitize_grid(m, eps, method, seed=seed, noiseless=noiseless,
                             **_pick(opts, "eps0_fraction", "r", "c0"))
    if method in DAF_METHODS:
        cfg = DafConfig(eps, seed=seed, **_pick(opts, "q", "p", "stop_threshold_multiplier"))
        run = daf_entropy if method == "daf-entropy" else daf_homogeneity
        return run(m, cfg, noiseless=noiseless)[0]
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def _pick(opts: dict, *keys) -> dict:
    return {k: opts[k] for k in keys if opts.get(k) is not None}


def timed_sanitize(method, m, eps, seed=0, **opts) -> SanitizedMatrix:
    start = time.perf_counter()
    sm = sanitize(method, m, eps, seed, **opts)
    sm.metadata["runtime_s"] = time.perf_counter() - start
    return sm


@dataclass(frozen=True)
class DatasetSpec:
    """Synthetic dataset axis of a plan; the Gaussian std is a fraction of the extent."""

    kind: str = "gaussian"
    n_points: int = 10**5
    std_fraction: float = 0.1
    a: float = 1.2

    def label(self) -> str:
        if self.kind == "gaussian":
            return f"gaussian-std{self.std_fraction:g}-n{self.n_points}"
        return f"zipf-a{self.a:g}-n{self.n_points}"

    def synthetic(self, d: int, seed: int) -> SyntheticSpec:
        width = default_width(self.n_points, d)
        if self.kind == "gaussian":
            return SyntheticSpec("gaussian", d, self.n_points,
                                 variance=(self.std_fraction * width) ** 2, seed=seed)
        return SyntheticSpec("zipf", d, self.n_points, a=self.a, seed=seed)


@dataclass
class ExperimentPlan:
    datasets: list[DatasetSpec] = field(default_factory=lambda: [DatasetSpec()])
    dims: list[int] = field(default_factory=lambda: [2])
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    budgets: list[float] = field(default_factory=lambda: list(BUDGETS))
    seeds: list[int] = field(default_factory=lambda: list(range(5)))
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    mre_floor: float = 1.0
    method_opts: dict = field(default_factory=dict)

    def cells(self):
        return list(itertools.product(self.datasets, self.dims, self.methods, self.budgets))


def _csv_list(value: str, cast=str) -> list:
    return [cast(v.strip()) for v in value.split(",") if v.strip()]


def parse_plan(text: str) -> ExperimentPlan:
    """Read an INI plan with ``[data]``, ``[sanitize]`` and ``[workload]`` sections.

    Comma-separated values span an axis, e.g. ``d = 2, 4`` or
    ``eps = 0.1, 0.3, 0.5``. ``seeds`` is either a count or a list.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.read_string(text)
    data = cp["data"] if cp.has_section("data") else {}
    san = cp["sanitize"] if cp.has_section("sanitize") else {}
    work = cp["workload"] if cp.has_section("workload") else {}
    kinds = _csv_list(data.get("kind", "gaussian"))
    n = int(float(data.get("n", 10**5)))
    stds = _csv_list(data.get("std_fraction", "0.1"), float)
    skews = _csv_list(data.get("a", "1.2"), float)
    datasets = []
    for kind in kinds:
        if kind == "gaussian":
            datasets += [DatasetSpec("gaussian", n, std_fraction=s) for s in stds]
        elif kind == "zipf":
            datasets += [DatasetSpec("zipf", n, a=a) for a in skews]
        else:
            raise ValueError(f"unknown dataset kind {kind!r}")
    seeds_raw = san.get("seeds", "5")
    seeds = _csv_list(seeds_raw, int)
    if len(seeds) == 1 and "," not in seeds_raw:
        seeds = list(range(seeds[0]))
    wkind = work.get("kind", "random")
    count = int(work.get("count", 1000))
    wseed = int(work.get("seed", 0))
    if wkind in ("random", "random_shape_size"):
        workload = WorkloadSpec("random_shape_size", count, wseed)
    elif wkind in ("coverage", "fixed_coverage"):
        workload = WorkloadSpec("fixed_coverage", count, wseed, float(work["pct"]) / 100)
    else:
        raise ValueError(f"unknown workload kind {wkind!r}")
    opts = {}
    for key, cast in (("q", float), ("p", int), ("stop_threshold_multiplier", float),
                      ("eps0_fraction", float), ("cell_cap", int)):
        if key in san:
            opts[key] = cast(san[key])
    plan = ExperimentPlan(
        datasets=datasets,
        dims=_csv_list(data.get("d", "2"), int),
        methods=[m.lower() for m in _csv_list(san.get("methods", ",".join(METHODS)))],
        budgets=_csv_list(san.get("eps", "0.1,0.3,0.5"), float),
        seeds=seeds,
        workload=workload,
        mre_floor=float(work.get("mre_floor", 1.0)),
        method_opts=opts,
    )
    for method in plan.methods:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}")
    return plan


def run_once(m: FrequencyMatrix, method: str, eps: float, seed: int, workload: WorkloadSpec,
             mre_floor: float = 1.0, **opts) -> dict:
    """Sanitize + evaluate one configuration; infeasible methods come back as skipped."""
    try:
        sm = timed_sanitize(method, m, eps, seed, **opts)
    except InfeasibleError as exc:
        return {"status": "skipped", "reason": str(exc)}
    queries = generate_workload(workload, m.extents)
    ev = evaluate(sm, m, queries, mre_floor)
    return {
        "status": "ok",
        "mean_mre": ev.mean_mre,
        "median_mre": ev.median_mre,
        "runtime_s": sm.metadata["runtime_s"],
        "spent": sm.ledger.spent,
        "partitions": len(sm),
    }


def _run_group(args) -> list[dict]:
    dataset, d, seed, jobs, workload, mre_floor, opts = args
    spec = dataset.synthetic(d, seed)
    m = generate(spec)
    rows = []
    for method, eps in jobs:
        base = {"dataset": dataset.label(), "d": d, "method": method, "eps": eps, "seed": seed}
        try:
            res = run_once(m, method, eps, seed, workload, mre_floor, **opts)
        except Exception as exc:  # recorded per row; the sweep carries on
            log.exception("run failed: %s", base)
            res = {"status": "failed", "reason": f"{type(exc).__name__}: {exc}"}
        rows.append({**base, **res})
    return rows


def run_plan(plan: ExperimentPlan, workers: int | None = None) -> list[dict]:
    """Every (dataset, d, method, eps, seed) run; output order is independent of scheduling."""
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    jobs = [(meth, eps) for meth in plan.methods for eps in plan.budgets]
    groups = [
        (ds, d, seed, jobs, plan.workload, plan.mre_floor, plan.method_opts)
        for ds in plan.datasets for d in plan.dims for seed in plan.seeds
    ]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_group, groups))
    else:
        results = [_run_group(g) for g in groups]
    rows = [row for group in results for row in group]
    key = lambda r: (r["dataset"], r["d"], METHODS.index(r["method"]), r["eps"], r["seed"])
    return sorted(rows, key=key)


AGGREGATE_FIELDS = [
    "dataset", "d", "method", "eps", "n_seeds", "status", "mean_mre", "std_mre",
    "median_mre", "runtime_mean_s", "runtime_std_s",
]
RUNTIME_FIELDS = ("runtime_mean_s", "runtime_std_s")


def aggregate(rows: list[dict]) -> list[dict]:
    """One row per plan cell, averaging the per-seed results."""
    out = []
    keyf = lambda r: (r["dataset"], r["d"], r["method"], r["eps"])
    order = []
    groups: dict = {}
    for r in rows:
        k = keyf(r)
        if k not in groups:
            order.append(k)
            groups[k] = []
        groups[k].append(r)
    for k in order:
        ok = [r for r in groups[k] if r["status"] == "ok"]
        statuses = {r["status"] for r in groups[k]}
        row = dict(zip(("dataset", "d", "method", "eps"), k))
        row["n_seeds"] = len(ok)
        row["status"] = "ok" if statuses == {"ok"} else "+".join(sorted(statuses))
        if ok:
            mres = np.array([r["mean_mre"] for r in ok])
            times = np.array([r["runtime_s"] for r in ok])
            row.update(
                mean_mre=float(mres.mean()), std_mre=float(mres.std()),
                median_mre=float(np.median([r["median_mre"] for r in ok])),
                runtime_mean_s=float(times.mean()), runtime_std_s=float(times.std()),
            )
        else:
            row.update({f: math.nan for f in AGGREGATE_FIELDS[6:]})
        out.append(row)
    return out


def protocol_notes(plan: ExperimentPlan) -> list[str]:
    w = plan.workload
    desc = w.kind if w.coverage is None else f"{w.kind}({w.coverage:g})"
    return [
        f"# workload={desc} queries={w.count} workload_seed={w.seed}",
        f"# mre=|true-noisy|/max(true,{plan.mre_floor:g})*100",
        f"# seeds={','.join(map(str, plan.seeds))}",
    ]


def with_seeds(plan: ExperimentPlan, seeds) -> ExperimentPlan:
    return replace(plan, seeds=list(seeds))
