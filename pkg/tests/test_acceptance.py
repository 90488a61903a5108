"""Acceptance suite: one PASS/FAIL line per criterion at pinned tolerances."""

import itertools
import math
import time

import numpy as np
import pytest
from scipy import stats

from dpfreq import bench, cli, fileio, granularity as g
from dpfreq.daf import homogeneity_objective, level_budget
from dpfreq.data import SyntheticSpec, default_width, generate
from dpfreq.matrix import Region, from_points, region_sum
from dpfreq.mechanism import NoiseStream, laplace, parse_ledger
from dpfreq.query import WorkloadSpec, answer, answer_many, generate_workload
from dpfreq.sanitized import SanitizedMatrix

ACCEPT_BUDGETS = (0.1, 0.3, 0.5)


# 1. budget audit over the desk-scale grid

def test_c1_budget_audit(verdict):
    start = time.perf_counter()
    worst, runs, bad = 0.0, 0, []
    for kind, d in itertools.product(("gaussian", "zipf"), (2, 4, 6)):
        ds = bench.DatasetSpec(kind, 10**5)
        m = generate(ds.synthetic(d, seed=0))
        for method, eps in itertools.product(bench.METHODS, ACCEPT_BUDGETS):
            sm = bench.sanitize(method, m, eps, seed=1)
            dev = abs(sm.ledger.spent - eps)
            replay = parse_ledger(sm.ledger.dump())
            worst = max(worst, dev, abs(replay.spent - eps))
            runs += 1
            if dev > 1e-9 or not sm.ledger.within() or not sm.is_cover():
                bad.append((kind, d, method, eps, sm.ledger.spent))
    elapsed = time.perf_counter() - start
    ok = not bad and worst <= 1e-9 and elapsed < 120
    verdict(1, ok, f"{runs} runs, max |spent - eps_tot| = {worst:.2e} (tol 1e-9), "
                   f"{elapsed:.1f}s (limit 120s), failures={bad}")
    assert ok


# 2. granularity closed forms against the golden-section oracle

def _random_configs(rng, n, d_choices, want):
    out = []
    while len(out) < n:
        d = int(rng.choice(d_choices))
        cfg = g.GranularityConfig(10 ** rng.uniform(3, 9), float(rng.uniform(0.01, 1.0)), d,
                                  r=float(rng.uniform(1e-3, 1.0)))
        m = want(cfg)
        if 1.1 < m < 1e6 / 1.1:  # strictly interior to the oracle's search range
            out.append((cfg, m))
    return out


def test_c2_granularity_oracle(verdict):
    rng = np.random.default_rng(20)
    errs = {}
    cases = {
        "eug-known-r": (_random_configs(rng, 1000, range(2, 7), g.eug_m_known_r_continuous), "eug"),
        "eug-integrated-d2": (_random_configs(
            rng, 1000, [2], lambda c: g.eug_m_integrated_continuous(c)), "eug"),
        "ebp": (_random_configs(
            rng, 1000, range(1, 7), lambda c: g.ebp_m_continuous(c.noisy_total, c.epsilon, c.d)), "ebp"),
    }
    for name, (configs, objective) in cases.items():
        errs[name] = max(abs(closed - g.solve_m_numeric(objective, cfg)) / g.solve_m_numeric(objective, cfg)
                         for cfg, closed in configs)
    spot = g.GranularityConfig(10**6, 0.1, 2)
    eug_spot = g.eug_m_integrated_continuous(spot)
    ebp_spot = g.ebp_m_continuous(10**6, 0.1, 2)
    ok = (all(e <= 1e-6 for e in errs.values())
          and abs(eug_spot - 100) < 0.5 and abs(ebp_spot - 41.4) < 0.05)
    detail = ", ".join(f"{k} max rel err {v:.1e}" for k, v in errs.items())
    verdict(2, ok, f"1000 configs each: {detail} (tol 1e-6); "
                   f"spot EUG m={eug_spot:.4f} (~100), EBP m={ebp_spot:.4f} (~41.4)")
    assert ok


# 3. single-record sensitivity of the homogeneity objective

def _dense_objective(row, splits):
    edges = [0, *splits, len(row)]
    return sum(np.abs(seg - seg.mean()).sum()
               for seg in (np.asarray(row[a:b], dtype=float) for a, b in zip(edges, edges[1:])))


@pytest.fixture(scope="module")
def sensitivity_scan():
    """Largest |O(K) change| over all 1x6 rows in {0,1,2}, split sets of size <= 2, +/- one record."""
    n = 6
    split_sets = [s for k in range(3) for s in itertools.combinations(range(1, n), k)]
    region = Region(((0, 1), (0, n)))
    cache = {}

    def objective(row):
        if row not in cache:
            pts = [(0, j) for j, c in enumerate(row) for _ in range(c)]
            m = from_points(pts, (1, n))
            cache[row] = np.array([homogeneity_objective(m, region, 1, s) for s in split_sets])
        return cache[row]

    best, witness, oracle_gap = 0.0, None, 0.0
    for row in itertools.product(range(3), repeat=n):
        base = objective(row)
        for j, delta in itertools.product(range(n), (1, -1)):
            if row[j] + delta < 0:
                continue
            nb = list(row)
            nb[j] += delta
            change = np.abs(objective(tuple(nb)) - base)
            k = int(np.argmax(change))
            if change[k] > best:
                best, witness = float(change[k]), (row, tuple(nb), split_sets[k])
    for row, vals in itertools.islice(cache.items(), 0, None, 37):
        dense = np.array([_dense_objective(row, s) for s in split_sets])
        oracle_gap = max(oracle_gap, float(np.max(np.abs(dense - vals))))
    return best, witness, oracle_gap, len(cache)


def test_c3_sensitivity_bound(sensitivity_scan, verdict):
    best, witness, gap, rows = sensitivity_scan
    ok = best <= 2 + 1e-12 and gap < 1e-9
    verdict("3 (bound)", ok, f"max change {best:.6f} <= 2 over {rows} rows x 16 split sets; "
                             f"dense-oracle agreement {gap:.1e}")
    assert ok


def test_c3_tightness_witness(sensitivity_scan, verdict):
    best, witness, _, _ = sensitivity_scan
    ok = best > 1.9
    verdict("3 (witness)", ok, f"largest change found {best:.6f} (needs > 1.9) at {witness}; "
                               f"an n-cell cluster moves by at most 2(n-1)/n = {2 * 5 / 6:.4f} for n = 6")
    assert ok


# 4. level budgets add up to the post-root budget

def test_c4_budget_allocation(verdict):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 7))
        m0 = int(rng.integers(1, 65))
        eps = float(rng.uniform(1e-3, 5.0))
        total = math.fsum(level_budget(i, d, m0, eps) for i in range(1, d + 1))
        worst = max(worst, abs(total - eps))
    spot = (level_budget(1, 2, 4, 0.099), level_budget(2, 2, 4, 0.099))
    ok = worst <= 1e-12 and abs(spot[0] - 0.03826) < 5e-6 and abs(spot[1] - 0.06074) < 5e-6
    verdict(4, ok, f"1000 draws, max |sum - eps'| = {worst:.1e} (tol 1e-12); "
                   f"spot d=2 m0=4 eps'=0.099 -> ({spot[0]:.5f}, {spot[1]:.5f})")
    assert ok


# 5. query engine against a per-cell materialisation

def _materialised(sm: SanitizedMatrix) -> np.ndarray:
    cells = np.zeros(sm.extents)
    for region, noisy, vol in sm.partitions:
        cells[tuple(slice(a, b) for a, b in region.bounds)] = noisy / vol
    return cells


def test_c5_query_engine(verdict):
    rng = np.random.default_rng(5)
    methods = bench.METHODS
    worst = 0.0
    for k in range(100):
        d = int(rng.integers(1, 5))
        side = default_width(10**4, d)  # side**d <= 1e4
        ext = tuple(int(rng.integers(1, side + 1)) for _ in range(d))
        n = int(rng.integers(1, 3000))
        m = from_points(np.stack([rng.integers(0, f, n) for f in ext], axis=1), ext)
        sm = bench.sanitize(methods[k % len(methods)], m, 0.5, seed=k, noiseless=True)
        cells = _materialised(sm)
        queries = generate_workload(WorkloadSpec(count=1000, seed=k), m.extents)
        want = np.array([cells[tuple(slice(a, b) for a, b in q.region.bounds)].sum() for q in queries])
        got = np.array([answer(sm, q) for q in queries])
        worst = max(worst, float(np.max(np.abs(got - want))),
                    float(np.max(np.abs(answer_many(sm, queries) - want))))
    # three boxes holding 2, 4 and 12 records; the query meets the first and third
    parts = [Region(((0, 1), (0, 2), (0, 2))), Region(((1, 3), (0, 2), (0, 2))),
             Region(((0, 3), (0, 2), (2, 3)))]
    fig = SanitizedMatrix.from_regions((3, 2, 3), parts, [2, 4, 12])
    example = answer(fig, Region(((0, 1), (0, 1), (1, 3))))
    ok = worst <= 1e-9 and abs(example - 2.5) <= 1e-9
    verdict(5, ok, f"100 matrices x 1000 queries, max |answer - oracle| = {worst:.1e} (tol 1e-9); "
                   f"worked example = {example}")
    assert ok


# 6. qualitative reproduction at desk scale

@pytest.mark.slow
def test_c6_reproduction(verdict, request):
    tr = request.config.pluginmanager.getplugin("terminalreporter")
    start = time.perf_counter()
    plan = bench.ExperimentPlan(
        datasets=[bench.DatasetSpec("gaussian", 10**6, std_fraction=0.1)],
        dims=[2, 4, 6], methods=list(bench.METHODS), budgets=list(ACCEPT_BUDGETS),
        seeds=list(range(5)), workload=WorkloadSpec("random_shape_size", 1000, seed=0),
    )
    rows = bench.run_plan(plan)
    elapsed = time.perf_counter() - start
    agg = bench.aggregate(rows)
    mean = {(r["d"], r["method"], r["eps"]): r["mean_mre"] for r in agg}
    statuses = {r["status"] for r in agg}
    if tr is not None:
        tr.write_line("")
        for r in agg:
            tr.write_line(f"  d={r['d']} {r['method']:<16} eps={r['eps']:<4} "
                          f"mean_mre={r['mean_mre']:.3f} std={r['std_mre']:.3f} "
                          f"runtime={r['runtime_mean_s']:.3f}s")

    a = mean[2, "ebp", 0.1] < mean[2, "eug", 0.1] and mean[2, "daf-entropy", 0.1] < mean[2, "eug", 0.1]
    verdict("6a", a, f"d=2 eps=0.1: EBP {mean[2, 'ebp', 0.1]:.2f}, DAF-Entropy "
                     f"{mean[2, 'daf-entropy', 0.1]:.2f} vs EUG {mean[2, 'eug', 0.1]:.2f}")

    b_fail = [(d, daf, eps, flat) for d in (4, 6) for eps in ACCEPT_BUDGETS
              for daf in bench.DAF_METHODS for flat in bench.FLAT_METHODS
              if not mean[d, daf, eps] < mean[d, flat, eps]]
    b = not b_fail
    verdict("6b", b, f"d in (4, 6), all budgets: DAF below every flat method; violations: {b_fail}")

    c_fail = [(d, meth) for d in (2, 4, 6) for meth in bench.METHODS
              if not mean[d, meth, 0.1] > mean[d, meth, 0.3] > mean[d, meth, 0.5]]
    c = not c_fail
    verdict("6c", c, f"mean MRE strictly decreasing in eps for every (d, method); violations: "
                     f"{[(d, m, [round(mean[d, m, e], 4) for e in ACCEPT_BUDGETS]) for d, m in c_fail]}")

    t = elapsed < 30 * 60 and statuses == {"ok"}
    verdict("6 (runtime)", t, f"{len(rows)} runs in {elapsed / 60:.1f} min (limit 30), statuses {statuses}")
    assert a and b and c and t


# 7. runtime shape

@pytest.mark.slow
def test_c7_runtime_shape(verdict):
    m = generate(SyntheticSpec("gaussian", 2, 10**6, (1000, 1000), variance=100.0**2, seed=7))
    times = {}
    for method in ("identity", "daf-entropy", "daf-homogeneity"):
        times[method] = bench.timed_sanitize(method, m, 0.1, seed=0).metadata["runtime_s"]
    ratios = {k: times["identity"] / times[k] for k in ("daf-entropy", "daf-homogeneity")}
    ok = all(r >= 10 for r in ratios.values()) and times["daf-entropy"] < 60
    verdict(7, ok, "runtimes " + ", ".join(f"{k} {v:.2f}s" for k, v in times.items())
            + "; identity/DAF ratios " + ", ".join(f"{k} {v:.0f}x" for k, v in ratios.items())
            + " (need >= 10x, DAF-Entropy < 60s)")
    assert ok


# 8. Laplace sampler statistics

def test_c8_laplace_statistics(verdict):
    x = laplace(10.0, NoiseStream(8, (8,)), size=10**6)
    mu, var = float(x.mean()), float(x.var())
    p = stats.kstest(x, stats.laplace(scale=10.0).cdf).pvalue
    ok = abs(mu) < 0.05 and abs(var - 200) / 200 <= 0.05 and p > 0.01
    verdict(8, ok, f"1e6 draws b=10: mean {mu:.4f} (|.| < 0.05), variance {var:.2f} "
                   f"(200 +/- 5%), KS p = {p:.3f} (> 0.01)")
    assert ok


# 9. determinism of the full pipeline

def _pipeline(root):
    root.mkdir()
    mat = root / "data.coo"
    cli.main(["generate", "--kind", "gaussian", "--d", "3", "--n", "50000", "--var", "9",
              "--seed", "3", "-o", str(mat)])
    outputs = {"data.coo": mat.read_bytes()}
    for method in bench.METHODS:
        san = root / f"data.{method}.san"
        assert cli.main(["sanitize", str(mat), "--method", method, "--eps", "0.3", "--seed", "11",
                         "-o", str(san)]) == 0
        assert cli.main(["evaluate", str(mat), str(san), "--count", "300", "--seed", "2"]) == 0
        outputs[san.name] = fileio.strip_volatile(san.read_text()).encode()
        for suffix in ("queries.csv", "summary.csv"):
            name = f"data.{method}.{suffix}"
            outputs[name] = (root / name).read_bytes()
    plan = root / "plan.ini"
    plan.write_text("[data]\nkind = gaussian, zipf\nn = 5000\nd = 2, 3\n"
                    "[sanitize]\neps = 0.1, 0.5\nseeds = 2\n[workload]\ncount = 100\n")
    agg = root / "agg.csv"
    assert cli.main(["sweep", str(plan), "-o", str(agg)]) == 0
    lines = agg.read_text().splitlines()
    header = lines[[i for i, ln in enumerate(lines) if not ln.startswith("#")][0]].split(",")
    keep = [i for i, f in enumerate(header) if f not in bench.RUNTIME_FIELDS]
    outputs["agg.csv"] = "\n".join(
        ln if ln.startswith("#") else ",".join(ln.split(",")[i] for i in keep) for ln in lines
    ).encode()
    return outputs


def test_c9_determinism(tmp_path, verdict):
    first, second = _pipeline(tmp_path / "a"), _pipeline(tmp_path / "b")
    differing = sorted(k for k in first if first[k] != second.get(k))
    ok = not differing and first.keys() == second.keys()
    verdict(9, ok, f"{len(first)} outputs compared byte for byte (timestamps and runtimes "
                   f"excluded); differing: {differing}")
    assert ok
