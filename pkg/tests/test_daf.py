import math

import numpy as np
import pytest

from dpfreq.daf import (
    DafConfig, candidate_boundaries, candidate_sets, daf_entropy, daf_homogeneity, dump_tree,
    homogeneity_objective, level_budget, level_budget_closed_form, root_budget, stop_condition,
)
from dpfreq.data import SyntheticSpec, gen_gaussian, gen_zipf
from dpfreq.matrix import Region, from_points, region_sum
from dpfreq.mechanism import NoiseStream
from conftest import random_matrix

RUNNERS = [daf_entropy, daf_homogeneity]


@pytest.fixture(scope="module")
def gauss3():
    return gen_gaussian(SyntheticSpec("gaussian", 3, 50000, (40, 40, 40), variance=36.0, seed=2))


def test_level_budget_spot_value():
    e = [level_budget(i, 2, 4, 0.099) for i in (1, 2)]
    assert e == pytest.approx([0.038262, 0.060738], abs=1e-6)


def test_level_budget_sums_and_matches_closed_form():
    rng = np.random.default_rng(0)
    for _ in range(200):
        d = int(rng.integers(1, 7))
        m0 = int(rng.integers(2, 65))
        eps = float(rng.uniform(0.01, 2))
        parts = [level_budget(i, d, m0, eps) for i in range(1, d + 1)]
        assert math.fsum(parts) == pytest.approx(eps, abs=1e-12)
        closed = [level_budget_closed_form(i, d, m0, eps) for i in range(1, d + 1)]
        assert parts == pytest.approx(closed, rel=1e-9)
        assert parts == sorted(parts)


def test_level_budget_flat_when_m0_is_one():
    assert level_budget(2, 4, 1, 0.8) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        level_budget(0, 2, 4, 1.0)


def test_root_budget_and_stop_rule():
    assert root_budget(0.5) == pytest.approx(0.005)
    assert stop_condition(10, 0.1)  # threshold 2*sqrt(2)/0.1 ~ 28.3
    assert not stop_condition(30, 0.1)
    assert not stop_condition(0, 0.1, 0.0)
    assert stop_condition(-1, 0.1, 0.0)


def test_config_validation():
    for bad in (dict(eps_tot=0), dict(eps_tot=1, q=1.0), dict(eps_tot=1, p=0),
                dict(eps_tot=1, stop_threshold_multiplier=-1)):
        with pytest.raises(ValueError):
            DafConfig(**bad)


def _dense_objective(dense_row, lo, hi, splits):
    edges = [lo, *splits, hi]
    total = 0.0
    for a, b in zip(edges, edges[1:]):
        seg = np.asarray(dense_row[a:b], dtype=float)
        total += np.abs(seg - seg.mean()).sum()
    return total


def test_homogeneity_objective_example():
    m = from_points([(0, 0), (0, 0), (0, 1), (0, 1)], (1, 4))
    r = Region.full(m.extents)
    assert homogeneity_objective(m, r, 1, [2]) == pytest.approx(0.0)
    assert homogeneity_objective(m, r, 1, []) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        homogeneity_objective(m, r, 1, [0])


def test_homogeneity_objective_matches_dense():
    rng = np.random.default_rng(3)
    for _ in range(100):
        m = random_matrix(rng, (1, 12), int(rng.integers(1, 40)))
        dense = m.to_dense()[0]
        k = int(rng.integers(0, 4))
        splits = sorted(rng.choice(np.arange(1, 12), k, replace=False).tolist())
        got = homogeneity_objective(m, Region.full(m.extents), 1, splits)
        assert got == pytest.approx(_dense_objective(dense, 0, 12, splits), abs=1e-9)


def test_homogeneity_objective_multidim_region():
    rng = np.random.default_rng(4)
    m = random_matrix(rng, (6, 8, 5), 300)
    r = Region(((1, 5), (2, 8), (0, 3)))
    dense = m.to_dense()[1:5, 2:8, 0:3]
    # sub-regions along dimension 1, cut at 5: deviations within each whole slab
    got = homogeneity_objective(m, r, 1, [5])
    want = sum(np.abs(s - s.mean()).sum() for s in (dense[:, :3, :].astype(float),
                                                     dense[:, 3:, :].astype(float)))
    assert got == pytest.approx(want)


def test_candidate_sets_stay_in_their_intervals():
    r = Region(((0, 3), (5, 28)))
    c = candidate_sets(r, 1, 4, 50, NoiseStream(1))
    assert c.shape == (50, 4)
    starts = np.array([5, 10, 16, 22])
    ends = np.array([10, 16, 22, 28])
    assert np.all((c >= starts) & (c < ends))
    b = candidate_boundaries(c)
    assert np.all((b > 5) & (b < 28))
    assert np.all(np.diff(b, axis=1) > 0)
    with pytest.raises(ValueError):
        candidate_sets(r, 1, 1, 4, NoiseStream(1))


@pytest.mark.parametrize("run", RUNNERS)
@pytest.mark.parametrize("eps", [0.1, 0.3, 0.5])
def test_budget_is_fully_spent(gauss3, run, eps):
    sm, root = run(gauss3, DafConfig(eps, seed=1))
    assert sm.ledger.spent == pytest.approx(eps, abs=1e-9)
    assert sm.is_cover()
    assert sm.metadata["leaves"] == len(sm)


@pytest.mark.parametrize("run", RUNNERS)
def test_noiseless_leaves_carry_true_counts(gauss3, run):
    sm, root = run(gauss3, DafConfig(0.5, stop_threshold_multiplier=0.0), noiseless=True)
    assert sm.noisy.sum() == gauss3.total
    for region, noisy, _ in sm.partitions:
        assert noisy == region_sum(gauss3, region)
    for node in root.walk():
        assert node.count == region_sum(gauss3, node.region)
        if node.children:
            assert sum(c.count for c in node.children) == node.count


def test_entropy_children_are_equal_width(gauss3):
    _, root = daf_entropy(gauss3, DafConfig(0.5, stop_threshold_multiplier=0.0), noiseless=True)
    for node in root.walk():
        if node.children:
            widths = [c.region.widths[node.depth] for c in node.children]
            assert max(widths) - min(widths) <= 1
            assert len(node.children) == len(widths)


@pytest.mark.parametrize("run", RUNNERS)
def test_deterministic(gauss3, run):
    a, _ = run(gauss3, DafConfig(0.3, seed=9))
    b, _ = run(gauss3, DafConfig(0.3, seed=9))
    c, _ = run(gauss3, DafConfig(0.3, seed=10))
    assert a.same_partitions(b)
    assert not a.same_partitions(c)


@pytest.mark.parametrize("run", RUNNERS)
def test_sparse_matrix_prunes(run):
    m = gen_zipf(SyntheticSpec("zipf", 4, 2000, (20, 20, 20, 20), a=1.5, seed=0))
    sm, root = run(m, DafConfig(0.1, seed=3))
    assert sm.metadata["pruned"] > 0
    assert sm.ledger.spent == pytest.approx(0.1, abs=1e-9)
    assert sm.is_cover()
    for leaf in root.leaves():
        assert leaf.acc + leaf.eps == pytest.approx(0.1, abs=1e-12)


@pytest.mark.parametrize("run", RUNNERS)
def test_empty_matrix(run):
    m = from_points([], (10, 10))
    sm, root = run(m, DafConfig(0.5))
    assert sm.ledger.spent == pytest.approx(0.5, abs=1e-9)
    assert sm.is_cover()


def test_homogeneity_with_single_child_still_spends():
    m = from_points([(0, 0)] * 10**4, (1, 1))
    sm, _ = daf_homogeneity(m, DafConfig(1.0, stop_threshold_multiplier=0.0))
    assert len(sm) == 1
    assert sm.ledger.spent == pytest.approx(1.0, abs=1e-9)
    assert any(e.label == "split" for e in sm.ledger.entries)


def test_homogeneity_metadata(gauss3):
    sm, _ = daf_homogeneity(gauss3, DafConfig(0.3, q=0.4, p=5))
    assert sm.metadata["q"] == 0.4 and sm.metadata["p"] == 5
    assert "candidate_rule" in sm.metadata


def test_dump_tree_marks_debug(gauss3):
    _, root = daf_entropy(gauss3, DafConfig(0.3))
    assert dump_tree(root).startswith("# depth")
    dbg = dump_tree(root, debug=True)
    assert dbg.startswith("# NON-PRIVATE")
    assert len(dbg.splitlines()) == sum(1 for _ in root.walk()) + 1


def test_homogeneity_objective_spec_rows():
    m = from_points([(0, 0), (0, 1)] + [(0, 2)] * 5 + [(0, 3)] * 5, (1, 4))
    r = Region.full(m.extents)
    assert homogeneity_objective(m, r, 1, [2]) == pytest.approx(0.0)
    assert homogeneity_objective(m, r, 1, [1]) == pytest.approx(16 / 3)


def test_stop_condition_examples():
    assert stop_condition(5, 0.05, 2.0)
    assert not stop_condition(10**6, 0.05, 2.0)
    assert not stop_condition(0.5, 0.05, 0.0)


def test_noiseless_homogeneity_picks_true_argmin(gauss3):
    """With noise off, each internal split is the best of the node's candidate sets."""
    cfg = DafConfig(0.5, p=6, stop_threshold_multiplier=0.0)
    _, root = daf_homogeneity(gauss3, cfg, noiseless=True)
    checked = 0
    for node in root.walk():
        if len(node.children) < 2:
            continue
        dim = node.depth
        stream = NoiseStream(cfg.seed, node.path)
        stream.uniform()  # the node's count release comes first
        cands = candidate_sets(node.region, dim, len(node.children), cfg.p, stream)
        scores = [homogeneity_objective(gauss3, node.region, dim, b)
                  for b in candidate_boundaries(cands)]
        chosen = [c.region.bounds[dim][0] for c in node.children[1:]]
        assert homogeneity_objective(gauss3, node.region, dim, chosen) == pytest.approx(min(scores))
        checked += 1
    assert checked > 0


def test_homogeneity_finds_density_cliff():
    # dense cells left of the cliff, empty cells right of it; the cliff sits mid-interval
    cliff = 130
    m = from_points([(0, j) for j in range(cliff) for _ in range(150)], (1, 1000))
    equal_dist, chosen_dist = [], []
    for seed in range(50):
        _, root = daf_homogeneity(m, DafConfig(0.05, seed=seed))
        split = root.children[0]
        edges = [c.region.bounds[1][0] for c in split.children[1:]]
        k = len(split.children)
        equal = [j * 1000 // k for j in range(1, k)]
        chosen_dist.append(min(abs(e - cliff) for e in edges))
        equal_dist.append(min(abs(e - cliff) for e in equal))
    assert np.median(chosen_dist) < np.median(equal_dist)


def test_entropy_adapts_to_density():
    std = 100.0
    m = gen_gaussian(SyntheticSpec("gaussian", 2, 10**6, (1000, 1000), variance=std**2, seed=7))
    center = np.random.default_rng(7).integers(0, np.array([1000, 1000]))
    sm, _ = daf_entropy(m, DafConfig(0.1))
    mid = (sm.lo + sm.hi) / 2
    inside = np.sum(((mid - center) / std) ** 2, axis=1) <= 1
    vols = np.array(sm.volumes())
    assert inside.any() and (~inside).any()
    assert np.median(vols[inside]) < np.median(vols[~inside])
