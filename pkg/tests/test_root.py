import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_dataset, seeds
from rootopt.data import Dataset
from rootopt.dgp import gen_community
from rootopt.estimators import root_objective
from rootopt.nuisance import fit_nuisance
from rootopt.root import (
    FeatureProbs,
    RashomonSet,
    RootConfig,
    build_rashomon,
    characteristic_tree,
    ensemble_predict,
    fit_gini_tree,
    init_feature_probs,
    sample_tree,
    tree_seed,
)
from rootopt.tree import Leaf, Split, WeightTree, predict_node


def _rs(*trees):
    return RashomonSet(tuple(WeightTree(t) for t in trees), len(trees), len(trees), 0.2)


@pytest.fixture(scope="module")
def community():
    d, _ = gen_community(2000, 4)
    return d, fit_nuisance(d)


def test_feature_probs_noise_features_equal():
    rng = np.random.default_rng(0)
    n = 4000
    x = rng.normal(size=(n, 3))
    s = (rng.random(n) < 0.5).astype(int)
    t = np.where(s == 1, rng.integers(0, 2, n), np.nan)
    y = np.where(s == 1, rng.normal(size=n), np.nan)
    d = Dataset.from_arrays(x, s, t, y)
    f = init_feature_probs(d, fit_nuisance(d), leaf_prob=0.4)
    assert f.leaf == 0.4
    feats = f.probs[:-1]
    assert feats.max() / feats.min() < 2.5
    assert f.probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_feature_probs_community_both_features(community):
    d, m = community
    f = init_feature_probs(d, m, 0.4, smoothing=0.01)
    a, b = f.probs[:2]
    assert min(a, b) > 0 and max(a, b) / min(a, b) <= 2


def test_feature_probs_all_leaf(community):
    d, m = community
    f = init_feature_probs(d, m, leaf_prob=1.0)
    assert np.array_equal(f.probs, [0.0, 0.0, 1.0])
    t = sample_tree(d, m, f, eps_explore=0.0, seed=3)
    assert isinstance(t.root, Leaf)


def test_all_leaf_picks_better_constant():
    d = random_dataset(5, n=120)
    m = fit_nuisance(d)
    f = FeatureProbs(np.array([0.0, 0.0, 1.0]))
    t = sample_tree(d, m, f, eps_explore=0.0, seed=0)
    # w = 0 everywhere is infeasible, so the exploit label is 1
    assert t.root == Leaf(1)
    assert t.objective == root_objective(d, m)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_sample_tree_contracts(seed):
    d = random_dataset(seed % 1000, n=100)
    m = fit_nuisance(d)
    f = init_feature_probs(d, m, 0.4)
    trace = []
    cfg = RootConfig(M=1, m_keep=1, max_depth=4)
    t = sample_tree(d, m, f, seed=seed, config=cfg, trace=trace)
    assert t.depth <= 4
    assert t.objective == pytest.approx(root_objective(d, m, t.predict(d.x)), rel=1e-9, abs=1e-12) or (
        math.isinf(t.objective) and math.isinf(root_objective(d, m, t.predict(d.x)))
    )
    assert all(new <= parent for new, parent, acc in trace if acc)


def test_sample_tree_deterministic(community):
    d, m = community
    f = init_feature_probs(d, m, 0.4)
    a = sample_tree(d, m, f, seed=11)
    b = sample_tree(d, m, f, seed=11)
    assert a.to_dict() == b.to_dict()


def test_rashomon_single_tree(community):
    d, m = community
    rs = build_rashomon(d, m, RootConfig(M=1, m_keep=1, seed=2))
    assert len(rs) == 1 and rs.M == 1
    f = init_feature_probs(d, m, 0.4)
    assert rs.best.to_dict() == sample_tree(d, m, f, seed=tree_seed(2, 0), config=RootConfig(M=1, m_keep=1, seed=2)).to_dict()


def test_rashomon_selection_invariants(community):
    d, m = community
    from rootopt.root import sample_trees, select_rashomon

    cfg = RootConfig(M=60, m_keep=5, seed=3)
    trees = sample_trees(d, m, cfg)
    rs = select_rashomon(trees, 5, 0.2)
    objs = [t.objective for t in rs.trees]
    assert objs == sorted(objs)
    keys = [t.structure_key() for t in rs.trees]
    assert len(set(keys)) == len(keys)
    kept = set(keys)
    assert all(t.objective >= objs[-1] for t in trees if t.structure_key() not in kept)
    assert len(rs) == min(5, len({t.structure_key() for t in trees}))


def test_rashomon_reachability_community():
    d, _ = gen_community(2000, 30)
    m = fit_nuisance(d)
    rs = build_rashomon(d, m, RootConfig(M=500, m_keep=10, seed=7))
    assert rs.best.objective <= root_objective(d, m)


def test_rashomon_matches_depth_one_brute_force():
    d, _ = gen_community(400, 8)
    m = fit_nuisance(d)
    unpruned = root_objective(d, m)
    best = min(unpruned, root_objective(d, m, np.zeros(d.n)))
    for j in range(d.p):
        thr = float(np.median(d.x[:, j]))
        left = d.x[:, j] <= thr
        for cl, cr in itertools.product((0, 1), repeat=2):
            best = min(best, root_objective(d, m, np.where(left, cl, cr).astype(float)))
    assert best < unpruned
    rs = build_rashomon(d, m, RootConfig(M=200, seed=1))
    assert rs.best.objective <= best + 1e-9


def test_rashomon_parallel_matches_serial(community):
    d, m = community
    cfg = RootConfig(M=40, m_keep=5, seed=9)
    a = json.dumps(build_rashomon(d, m, cfg, n_jobs=1).to_dict(), sort_keys=True)
    b = json.dumps(build_rashomon(d, m, cfg, n_jobs=3).to_dict(), sort_keys=True)
    assert a == b


def test_rashomon_json_round_trip(community):
    d, m = community
    rs = build_rashomon(d, m, RootConfig(M=20, m_keep=4, seed=1))
    back = RashomonSet.from_dict(json.loads(json.dumps(rs.to_dict())))
    assert back.to_dict() == rs.to_dict()
    assert np.array_equal(ensemble_predict(back, d.x), ensemble_predict(rs, d.x))


def test_vote_examples():
    one, zero = Leaf(1), Leaf(0)
    x = np.zeros(2)
    assert ensemble_predict(_rs(one, one, zero), x) == 1
    assert ensemble_predict(_rs(one, zero), x) == 1
    assert ensemble_predict(_rs(zero, zero, zero, one), x) == 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=9), st.randoms(use_true_random=False))
def test_vote_order_invariant(labels, rnd):
    trees = [Split(0, 0.0, Leaf(c), Leaf(1 - c)) for c in labels]
    shuffled = list(trees)
    rnd.shuffle(shuffled)
    x = np.array([[-1.0], [1.0]])
    assert np.array_equal(ensemble_predict(_rs(*trees), x), ensemble_predict(_rs(*shuffled), x))


def test_characteristic_constant(community):
    d, _ = community
    ct = characteristic_tree(_rs(Leaf(1)), d, 3)
    assert ct.root == Leaf(1) and ct.extra["agreement"] == 1.0


def test_characteristic_recovers_split():
    rng = np.random.default_rng(0)
    n = 300
    x = np.column_stack([rng.uniform(0, 6, n), rng.normal(size=n)])
    s = (rng.random(n) < 0.5).astype(int)
    t = np.where(s == 1, rng.integers(0, 2, n), np.nan)
    y = np.where(s == 1, 1.0, np.nan)
    d = Dataset.from_arrays(x, s, t, y)
    ct = characteristic_tree(_rs(Split(0, 3.0, Leaf(1), Leaf(0))), d, 3)
    assert ct.extra["agreement"] >= 0.99
    assert ct.depth == 1 and ct.root.feature == 0
    assert ct.root.left == Leaf(1) and ct.root.right == Leaf(0)
    below = x[x[:, 0] <= 3, 0].max()
    above = x[x[:, 0] > 3, 0].min()
    assert below <= ct.root.threshold < above


def test_characteristic_community_agreement(community):
    d, m = community
    rs = build_rashomon(d, m, RootConfig(M=500, m_keep=10, seed=7))
    ct = characteristic_tree(rs, d, 3, m)
    assert ct.depth <= 3
    assert ct.extra["agreement"] >= 0.9


def test_gini_tree_matches_sklearn_when_available():
    tree_mod = pytest.importorskip("sklearn.tree")
    rng = np.random.default_rng(2)
    x = rng.normal(size=(200, 3))
    y = ((x[:, 0] > 0.3) & (x[:, 2] < 1)).astype(int)
    ours = predict_node(fit_gini_tree(x, y, 2), x)
    ref = tree_mod.DecisionTreeClassifier(max_depth=2, random_state=0).fit(x, y).predict(x)
    assert (ours == ref).mean() == 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        RootConfig(M=1, m_keep=2)
    with pytest.raises(ValueError):
        RootConfig(eps_explore=1.5)
