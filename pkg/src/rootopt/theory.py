"""Pure random trees with Q leaves over binary covariates, their containment
bound, and an exhaustive tree oracle."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from rootopt.data import Dataset
from rootopt.errors import BudgetExceeded
from rootopt.estimators import RootObjective
from rootopt.nuisance import NuisanceModels, fit_nuisance
from rootopt.tree import Leaf, Node, Split, WeightTree, n_leaves, predict_node

DEFAULT_BUDGET = 2_000_000


@dataclass(frozen=True, eq=False)
class BinaryTreeProblem:
    """Binary covariates, a loss on full-length 0/1 vectors and a leaf count."""

    xb: np.ndarray
    loss: Callable[[np.ndarray], float]
    q: int = 2

    def __post_init__(self):
        if not np.isin(self.xb, (0, 1)).all():
            raise ValueError("covariates must be binary")
        if self.q < 1:
            raise ValueError("q must be at least 1")

    @property
    def p(self) -> int:
        return self.xb.shape[1]

    def tree_loss(self, node: Node) -> float:
        return float(self.loss(predict_node(node, self.xb).astype(float)))


def binarize(x, cut=None) -> tuple[np.ndarray, np.ndarray]:
    """Indicator ``x > median`` per column (or ``x > cut``); returns (binary matrix, cuts)."""
    x = np.asarray(x, dtype=float)
    cut = np.median(x, axis=0) if cut is None else np.asarray(cut, dtype=float)
    return (x > cut).astype(float), cut


def binarized_problem(d: Dataset, q: int = 2, m: NuisanceModels | None = None, n_min=None):
    """Binarize ``d`` at feature medians and build the matching problem.

    Returns ``(problem, binary_dataset, nuisance)``. The nuisance is refit on the
    binary covariates unless ``m`` is given.
    """
    xb, _ = binarize(d.x)
    db = Dataset.from_arrays(xb, d.s, d.t, d.y, d.feature_names, strict=False)
    if m is None:
        m = fit_nuisance(db)
    obj = RootObjective(db, m, n_min)
    return BinaryTreeProblem(xb, obj.of_rows, q), db, m


def random_binary_problem(p: int = 2, q: int = 2, n: int = 200, seed: int = 0):
    """Seeded synthetic problem on ``p`` binary covariates with effect and selection
    both driven by the covariates."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 5]))
    for _ in range(100):
        xb = (rng.random((n, p)) < 0.5).astype(float)
        a = rng.normal(size=p)
        s = (rng.random(n) < 1 / (1 + np.exp(-(-0.3 + xb @ a)))).astype(np.int8)
        t = (rng.random(n) < 0.5).astype(float)
        b = 3 * rng.normal(size=p)
        y = t * (1 + xb @ b) + rng.normal(size=n)
        trial = s == 1
        if trial.sum() >= 10 and (~trial).sum() >= 1 and 0 < t[trial].sum() < trial.sum():
            break
    t[~trial] = np.nan
    y[~trial] = np.nan
    d = Dataset.from_arrays(xb, s, t, y)
    m = fit_nuisance(d)
    return BinaryTreeProblem(xb, RootObjective(d, m).of_rows, q), d, m


def prtq_sample(prob: BinaryTreeProblem, seed=0) -> WeightTree:
    """Grow ``q - 1`` random splits, each on a uniform leaf and uniform feature
    (threshold 0.5), then label the ``q`` leaves by fair coins."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    # leaves are tracked as paths of (feature, went_right) from the root
    leaves: list[tuple] = [()]
    for _ in range(prob.q - 1):
        i = int(rng.integers(len(leaves)))
        j = int(rng.integers(prob.p))
        path = leaves.pop(i)
        leaves[i:i] = [path + ((j, 0),), path + ((j, 1),)]
    labels = rng.integers(0, 2, size=len(leaves))
    root = _build(leaves, [int(c) for c in labels])
    return WeightTree(root, prob.tree_loss(root), seed if isinstance(seed, int) else None)


def _build(leaves: list[tuple], labels: list[int], depth: int = 0) -> Node:
    if len(leaves) == 1 and len(leaves[0]) == depth:
        return Leaf(labels[0])
    j = leaves[0][depth][0]
    left = [k for k, lf in enumerate(leaves) if lf[depth][1] == 0]
    right = [k for k, lf in enumerate(leaves) if lf[depth][1] == 1]
    return Split(
        j,
        0.5,
        _build([leaves[k] for k in left], [labels[k] for k in left], depth + 1),
        _build([leaves[k] for k in right], [labels[k] for k in right], depth + 1),
    )


def prtq_bound(p: int, q: int, k: int) -> float:
    """Upper bound on the chance that ``k`` iid PRTQ draws all miss a given optimal tree."""
    if p < 1 or q < 1 or k < 0:
        raise ValueError("need p >= 1, q >= 1, k >= 0")
    hit = p / math.factorial(q - 1) * (1 / (2 * p)) ** q
    base = min(1.0, max(0.0, 1.0 - hit))
    return base**k


def _structures(n_leaf: int, p: int):
    """Unlabeled tree shapes with exactly ``n_leaf`` leaves (splits at 0.5)."""
    if n_leaf == 1:
        yield None
        return
    for j in range(p):
        for a in range(1, n_leaf):
            for left in _structures(a, p):
                for right in _structures(n_leaf - a, p):
                    yield (j, left, right)


def _count_structures(n_leaf: int, p: int, memo=None) -> int:
    memo = {} if memo is None else memo
    if n_leaf == 1:
        return 1
    if n_leaf not in memo:
        memo[n_leaf] = p * sum(_count_structures(a, p, memo) * _count_structures(n_leaf - a, p, memo) for a in range(1, n_leaf))
    return memo[n_leaf]


def _label(shape, labels) -> Node:
    it = iter(labels)

    def build(s):
        if s is None:
            return Leaf(int(next(it)))
        return Split(s[0], 0.5, build(s[1]), build(s[2]))

    return build(shape)


def enumeration_size(p: int, max_q: int, exact_q: bool = False) -> int:
    qs = [max_q] if exact_q else range(1, max_q + 1)
    return sum(_count_structures(q, p) * 2**q for q in qs)


def brute_force_optimal(prob: BinaryTreeProblem, max_q: int | None = None, budget: int = DEFAULT_BUDGET, exact_q: bool = False) -> WeightTree:
    """Loss-minimizing tree among all trees with at most ``max_q`` leaves.

    With ``exact_q`` only trees with exactly ``max_q`` leaves are searched.
    Ties go to fewer leaves, then to the lexicographically smallest structure.
    Trees inducing the same labeling share one loss evaluation.
    """
    max_q = prob.q if max_q is None else max_q
    size = enumeration_size(prob.p, max_q, exact_q)
    if size > budget:
        raise BudgetExceeded(f"enumeration of {size} trees exceeds budget {budget}")
    cache: dict[bytes, float] = {}
    best = None
    for q in [max_q] if exact_q else range(1, max_q + 1):
        for shape in _structures(q, prob.p):
            for labels in itertools.product((0, 1), repeat=q):
                node = _label(shape, labels)
                w = predict_node(node, prob.xb).astype(float)
                key = w.tobytes()
                if key not in cache:
                    cache[key] = float(prob.loss(w))
                cand = (cache[key], n_leaves(node), WeightTree(node).structure_key(), node)
                if best is None or cand[:3] < best[:3]:
                    best = cand
    return WeightTree(best[3], best[0])


def prtq_containment(prob: BinaryTreeProblem, k: int, reps: int, seed: int = 0, tol: float = 1e-12) -> dict:
    """Fraction of ``reps`` batches of ``k`` PRTQ draws that miss every optimal tree.

    The optimum is taken over trees with exactly ``prob.q`` leaves, matching the
    sampler's support; a batch hits if any draw attains the optimal loss.
    """
    opt = brute_force_optimal(prob, prob.q, exact_q=True)
    misses = 0
    for r in range(reps):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), r]))
        hit = any(prtq_sample(prob, rng).objective <= opt.objective + tol for _ in range(k))
        misses += not hit
    rate = misses / reps
    se = math.sqrt(rate * (1 - rate) / reps)
    return {
        "bound": prtq_bound(prob.p, prob.q, k),
        "empirical_miss": rate,
        "se": se,
        "ci": [max(0.0, rate - 1.96 * se), min(1.0, rate + 1.96 * se)],
        "reps": reps,
        "k": k,
        "optimal_objective": opt.objective,
    }
