"""Rashomon set of optimal trees.

Trees are grown by randomized recursive splitting. Each split or leaf decision
is scored on the *global* objective, with only the local region's label varied.
The M sampled trees are ranked, and the best distinct ones are kept.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from rootopt._parallel import map_ordered
from rootopt.data import Dataset
from rootopt.estimators import RootObjective, pseudo_outcomes, root_objective
from rootopt.nuisance import NuisanceModels
from rootopt.tree import Leaf, Node, Split, WeightTree, predict_node


@dataclass(frozen=True)
class RootConfig:
    M: int = 5000
    m_keep: int = 10
    eps_explore: float = 0.2
    max_depth: int = 6
    leaf_prob: float = 0.4
    seed: int = 0
    gamma: float = 1.5  # leaf-probability growth per depth level
    rho: float = 0.5  # mass multiplier for a rejected feature
    smoothing: float = 0.01
    split_rule: str = "median"  # or "midrange"
    n_min: int | None = None

    def __post_init__(self):
        if not self.M >= self.m_keep >= 1:
            raise ValueError("need M >= m_keep >= 1")
        if not 0 <= self.eps_explore <= 1:
            raise ValueError("eps_explore must lie in [0, 1]")
        if not 0 < self.leaf_prob <= 1:
            raise ValueError("leaf_prob must lie in (0, 1]")
        if self.split_rule not in ("median", "midrange"):
            raise ValueError(f"unknown split rule {self.split_rule!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class FeatureProbs:
    """Split probabilities for each feature; the last entry is the leaf (stop) mass."""

    probs: np.ndarray

    @property
    def leaf(self) -> float:
        return float(self.probs[-1])

    @property
    def p(self) -> int:
        return len(self.probs) - 1


def init_feature_probs(d: Dataset, m: NuisanceModels, leaf_prob: float = 0.4, smoothing: float = 0.01) -> FeatureProbs:
    """Feature mass proportional to |corr(X_j, IPW contrast)| over trial rows, plus smoothing."""
    trial = d.trial
    y1, y0 = pseudo_outcomes(d, m)
    contrast = (y1 - y0)[trial]
    xt = d.x[trial]
    xc = xt - xt.mean(axis=0)
    cc = contrast - contrast.mean()
    denom = np.sqrt((xc**2).sum(axis=0) * (cc**2).sum())
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(denom > 0, np.abs(xc.T @ cc) / denom, 0.0)
    mass = corr + smoothing
    probs = np.empty(d.p + 1)
    probs[:-1] = (1 - leaf_prob) * mass / mass.sum()
    probs[-1] = leaf_prob
    return FeatureProbs(probs)


def _split_point(vals: np.ndarray, rule: str) -> float | None:
    hi = vals.max()
    lo = vals.min()
    if lo == hi:
        return None
    if rule == "midrange":
        thr = 0.5 * (lo + hi)
        return thr if thr < hi else lo
    thr = float(np.median(vals))
    if thr >= hi:
        # median sits on the maximum (ties): split just below it instead
        thr = float(vals[vals < hi].max())
    return thr


class _Sampler:
    """One randomized tree. ``wt`` holds the current labels of trial rows."""

    def __init__(self, x, objective: RootObjective, trial_pos, f: FeatureProbs, cfg: RootConfig, rng, trace=None):
        self.x = x
        self.obj = objective
        self.trial_pos = trial_pos
        self.cfg = cfg
        self.rng = rng
        self.trace = trace
        self.p = f.p
        self.wt = np.ones(objective.n1)
        self.loss = objective(self.wt)

    def choose(self, f: np.ndarray, depth: int) -> int:
        """Index of the drawn feature, or ``p`` for a leaf."""
        u = self.rng.random()
        if depth >= self.cfg.max_depth:
            return self.p
        leaf = min(1.0, f[-1] * self.cfg.gamma**depth)
        feat = f[:-1]
        total = feat.sum()
        if u < leaf or total <= 0:
            return self.p
        cum = np.cumsum(feat / total)
        j = int(np.searchsorted(cum, (u - leaf) / (1 - leaf), side="right"))
        return min(j, self.p - 1)

    def _loss_with(self, parts) -> float:
        wt = self.wt.copy()
        for trows, c in parts:
            wt[trows] = c
        return self.obj(wt)

    def grow(self, f: np.ndarray, rows: np.ndarray, trows: np.ndarray, cur: int, depth: int) -> Node:
        rejections = 0
        max_reject = 3 * self.p
        while True:
            j = self.choose(f, depth)
            if rejections >= max_reject:
                j = self.p
            if j == self.p:
                return self._leaf(trows, cur)
            vals = self.x[rows, j]
            thr = _split_point(vals, self.cfg.split_rule)
            if thr is not None:
                go_left = vals <= thr
                lt = self.trial_pos[rows[go_left]]
                rt = self.trial_pos[rows[~go_left]]
                lt = lt[lt >= 0]
                rt = rt[rt >= 0]
                best, best_lab = math.inf, None
                for lab in ((0, 0), (0, 1), (1, 0), (1, 1)):
                    if lab == (cur, cur):
                        loss = self.loss
                    else:
                        loss = self._loss_with(((lt, lab[0]), (rt, lab[1])))
                    if best_lab is None or loss < best:
                        best, best_lab = loss, lab
                parent = self.loss
                accepted = best <= parent and best < math.inf
                if self.trace is not None:
                    self.trace.append((best, parent, accepted))
                if accepted:
                    cl, cr = best_lab
                    self.wt[lt] = cl
                    self.wt[rt] = cr
                    self.loss = best
                    left = self.grow(f, rows[go_left], lt, cl, depth + 1)
                    right = self.grow(f, rows[~go_left], rt, cr, depth + 1)
                    return Split(j, thr, left, right)
            f = f.copy()
            f[j] *= self.cfg.rho
            f /= f.sum()
            rejections += 1

    def _leaf(self, trows: np.ndarray, cur: int) -> Leaf:
        losses = [self.loss if c == cur else self._loss_with(((trows, c),)) for c in (0, 1)]
        c_exploit = 0 if losses[0] <= losses[1] else 1
        c_explore = int(self.rng.random() < 0.5)
        explore = self.rng.random() < self.cfg.eps_explore
        c = c_explore if explore else c_exploit
        self.wt[trows] = c
        self.loss = losses[c]
        return Leaf(c)


def _trial_positions(d: Dataset) -> np.ndarray:
    pos = np.full(d.n, -1, dtype=np.int64)
    trial = np.flatnonzero(d.trial)
    pos[trial] = np.arange(trial.size)
    return pos


def tree_seed(seed: int, index: int) -> int:
    """Per-tree seed derived from (master seed, tree index); fits in 53 bits."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0] >> np.uint64(11))


def _sample(x, objective, trial_pos, f: FeatureProbs, cfg: RootConfig, seed: int, trace=None) -> WeightTree:
    rng = np.random.default_rng(seed)
    s = _Sampler(x, objective, trial_pos, f, cfg, rng, trace)
    root = s.grow(f.probs.copy(), np.arange(x.shape[0]), np.arange(objective.n1), 1, 0)
    pred = predict_node(root, x)
    return WeightTree(root, objective(pred[objective.trial_rows].astype(float)), seed)


def sample_tree(
    d: Dataset,
    m: NuisanceModels,
    f: FeatureProbs,
    eps_explore: float = 0.2,
    max_depth: int = 6,
    seed: int = 0,
    *,
    config: RootConfig | None = None,
    trace: list | None = None,
) -> WeightTree:
    """Grow one randomized tree from w = 1 everywhere.

    ``trace``, if given, receives ``(new_loss, parent_loss, accepted)`` for
    every attempted split.
    """
    cfg = config or RootConfig(eps_explore=eps_explore, max_depth=max_depth, M=1, m_keep=1)
    objective = RootObjective(d, m, cfg.n_min)
    return _sample(d.x, objective, _trial_positions(d), f, cfg, seed, trace)


@dataclass(frozen=True)
class RashomonSet:
    trees: tuple[WeightTree, ...]
    m: int
    M: int
    epsilon_explore: float

    def __len__(self) -> int:
        return len(self.trees)

    @property
    def best(self) -> WeightTree:
        return self.trees[0]

    def predict(self, x) -> np.ndarray:
        return ensemble_predict(self, x)

    def __call__(self, x) -> np.ndarray:
        return self.predict(x)

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "M": self.M,
            "epsilon_explore": self.epsilon_explore,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RashomonSet":
        return cls(tuple(WeightTree.from_dict(t) for t in d["trees"]), int(d["m"]), int(d["M"]), float(d["epsilon_explore"]))


_CTX: dict = {}


def _init_worker(x, objective, trial_pos, f, cfg):
    _CTX.update(x=x, objective=objective, trial_pos=trial_pos, f=f, cfg=cfg)


def _sample_index(i: int) -> WeightTree:
    c = _CTX
    return _sample(c["x"], c["objective"], c["trial_pos"], c["f"], c["cfg"], tree_seed(c["cfg"].seed, i))


def sample_trees(d: Dataset, m: NuisanceModels, config: RootConfig, n_jobs: int | None = 1, f: FeatureProbs | None = None) -> list[WeightTree]:
    if f is None:
        f = init_feature_probs(d, m, config.leaf_prob, config.smoothing)
    objective = RootObjective(d, m, config.n_min)
    return map_ordered(
        _sample_index,
        list(range(config.M)),
        n_jobs,
        initializer=_init_worker,
        initargs=(d.x, objective, _trial_positions(d), f, config),
    )


def select_rashomon(trees: list[WeightTree], m_keep: int, eps_explore: float) -> RashomonSet:
    """Drop structural twins (first sample wins), then keep the ``m_keep`` best."""
    seen = set()
    unique = []
    for i, t in enumerate(trees):
        key = t.structure_key()
        if key in seen:
            continue
        seen.add(key)
        unique.append((t.objective, i, t))
    unique.sort(key=lambda r: (r[0], r[1]))
    kept = tuple(t for _, _, t in unique[:m_keep])
    return RashomonSet(kept, m_keep, len(trees), eps_explore)


def build_rashomon(d: Dataset, m: NuisanceModels, config: RootConfig | None = None, n_jobs: int | None = 1, **overrides) -> RashomonSet:
    """Sample ``config.M`` trees and return the best ``config.m_keep`` distinct ones."""
    config = config or RootConfig()
    if overrides:
        config = RootConfig(**{**config.to_dict(), **overrides})
    trees = sample_trees(d, m, config, n_jobs)
    return select_rashomon(trees, config.m_keep, config.eps_explore)


def ensemble_predict(rs: RashomonSet, x) -> np.ndarray | int:
    """Majority vote over the set; ties include the unit (label 1)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xx = np.atleast_2d(x)
    votes = np.zeros(xx.shape[0], dtype=np.int64)
    for t in rs.trees:
        votes += t.predict(xx)
    out = (2 * votes >= len(rs.trees)).astype(np.int8)
    return int(out[0]) if single else out


# -- characteristic tree: Gini CART on the ensemble's labels ----------------


def _gini_best_split(x: np.ndarray, y: np.ndarray):
    n = y.size
    base = n * _gini(y.sum(), n)
    best = (base - 1e-12, None, None)
    for j in range(x.shape[1]):
        order = np.argsort(x[:, j], kind="stable")
        xs = x[order, j]
        ys = y[order]
        valid = xs[:-1] < xs[1:]
        if not valid.any():
            continue
        k = np.arange(1, n)
        ones_left = np.cumsum(ys)[:-1]
        ones_right = ys.sum() - ones_left
        imp = k * _gini(ones_left, k) + (n - k) * _gini(ones_right, n - k)
        imp = np.where(valid, imp, np.inf)
        i = int(np.argmin(imp))
        if imp[i] < best[0]:
            a, b = xs[i], xs[i + 1]
            thr = 0.5 * (a + b)
            if not a <= thr < b:
                thr = a
            best = (imp[i], j, float(thr))
    return best[1], best[2]


def _gini(ones, total):
    p = ones / total
    return 2 * p * (1 - p)


def fit_gini_tree(x: np.ndarray, y: np.ndarray, max_depth: int) -> Node:
    """Greedy classification tree (Gini impurity, midpoint thresholds)."""
    y = np.asarray(y, dtype=np.int64)

    def grow(rows, depth):
        ys = y[rows]
        ones = int(ys.sum())
        label = 1 if 2 * ones >= ys.size else 0
        if depth >= max_depth or ones in (0, ys.size):
            return Leaf(label)
        j, thr = _gini_best_split(x[rows], ys)
        if j is None:
            return Leaf(label)
        go_left = x[rows, j] <= thr
        return Split(j, thr, grow(rows[go_left], depth + 1), grow(rows[~go_left], depth + 1))

    return grow(np.arange(y.size), 0)


def characteristic_tree(rs: RashomonSet, d: Dataset, max_depth: int = 3, m: NuisanceModels | None = None) -> WeightTree:
    """Single sparse tree mimicking the ensemble's labels on all rows."""
    labels = ensemble_predict(rs, d.x)
    root = fit_gini_tree(d.x, labels, max_depth)
    pred = predict_node(root, d.x)
    agreement = float((pred == labels).mean())
    objective = root_objective(d, m, pred) if m is not None else math.inf
    return WeightTree(root, objective, None, {"agreement": agreement})
