"""Comparison weighting strategies: odds thresholds, per-unit indicators,
linear halfspaces and a single randomized tree."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from rootopt.data import Dataset
from rootopt.estimators import RootObjective, pseudo_outcomes, root_objective
from rootopt.nuisance import NuisanceModels
from rootopt.root import RootConfig, build_rashomon
from rootopt.tree import WeightTree


@dataclass(frozen=True, eq=False)
class WeightRule:
    """A binary inclusion rule ``w(x)`` of one of four kinds.

    ``params`` holds what ``predict`` needs: ``lsp``/``ell_marginal`` plus the
    selection model for thresholds; trial covariates and labels for
    indicators; ``beta`` with a centering for linear rules; the tree for trees.
    """

    kind: str
    params: dict
    objective: float = math.nan
    nuisance: NuisanceModels | None = field(default=None, repr=False)

    def predict(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        p = self.params
        if self.kind == "threshold":
            odds = self.nuisance.ratio(x) / p["ell_marginal"]
            return (odds >= p["lsp"]).astype(np.int8)
        if self.kind == "indicator":
            return _nearest_labels(x, p["trial_x"], p["labels"], p["center"], p["scale"])
        if self.kind == "linear":
            z = (x - p["center"]) / p["scale"]
            return (p["beta"][0] + z @ p["beta"][1:] >= 0).astype(np.int8)
        if self.kind == "tree":
            return p["tree"].predict(x)
        raise ValueError(f"unknown rule kind {self.kind!r}")

    def __call__(self, x) -> np.ndarray:
        return self.predict(x)

    def to_dict(self) -> dict:
        p = self.params
        out: dict = {"kind": self.kind, "objective": None if not math.isfinite(self.objective) else float(self.objective)}
        if self.kind == "threshold":
            out.update(lsp=_num_out(p["lsp"]), ell_marginal=float(p["ell_marginal"]), nuisance=self.nuisance.to_dict())
        elif self.kind == "indicator":
            out.update(
                trial_x=np.asarray(p["trial_x"]).tolist(),
                labels=[int(v) for v in p["labels"]],
                center=np.asarray(p["center"]).tolist(),
                scale=np.asarray(p["scale"]).tolist(),
            )
        elif self.kind == "linear":
            out.update(beta=np.asarray(p["beta"]).tolist(), center=np.asarray(p["center"]).tolist(), scale=np.asarray(p["scale"]).tolist())
        else:
            out["tree"] = p["tree"].to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "WeightRule":
        kind = d["kind"]
        obj = math.inf if d.get("objective") is None else float(d["objective"])
        nuis = None
        if kind == "threshold":
            nuis = NuisanceModels.from_dict(d["nuisance"])
            params = {"lsp": _num_in(d["lsp"]), "ell_marginal": float(d["ell_marginal"])}
        elif kind == "indicator":
            params = {k: np.asarray(d[k], dtype=float) for k in ("trial_x", "center", "scale")}
            params["labels"] = np.asarray(d["labels"], dtype=np.int8)
        elif kind == "linear":
            params = {k: np.asarray(d[k], dtype=float) for k in ("beta", "center", "scale")}
        elif kind == "tree":
            params = {"tree": WeightTree.from_dict(d["tree"])}
        else:
            raise ValueError(f"unknown rule kind {kind!r}")
        return cls(kind, params, obj, nuis)


def _num_out(v: float):
    return "inf" if v == math.inf else float(v)


def _num_in(v) -> float:
    return math.inf if v == "inf" else float(v)


def _with_objective(rule: WeightRule, d: Dataset, m: NuisanceModels, n_min=None) -> WeightRule:
    return replace(rule, objective=root_objective(d, m, rule.predict(d.x), n_min))


def _standardization(d: Dataset):
    center = d.x.mean(axis=0)
    scale = d.x.std(axis=0)
    scale[scale == 0] = 1.0
    return center, scale


# -- thresholds on the normalized selection odds ---------------------------


def normalized_odds(m: NuisanceModels, x) -> np.ndarray:
    return m.ratio(x) / m.ell_marginal


def threshold_weights(m: NuisanceModels, lsp: float, d: Dataset | None = None, n_min=None) -> WeightRule:
    """``w(x) = 1(ell(x) / ell_marginal >= lsp)``; the objective is filled in when ``d`` is given."""
    rule = WeightRule("threshold", {"lsp": float(lsp), "ell_marginal": m.ell_marginal}, math.nan, m)
    return _with_objective(rule, d, m, n_min) if d is not None else rule


def default_threshold_grid(d: Dataset, m: NuisanceModels, n_quantiles: int = 50) -> list[float]:
    odds = normalized_odds(m, d.x[~d.trial])
    levels = (np.arange(n_quantiles) + 0.5) / n_quantiles
    return [0.0] + sorted(set(float(q) for q in np.quantile(odds, levels)))


def optimize_threshold(d: Dataset, m: NuisanceModels, grid=None, n_min=None) -> WeightRule:
    """Grid threshold minimizing the objective; ties go to the smaller threshold."""
    if grid is None:
        grid = default_threshold_grid(d, m)
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise ValueError("threshold grid is empty")
    obj = RootObjective(d, m, n_min)
    odds_trial = normalized_odds(m, d.x[d.trial])
    best, best_lsp = math.inf, grid[0]
    for g in grid:
        loss = obj((odds_trial >= g).astype(float))
        if loss < best:
            best, best_lsp = loss, g
    return threshold_weights(m, best_lsp, d, n_min)


# -- per-unit indicators ---------------------------------------------------


def _nearest_labels(x, trial_x, labels, center, scale, chunk: int = 2048) -> np.ndarray:
    ref = (np.asarray(trial_x) - center) / scale
    ref_sq = (ref**2).sum(axis=1)
    out = np.empty(x.shape[0], dtype=np.int8)
    for a in range(0, x.shape[0], chunk):
        q = (x[a : a + chunk] - center) / scale
        dist = ref_sq[None, :] - 2 * q @ ref.T
        out[a : a + chunk] = np.asarray(labels)[np.argmin(dist, axis=1)]
    return out


def indicator_weights(d: Dataset, m: NuisanceModels, max_sweeps: int = 20, n_min=None, history: list | None = None) -> WeightRule:
    """Coordinate descent over trial labels, starting from all ones.

    Rows are visited in index order and a label flips only on a strict
    decrease of the objective. Target rows copy their nearest trial row.
    ``history`` receives the objective after each sweep.
    """
    obj = RootObjective(d, m, n_min)
    wt = np.ones(d.n1)
    loss = obj(wt)
    for _ in range(max_sweeps):
        flips = 0
        for i in range(d.n1):
            wt[i] = 1 - wt[i]
            cand = obj(wt)
            if cand < loss:
                loss = cand
                flips += 1
            else:
                wt[i] = 1 - wt[i]
        if history is not None:
            history.append(loss)
        if flips == 0:
            break
    trial_rows = np.flatnonzero(d.trial)
    center, scale = _standardization(d)
    labels = wt.astype(np.int8)
    params = {"trial_x": d.x[trial_rows], "labels": labels, "center": center, "scale": scale}
    rule = WeightRule("indicator", params)
    pred = rule.predict(d.x)
    # trial rows are their own nearest neighbours unless duplicated covariates disagree
    pred[trial_rows] = labels
    return replace(rule, objective=obj(pred[trial_rows].astype(float)))


# -- linear halfspaces -----------------------------------------------------


class _LinearScan:
    """Exact 1-d search over one coefficient of ``1(b0 + b.z >= 0)`` on trial rows.

    The objective depends on ``w`` only through kept counts and per-arm sums
    of pseudo-outcomes and their squares, so a sweep over sorted breakpoints
    evaluates every distinct labeling along the coordinate at once.
    """

    def __init__(self, obj: RootObjective, z: np.ndarray):
        self.obj = obj
        self.design = np.column_stack([np.ones(z.shape[0]), z])
        treated = obj.treated.astype(float)
        # per-row contributions: K, K_treated, sum y1, sum y1^2, sum y0, sum y0^2
        self.stats = np.column_stack([np.ones(z.shape[0]), treated, obj.y1, obj.y1**2, obj.y0, obj.y0**2])

    def loss_from_stats(self, st: np.ndarray) -> np.ndarray:
        k, kt = st[:, 0], st[:, 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            total = (st[:, 3] - st[:, 2] ** 2 / k) + (st[:, 5] - st[:, 4] ** 2 / k)
            loss = self.obj.n1 / (k * k) * total
        bad = (k < self.obj.n_min) | (kt == 0) | (kt == k)
        return np.where(bad, np.inf, loss)

    def scan(self, beta: np.ndarray, j: int) -> tuple[float, float]:
        """Best value for ``beta[j]`` (others fixed) and its (sufficient-statistic) loss."""
        col = self.design[:, j]
        rest = self.design @ beta - col * beta[j]
        moving = col != 0
        fixed_in = ~moving & (rest >= 0)
        base = self.stats[fixed_in].sum(axis=0)
        bp = -rest[moving] / col[moving]
        pos = col[moving] > 0
        st_m = self.stats[moving]
        order = np.argsort(bp, kind="stable")
        bp_s = bp[order]
        # below every breakpoint only negative-slope rows are kept
        start = base + st_m[~pos].sum(axis=0)
        delta = np.where(pos[order, None], st_m[order], -st_m[order])
        cum = start + np.vstack([np.zeros(delta.shape[1]), np.cumsum(delta, axis=0)])
        if bp_s.size == 0:
            return float(beta[j]), float(self.loss_from_stats(start[None, :])[0])
        # candidate values: one strictly inside each gap between distinct breakpoints
        lows = np.r_[-np.inf, bp_s]
        highs = np.r_[bp_s, np.inf]
        keep = np.r_[True, np.r_[bp_s[1:] > bp_s[:-1], True]]
        lows, highs, cum = lows[keep], highs[keep], cum[keep]
        losses = self.loss_from_stats(cum)
        i = int(np.argmin(losses))
        lo, hi = lows[i], highs[i]
        if math.isinf(lo) and math.isinf(hi):
            val = 0.0
        elif math.isinf(lo):
            val = hi - max(1.0, abs(hi))
        elif math.isinf(hi):
            val = lo + max(1.0, abs(lo))
        else:
            val = 0.5 * (lo + hi)
        return float(val), float(losses[i])


def linear_weights(
    d: Dataset,
    m: NuisanceModels,
    restarts: int = 10,
    iters: int = 200,
    seed: int = 0,
    n_min=None,
) -> WeightRule:
    """Halfspace rule ``1(b0 + b.z >= 0)`` on standardized covariates ``z``.

    Random-restart coordinate search: each step re-optimizes one coefficient
    exactly by scanning its breakpoints, and a move is kept only if the
    objective, recomputed directly, strictly decreases. Restart 0 starts from
    ``w = 1`` everywhere; ``restarts=0`` returns that starting rule unsearched.
    """
    obj = RootObjective(d, m, n_min)
    center, scale = _standardization(d)
    z_all = (d.x - center) / scale
    z = z_all[obj.trial_rows]
    scanner = _LinearScan(obj, z)
    design = scanner.design
    p1 = d.p + 1

    def loss_of(beta):
        return obj((design @ beta >= 0).astype(float))

    start = np.zeros(p1)
    start[0] = 1.0
    best_beta, best_loss = start, loss_of(start)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 17]))
    for r in range(restarts):
        if r == 0:
            beta = start.copy()
        else:
            beta = np.empty(p1)
            beta[1:] = rng.normal(size=d.p)
            beta[1:] /= np.linalg.norm(beta[1:])
            proj = z @ beta[1:]
            beta[0] = -float(np.quantile(proj, rng.uniform(0.0, 0.5)))
        loss = loss_of(beta)
        stale = 0
        for it in range(iters):
            j = it % p1
            val, _ = scanner.scan(beta, j)
            cand = beta.copy()
            cand[j] = val
            cand_loss = loss_of(cand)
            if cand_loss < loss:
                norm = np.linalg.norm(cand)
                beta, loss = cand / norm, loss_of(cand / norm)
                stale = 0
            else:
                stale += 1
                if stale >= p1:
                    break
        if loss < best_loss:
            best_beta, best_loss = beta, loss
    params = {"beta": best_beta, "center": center, "scale": scale}
    rule = WeightRule("linear", params)
    return _with_objective(rule, d, m, n_min)


# -- single randomized tree ------------------------------------------------


def one_tree(d: Dataset, m: NuisanceModels, config: RootConfig | None = None, n_jobs: int | None = 1) -> WeightRule:
    """Best tree of a Rashomon search with ``m_keep = 1``."""
    config = config or RootConfig()
    rs = build_rashomon(d, m, config, n_jobs, m_keep=1)
    tree = rs.best
    return WeightRule("tree", {"tree": tree}, tree.objective)
