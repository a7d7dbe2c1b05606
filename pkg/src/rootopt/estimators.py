"""IPW estimators of the target (and weighted target) average treatment effect.

Two variance expressions live here. ``wtate_ipw`` reports the contrast-centered
estimator of the asymptotic variance. ``root_objective`` is the per-arm-centered
finite-sample variance that the tree optimizer minimizes.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from rootopt.data import Dataset
from rootopt.errors import EmptyArm, TooFewKept
from rootopt.nuisance import NuisanceModels


@dataclass(frozen=True)
class Estimate:
    point: float
    variance: float
    std_err: float
    n_trial_kept: int
    n_target_kept: int
    effective_w: float
    pi_w: float

    def to_dict(self) -> dict:
        return asdict(self)

    def ci(self, z: float = 1.96) -> tuple[float, float]:
        return self.point - z * self.std_err, self.point + z * self.std_err


def default_n_min(n1: int) -> int:
    return min(n1, max(10, math.ceil(0.02 * n1)))


def as_weights(d: Dataset, w) -> np.ndarray:
    """Coerce ``w`` (None, scalar, per-row vector or callable on X) to 0/1 floats."""
    if w is None:
        return np.ones(d.n)
    if callable(w):
        w = w(d.x)
    w = np.asarray(w, dtype=float)
    if w.ndim == 0:
        w = np.full(d.n, float(w))
    if w.shape != (d.n,):
        raise ValueError(f"weights have shape {w.shape}, expected ({d.n},)")
    if not np.isin(w, (0.0, 1.0)).all():
        raise ValueError("weights must be binary")
    return w


def _contrast_terms(d: Dataset, m: NuisanceModels) -> tuple[np.ndarray, np.ndarray]:
    """Per-row ``S 1(T=t) Y / (ell(X) e_t(X))`` for t=1 and t=0 (no prefactor)."""
    trial = d.trial
    ell = m.ratio(d.x[trial])
    e = m.propensity_at(d.x[trial])
    t = d.t[trial]
    y = d.y[trial]
    a1 = np.zeros(d.n)
    a0 = np.zeros(d.n)
    a1[trial] = np.where(t == 1, y / (ell * e), 0.0)
    a0[trial] = np.where(t == 0, y / (ell * (1 - e)), 0.0)
    return a1, a0


def pseudo_outcomes(d: Dataset, m: NuisanceModels, prefactor: float | None = None):
    """IPW pseudo-outcomes for both arms over all rows (zero on target rows)."""
    if prefactor is None:
        prefactor = m.ell_marginal
    a1, a0 = _contrast_terms(d, m)
    return prefactor * a1, prefactor * a0


def ipw_pseudo_outcome(d: Dataset, m: NuisanceModels, i: int, t: int, prefactor: float | None = None) -> float:
    if prefactor is None:
        prefactor = m.ell_marginal
    if d.s[i] != 1 or d.t[i] != t:
        return 0.0
    xi = d.x[i : i + 1]
    e = float(m.propensity_at(xi)[0])
    e_t = e if t == 1 else 1 - e
    return float(prefactor * d.y[i] / (float(m.ratio(xi)[0]) * e_t))


def _check_arms(d: Dataset, w: np.ndarray) -> None:
    trial = d.trial
    kept_t = (w[trial] * (d.t[trial] == 1)).sum()
    kept_c = (w[trial] * (d.t[trial] == 0)).sum()
    if kept_t == 0 or kept_c == 0:
        raise EmptyArm("weighting removes every trial unit of one arm")


def tate_ipw(d: Dataset, m: NuisanceModels) -> Estimate:
    _check_arms(d, np.ones(d.n))
    y1, y0 = pseudo_outcomes(d, m)
    n1 = d.n1
    contrast = (y1 - y0)[d.trial]
    point = contrast.sum() / n1
    var = variance_tate(d, m, point, contrast)
    return Estimate(point, var, math.sqrt(var / n1), n1, d.n0, 1.0, m.pi_hat)


def variance_tate(d: Dataset, m: NuisanceModels, point: float, contrast: np.ndarray | None = None) -> float:
    if contrast is None:
        y1, y0 = pseudo_outcomes(d, m)
        contrast = (y1 - y0)[d.trial]
    return float(((contrast - point) ** 2).sum() / d.n1)


def wtate_ipw(d: Dataset, m: NuisanceModels, w=None, n_min: int | None = None) -> Estimate:
    """IPW estimate of the weighted TATE for the refined population ``w``.

    The kept-trial share is ``pi_w = pi_hat * sum(S w) / n1``, which equals
    ``(1/n) sum(w S)`` when ``pi_hat = n1/n``.
    """
    w = as_weights(d, w)
    _check_arms(d, w)
    n1 = d.n1
    trial = d.trial
    kept = float((w * d.s).sum())
    if n_min is None:
        n_min = default_n_min(n1)
    if kept < n_min:
        raise TooFewKept(f"{kept:.0f} trial units kept, need at least {n_min}")
    pi_w = m.pi_hat * kept / n1
    y1, y0 = pseudo_outcomes(d, m, pi_w / (1 - pi_w))
    wt = w[trial]
    contrast = (y1 - y0)[trial]
    point = float((wt * contrast).sum() / kept)
    var = float(n1 / kept**2 * (wt**2 * (contrast - point) ** 2).sum())
    target = ~trial
    return Estimate(
        point=point,
        variance=var,
        std_err=math.sqrt(var / n1),
        n_trial_kept=int(kept),
        n_target_kept=int(w[target].sum()),
        effective_w=float(w[target].mean()),
        pi_w=float(pi_w),
    )


class RootObjective:
    """Per-arm-centered finite-sample variance of the weighted IPW estimator.

    Callable on the trial-row restriction of ``w``; infeasible weightings (an
    empty arm, or fewer than ``n_min`` kept trial units) map to ``inf``.
    """

    def __init__(self, d: Dataset, m: NuisanceModels, n_min: int | None = None):
        trial = d.trial
        y1, y0 = pseudo_outcomes(d, m)
        self.y1 = np.ascontiguousarray(y1[trial])
        self.y0 = np.ascontiguousarray(y0[trial])
        self.treated = d.t[trial] == 1
        self.n1 = d.n1
        self.n_min = default_n_min(self.n1) if n_min is None else n_min
        self.trial_rows = np.flatnonzero(trial)

    def __call__(self, wt: np.ndarray) -> float:
        k = wt.sum()
        if k < self.n_min:
            return math.inf
        kt = wt[self.treated].sum()
        if kt == 0 or kt == k:
            return math.inf
        total = 0.0
        for yt in (self.y1, self.y0):
            wy = wt * yt
            dev = yt - wy.sum() / k
            total += (wt * wt * dev * dev).sum()
        return float(self.n1 / (k * k) * total)

    def of_rows(self, w: np.ndarray) -> float:
        return self(np.asarray(w, dtype=float)[self.trial_rows])


def root_objective(d: Dataset, m: NuisanceModels, w=None, n_min: int | None = None) -> float:
    return RootObjective(d, m, n_min).of_rows(as_weights(d, w))
