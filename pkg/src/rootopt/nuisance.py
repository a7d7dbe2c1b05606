"""Selection score, selection ratio and trial propensity models."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from rootopt.data import Dataset
from rootopt.errors import EmptyArm, NonFinite, SeparationError

DEFAULT_CLIP = (0.01, 0.99)


def expit(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def fit_logistic(x, y, ridge: float = 1e-4, max_iter: int = 100, tol: float = 1e-8) -> np.ndarray:
    """Ridge-penalized logistic regression of ``y`` on ``(1, x)`` by IRLS.

    Features are standardized internally and the intercept is left
    unpenalized, so the intercept score equation holds at the optimum.
    Returns ``[intercept, slopes...]`` on the original feature scale.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not np.isfinite(x).all():
        raise NonFinite("covariates contain non-finite values")
    n, p = x.shape
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    z = np.column_stack([np.ones(n), (x - mu) / sd])
    pen = np.full(p + 1, ridge)
    pen[0] = 0.0
    ybar = y.mean()
    beta = np.zeros(p + 1)
    beta[0] = np.log(ybar / (1 - ybar)) if 0 < ybar < 1 else 0.0
    for _ in range(max_iter):
        prob = expit(z @ beta)
        wts = prob * (1 - prob)
        grad = z.T @ (y - prob) - pen * beta
        hess = (z * wts[:, None]).T @ z + np.diag(pen)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        beta = beta + step
        if ridge == 0 and np.abs(beta[1:]).max(initial=0.0) > 30:
            raise SeparationError("logistic likelihood diverges (perfect separation); use ridge > 0")
        if np.abs(step).max() < tol:
            break
    else:
        if ridge == 0:
            raise SeparationError("IRLS did not converge without a ridge penalty")
    slopes = beta[1:] / sd
    return np.concatenate([[beta[0] - slopes @ mu], slopes])


@dataclass(frozen=True)
class Propensity:
    """Trial propensity: a known/empirical constant or fitted logistic coefficients."""

    mode: str  # "known" | "empirical" | "fitted"
    value: float | None = None
    coefs: np.ndarray | None = None

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.mode == "fitted":
            return expit(self.coefs[0] + x @ self.coefs[1:])
        return np.full(x.shape[0], float(self.value))

    def to_dict(self) -> dict:
        out = {"mode": self.mode}
        if self.mode == "fitted":
            out["coefs"] = [float(c) for c in self.coefs]
        else:
            out["value"] = float(self.value)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Propensity":
        if d["mode"] == "fitted":
            return cls("fitted", coefs=np.asarray(d["coefs"], dtype=float))
        return cls(d["mode"], value=float(d["value"]))


def trial_propensity(d: Dataset, mode: str = "empirical", value: float | None = None, **fit_kw) -> Propensity:
    trial = d.trial
    t = d.t[trial]
    if mode == "known":
        if value is None or not 0 < value < 1:
            raise ValueError("known propensity needs a constant in (0, 1)")
        return Propensity("known", value=float(value))
    if mode == "empirical":
        e = float(t.mean())
        if e <= 0 or e >= 1:
            raise EmptyArm("empirical propensity is 0 or 1: one trial arm is empty")
        return Propensity("empirical", value=e)
    if mode == "fitted":
        if t.min() == t.max():
            raise EmptyArm("cannot fit propensity with one trial arm empty")
        return Propensity("fitted", coefs=fit_logistic(d.x[trial], t, **fit_kw))
    raise ValueError(f"unknown propensity mode {mode!r}")


@dataclass(frozen=True, eq=False)
class NuisanceModels:
    """Fitted nuisances. ``selection_fn`` replaces the logistic model when oracle
    selection scores are supplied (not serialized)."""

    selection_coefs: np.ndarray | None
    pi_hat: float
    propensity: Propensity
    clip: tuple[float, float] = DEFAULT_CLIP
    selection_fn: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        lo, hi = self.clip
        if not 0 < lo < hi < 1:
            raise ValueError(f"clip bounds must satisfy 0 < lo < hi < 1, got {self.clip}")
        if not 0 < self.pi_hat < 1:
            raise ValueError(f"pi_hat must lie in (0, 1), got {self.pi_hat}")

    def raw_score(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.selection_fn is not None:
            return np.asarray(self.selection_fn(x), dtype=float)
        return expit(self.selection_coefs[0] + x @ self.selection_coefs[1:])

    def score(self, x) -> np.ndarray:
        return np.clip(self.raw_score(x), *self.clip)

    def ratio(self, x) -> np.ndarray:
        p = self.score(x)
        return p / (1 - p)

    def propensity_at(self, x) -> np.ndarray:
        return np.clip(self.propensity(x), *self.clip)

    @property
    def ell_marginal(self) -> float:
        return self.pi_hat / (1 - self.pi_hat)

    def to_dict(self) -> dict:
        if self.selection_fn is not None:
            raise ValueError("oracle selection functions cannot be serialized")
        return {
            "selection_coefs": [float(c) for c in self.selection_coefs],
            "pi_hat": float(self.pi_hat),
            "propensity": self.propensity.to_dict(),
            "clip": [float(c) for c in self.clip],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NuisanceModels":
        return cls(
            selection_coefs=np.asarray(d["selection_coefs"], dtype=float),
            pi_hat=float(d["pi_hat"]),
            propensity=Propensity.from_dict(d["propensity"]),
            clip=tuple(d["clip"]),
        )


def fit_selection_model(
    d: Dataset,
    ridge: float = 1e-4,
    max_iter: int = 100,
    tol: float = 1e-8,
    clip: tuple[float, float] = DEFAULT_CLIP,
    propensity: Propensity | None = None,
) -> NuisanceModels:
    """Logistic model of S on (1, X); pi_hat = n1/n; propensity defaults to empirical."""
    coefs = fit_logistic(d.x, d.s.astype(float), ridge=ridge, max_iter=max_iter, tol=tol)
    if propensity is None:
        propensity = trial_propensity(d, "empirical")
    return NuisanceModels(coefs, d.n1 / d.n, propensity, tuple(clip))


def fit_nuisance(d: Dataset, propensity: float | str | None = None, **kw) -> NuisanceModels:
    """Convenience wrapper: numeric ``propensity`` means a known constant."""
    if propensity is None:
        prop = trial_propensity(d, "empirical")
    elif isinstance(propensity, str):
        prop = trial_propensity(d, propensity)
    else:
        prop = trial_propensity(d, "known", float(propensity))
    return fit_selection_model(d, propensity=prop, **kw)


def selection_score(m: NuisanceModels, x) -> np.ndarray | float:
    out = m.score(x)
    return float(out[0]) if np.ndim(x) == 1 else out


def selection_ratio(m: NuisanceModels, x) -> np.ndarray | float:
    out = m.ratio(x)
    return float(out[0]) if np.ndim(x) == 1 else out
