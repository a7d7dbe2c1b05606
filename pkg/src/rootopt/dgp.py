"""Synthetic data generators with their ground-truth components.

Each generator knows its true selection score ``pi_x``, propensity ``e_x``,
conditional means ``mu`` and variances ``sigma2``. The Monte-Carlo oracles
below compose these into population quantities (target effect, the two
identification functionals, the asymptotic variance of the IPW estimator).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from rootopt.data import Dataset
from rootopt.errors import UnknownDgp
from rootopt.nuisance import DEFAULT_CLIP, NuisanceModels, Propensity, expit

KINDS = ("community", "box", "highdim")
CHUNK = 100_000


@dataclass(frozen=True)
class DgpSpec:
    kind: str
    n: int
    seed: int
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n": self.n, "seed": self.seed, "params": self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "DgpSpec":
        return cls(d["kind"], int(d["n"]), int(d["seed"]), dict(d.get("params", {})))


@dataclass(frozen=True)
class MCValue:
    """Monte-Carlo estimate with its standard error."""

    value: float
    se: float

    def __float__(self) -> float:
        return self.value

    def to_dict(self) -> dict:
        # a single batch has no SE; JSON gets null
        return {"value": self.value, "se": self.se if math.isfinite(self.se) else None}


class Oracle:
    """True components of a DGP; subclasses implement the population model."""

    p: int

    def sample_x(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def pi_x(self, x) -> np.ndarray:
        raise NotImplementedError

    def e_x(self, x) -> np.ndarray:
        return np.full(np.atleast_2d(x).shape[0], 0.5)

    def mu(self, x, t: int) -> np.ndarray:
        raise NotImplementedError

    def sigma2(self, x, t: int) -> np.ndarray:
        raise NotImplementedError

    def tau_x(self, x) -> np.ndarray:
        return self.mu(x, 1) - self.mu(x, 0)

    def outcomes(self, x, rng) -> tuple[np.ndarray, np.ndarray]:
        """Potential outcomes (Y(0), Y(1)) for every row."""
        raise NotImplementedError


class Community(Oracle):
    p = 2

    def __init__(self, x1_spread: str = "variance", uniform_selection: float | None = None):
        if x1_spread not in ("variance", "sd"):
            raise ValueError("x1_spread must be 'variance' or 'sd'")
        self.x1_sd = math.sqrt(3.0) if x1_spread == "variance" else 3.0
        self.uniform_selection = uniform_selection

    def sample_x(self, n, rng, return_groups: bool = False):
        in_a = rng.random(n) < 0.75
        x0 = rng.normal(np.where(in_a, 0.0, 4.0), 1.0)
        x1 = rng.normal(x0, self.x1_sd)
        x = np.column_stack([x0, x1])
        return (x, in_a) if return_groups else x

    def pi_x(self, x):
        x = np.atleast_2d(x)
        if self.uniform_selection is not None:
            return np.full(x.shape[0], float(self.uniform_selection))
        r = np.hypot(x[:, 0], x[:, 1])
        return 0.5 * (r < 3) + 0.25 * ((r >= 3) & (r < 5))

    def mu(self, x, t):
        x = np.atleast_2d(x)
        return (x[:, 0] ** 2 + x[:, 1] ** 2) if t == 1 else np.zeros(x.shape[0])

    def sigma2(self, x, t):
        return np.full(np.atleast_2d(x).shape[0], 1.0 if t == 1 else 0.0)

    def outcomes(self, x, rng):
        eps = rng.normal(size=x.shape[0])
        return np.zeros(x.shape[0]), self.mu(x, 1) + eps


def friedman_mean(x) -> np.ndarray:
    x = np.atleast_2d(x)
    return (
        10 * np.sin(np.pi * x[:, 0] * x[:, 1])
        + 20 * (x[:, 2] - 0.5) ** 2
        + 10 * x[:, 3]
        + 5 * x[:, 4]
    )


class Box(Oracle):
    def __init__(self, p: int = 100):
        self.p = p

    def sample_x(self, n, rng):
        return rng.random((n, self.p))

    def in_box(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return (x[:, 0] > 0.5) & (x[:, 0] < 1) & (x[:, 1] > 0.5) & (x[:, 1] < 1)

    def pi_x(self, x):
        return expit(0.25 - 2.0 * self.in_box(x))

    def mu(self, x, t):
        m = friedman_mean(x)
        return m + np.log(m + 1) if t == 1 else m

    def sigma2(self, x, t):
        return np.ones(np.atleast_2d(x).shape[0])

    def outcomes(self, x, rng):
        m = friedman_mean(x)
        y0 = m + rng.normal(size=x.shape[0])
        return y0, y0 + np.log(m + 1)


class HighDim(Oracle):
    def __init__(self, alpha0, beta0, beta1, scale: float):
        self.alpha0 = np.asarray(alpha0, dtype=float)
        self.beta0 = np.asarray(beta0, dtype=float)
        self.beta1 = np.asarray(beta1, dtype=float)
        self.scale = float(scale)
        self.p = self.alpha0.size

    def sample_x(self, n, rng):
        return rng.normal(size=(n, self.p))

    def pi_x(self, x):
        return expit(self.scale * (np.atleast_2d(x) @ self.alpha0))

    def mu(self, x, t):
        x = np.atleast_2d(x)
        base = x @ self.beta0
        return base + x @ self.beta1 if t == 1 else base

    def sigma2(self, x, t):
        return np.full(np.atleast_2d(x).shape[0], 2.0 if t == 1 else 1.0)

    def outcomes(self, x, rng):
        y0 = x @ self.beta0 + rng.normal(size=x.shape[0])
        return y0, y0 + x @ self.beta1 + rng.normal(size=x.shape[0])


def make_spec(kind: str, n: int, seed: int, **options) -> DgpSpec:
    """Resolve a spec; high-dimensional coefficients are drawn here, once per seed."""
    if kind not in KINDS:
        raise UnknownDgp(f"unknown DGP {kind!r}; available: {', '.join(KINDS)} (the clone DGP needs external trial data and is out of scope)")
    if n < 10:
        raise ValueError("n must be at least 10")
    params: dict = {}
    if kind == "community":
        params["x1_spread"] = options.pop("x1_spread", "variance")
        params["uniform_selection"] = options.pop("uniform_selection", None)
    elif kind == "box":
        params["p"] = int(options.pop("p", 100))
    else:
        p = int(options.pop("p", 100))
        scale = options.pop("scale", None)
        orthogonal = bool(options.pop("beta1_orthogonal", False))
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])
        alpha0, beta0, beta1 = rng.normal(size=(3, p))
        if orthogonal:
            beta1 = beta1 - (alpha0 @ beta1) / (alpha0 @ alpha0) * alpha0
        params.update(
            p=p,
            scale=1 / math.sqrt(p) if scale is None else float(scale),
            beta1_orthogonal=orthogonal,
            alpha0=alpha0.tolist(),
            beta0=beta0.tolist(),
            beta1=beta1.tolist(),
        )
    if options:
        raise ValueError(f"unknown options for {kind}: {sorted(options)}")
    return DgpSpec(kind, int(n), int(seed), params)


def oracle_for(spec: DgpSpec | Oracle) -> Oracle:
    if isinstance(spec, Oracle):
        return spec
    p = spec.params
    if spec.kind == "community":
        return Community(p.get("x1_spread", "variance"), p.get("uniform_selection"))
    if spec.kind == "box":
        return Box(p.get("p", 100))
    if spec.kind == "highdim":
        return HighDim(p["alpha0"], p["beta0"], p["beta1"], p["scale"])
    raise UnknownDgp(f"unknown DGP {spec.kind!r}")


def _data_rng(spec: DgpSpec) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(2)[1])


def generate(spec: DgpSpec) -> tuple[Dataset, Oracle]:
    """Draw the dataset for ``spec``; the same spec always yields the same data."""
    oracle = oracle_for(spec)
    rng = _data_rng(spec)
    n = spec.n
    x = oracle.sample_x(n, rng)
    s = (rng.random(n) < oracle.pi_x(x)).astype(np.int8)
    t = (rng.random(n) < oracle.e_x(x)).astype(float)
    y0, y1 = oracle.outcomes(x, rng)
    y = np.where(t == 1, y1, y0)
    target = s == 0
    t[target] = np.nan
    y[target] = np.nan
    names = [f"X{j}" for j in range(x.shape[1])]
    return Dataset.from_arrays(x, s, t, y, names, strict=False), oracle


def gen_community(n: int, seed: int, **options):
    return generate(make_spec("community", n, seed, **options))


def gen_box(n: int, seed: int, **options):
    return generate(make_spec("box", n, seed, **options))


def gen_highdim(n: int, seed: int, scale: float | None = None, **options):
    return generate(make_spec("highdim", n, seed, scale=scale, **options))


# -- Monte-Carlo oracles ---------------------------------------------------


class _Ratio:
    """Running sums for a ratio-of-means estimate and its delta-method SE."""

    def __init__(self):
        self.n = 0
        self.a = self.b = self.aa = self.bb = self.ab = 0.0

    def add(self, num: np.ndarray, den: np.ndarray):
        self.n += num.size
        self.a += num.sum()
        self.b += den.sum()
        self.aa += (num * num).sum()
        self.bb += (den * den).sum()
        self.ab += (num * den).sum()

    def result(self) -> MCValue:
        n = self.n
        ma, mb = self.a / n, self.b / n
        r = ma / mb
        va = self.aa / n - ma * ma
        vb = self.bb / n - mb * mb
        cab = self.ab / n - ma * mb
        var = (va - 2 * r * cab + r * r * vb) / (mb * mb * n)
        return MCValue(float(r), float(math.sqrt(max(var, 0.0))))


def _chunks(n_mc: int):
    left = int(n_mc)
    while left > 0:
        k = min(CHUNK, left)
        yield k
        left -= k


def _mc_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream)]))


def oracle_tate(spec: DgpSpec | Oracle, n_mc: int = 10**6, seed: int = 0) -> MCValue:
    """Mean of the true conditional effect over draws accepted into the target (S=0)."""
    oracle = oracle_for(spec)
    rng = _mc_rng(seed, 0)
    acc = _Ratio()
    for k in _chunks(n_mc):
        x = oracle.sample_x(k, rng)
        target = (rng.random(k) >= oracle.pi_x(x)).astype(float)
        acc.add(target * oracle.tau_x(x), target)
    return acc.result()


def oracle_thetas(spec: DgpSpec | Oracle, n_mc: int = 10**6, seed: int = 0) -> tuple[MCValue, MCValue]:
    """Both identification functionals, from independent Monte-Carlo draws.

    The first averages the conditional effect over the target distribution.
    The second reweights the trial distribution by the inverse selection ratio.
    With S drawn from the population, the second reduces to
    ``E[S tau(X) / ell(X)] / E[1 - S]``.
    """
    theta0 = oracle_tate(spec, n_mc, seed)
    oracle = oracle_for(spec)
    rng = _mc_rng(seed, 1)
    acc = _Ratio()
    for k in _chunks(n_mc):
        x = oracle.sample_x(k, rng)
        pi = oracle.pi_x(x)
        s = rng.random(k) < pi
        num = np.zeros(k)
        ps = pi[s]
        num[s] = oracle.tau_x(x[s]) * (1 - ps) / ps
        acc.add(num, (~s).astype(float))
    return theta0, acc.result()


def selection_ratio_clipped(pi, clip=DEFAULT_CLIP) -> np.ndarray:
    pc = np.clip(pi, *clip)
    return pc / (1 - pc)


def variance_integrand(oracle: Oracle, x, pi_marginal: float, tau0: float, clip=DEFAULT_CLIP):
    """Pointwise terms inside the displayed asymptotic-variance expectation:
    treated-arm noise, control-arm noise and effect heterogeneity."""
    pi = oracle.pi_x(x)
    ell = selection_ratio_clipped(pi, clip)
    e = oracle.e_x(x)
    noise1 = oracle.sigma2(x, 1) / (ell**2 * e)
    noise0 = oracle.sigma2(x, 0) / (ell**2 * (1 - e))
    with np.errstate(divide="ignore", invalid="ignore"):
        hetero = np.where(pi > 0, (1 - pi_marginal) ** 2 / np.clip(pi, *clip) * (oracle.tau_x(x) - tau0) ** 2, 0.0)
    return noise1, noise0, hetero


def oracle_variance(spec: DgpSpec | Oracle, n_mc: int = 10**6, seed: int = 0, form: str = "exact", clip=DEFAULT_CLIP) -> MCValue:
    """Asymptotic variance of ``sqrt(n1) * (IPW estimate)`` under true nuisances.

    ``form="exact"`` is the variance of one trial unit's IPW contrast,
    ``k^2 E_1[A(X)/ell(X)^2] - theta1^2``, where ``k = pi/(1-pi)`` and
    ``A = (sigma2_1 + mu_1^2)/e + (sigma2_0 + mu_0^2)/(1-e)``.
    ``form="display"`` evaluates the closed-form display term by term. It
    omits the squared-mean terms and is scaled for sqrt(n) rather than
    sqrt(n1), so it only agrees with ``exact`` in special cases.

    Expectations over the trial distribution are pi(X)-weighted population
    means. The selection ratio uses the clipped score, as the estimator does.
    The SE comes from batch means over 100k-draw chunks.
    """
    if form not in ("exact", "display"):
        raise ValueError("form must be 'exact' or 'display'")
    oracle = oracle_for(spec)
    if form == "display":
        pbar_fixed = pi_marginal(spec, n_mc, seed).value
        tau0 = oracle_tate(spec, n_mc, seed).value
    rng = _mc_rng(seed, 2)
    chunks = []
    for k in _chunks(n_mc):
        x = oracle.sample_x(k, rng)
        pi = oracle.pi_x(x)
        if form == "exact":
            ell = selection_ratio_clipped(pi, clip)
            e = oracle.e_x(x)
            second = (oracle.sigma2(x, 1) + oracle.mu(x, 1) ** 2) / e + (oracle.sigma2(x, 0) + oracle.mu(x, 0) ** 2) / (1 - e)
            a = pi * second / ell**2
            b = pi * oracle.tau_x(x) / ell
        else:
            noise1, noise0, hetero = variance_integrand(oracle, x, pbar_fixed, tau0, clip)
            a = pi * (noise1 + noise0 + hetero)
            b = np.zeros(k)
        chunks.append((pi.sum(), a.sum(), b.sum(), k))

    def combine(st):
        pi_s, a_s, b_s, n = (sum(s[i] for s in st) for i in range(4))
        if form == "display":
            return pbar_fixed / (1 - pbar_fixed) ** 2 * a_s / pi_s
        pbar = pi_s / n
        kf = pbar / (1 - pbar)
        theta1 = kf * b_s / pi_s
        return kf**2 * a_s / pi_s - theta1**2

    value = combine(chunks)
    parts = [combine([c]) for c in chunks]
    se = float(np.std(parts, ddof=1) / math.sqrt(len(parts))) if len(parts) > 1 else math.nan
    return MCValue(float(value), se)


_PI_CACHE: dict = {}


def pi_marginal(spec: DgpSpec | Oracle, n_mc: int = 10**6, seed: int = 0) -> MCValue:
    """P(S=1) as the Monte-Carlo mean of the true selection score."""
    if isinstance(spec, Oracle):
        key = (id(spec), n_mc, seed)
    else:
        key = (spec.kind, json.dumps(spec.params, sort_keys=True), n_mc, seed)
    if key not in _PI_CACHE:
        oracle = oracle_for(spec)
        rng = _mc_rng(seed, 3)
        tot = tot2 = 0.0
        for k in _chunks(n_mc):
            pi = oracle.pi_x(oracle.sample_x(k, rng))
            tot += pi.sum()
            tot2 += (pi * pi).sum()
        mean = tot / n_mc
        _PI_CACHE[key] = MCValue(mean, math.sqrt(max(tot2 / n_mc - mean**2, 0.0) / n_mc))
    return _PI_CACHE[key]


def true_nuisance(spec: DgpSpec, clip=DEFAULT_CLIP, n_mc: int = 10**6) -> NuisanceModels:
    """Nuisances set to the truth: oracle selection score, population P(S=1), e = 1/2."""
    oracle = oracle_for(spec)
    return NuisanceModels(
        selection_coefs=None,
        pi_hat=pi_marginal(spec, n_mc).value,
        propensity=Propensity("known", value=0.5),
        clip=tuple(clip),
        selection_fn=oracle.pi_x,
    )
