import math

import numpy as np
import pytest

from rootopt.dgp import (
    KINDS,
    Box,
    Community,
    HighDim,
    Oracle,
    friedman_mean,
    gen_box,
    gen_community,
    gen_highdim,
    generate,
    make_spec,
    oracle_tate,
    oracle_thetas,
    oracle_variance,
    variance_integrand,
)
from rootopt.errors import UnknownDgp


class Homogeneous(Oracle):
    """Uniform selection, noiseless outcomes and a constant effect of 2."""

    p = 1

    def sample_x(self, n, rng):
        return rng.normal(size=(n, 1))

    def pi_x(self, x):
        return np.full(np.atleast_2d(x).shape[0], 0.4)

    def mu(self, x, t):
        return np.full(np.atleast_2d(x).shape[0], 2.0 * t)

    def sigma2(self, x, t):
        return np.zeros(np.atleast_2d(x).shape[0])


class DoubledTreatedNoise(Community):
    def sigma2(self, x, t):
        return 2 * super().sigma2(x, t) if t == 1 else super().sigma2(x, t)


def test_community_selection_values():
    c = Community()
    assert c.pi_x(np.array([0.0, 0.0]))[0] == 0.5
    assert c.pi_x(np.array([6.0, 0.0]))[0] == 0.0
    assert c.pi_x(np.array([3.0, 0.0]))[0] == 0.25


def test_community_mixture_fraction():
    _, in_a = Community().sample_x(100_000, np.random.default_rng(0), return_groups=True)
    assert abs(in_a.mean() - 0.75) < 0.01


def test_box_selection_values():
    b = Box()
    outside = np.full((1, 100), 0.2)
    inside = np.full((1, 100), 0.2)
    inside[0, :2] = 0.7
    assert b.pi_x(outside)[0] == pytest.approx(0.56218, abs=1e-5)
    assert b.pi_x(inside)[0] == pytest.approx(0.14804, abs=1e-5)


def test_friedman_mean_and_effect():
    x = np.full((1, 100), 0.5)
    assert friedman_mean(x)[0] == pytest.approx(14.57107, abs=1e-5)
    expected = math.log(10 * math.sin(math.pi / 4) + 7.5 + 1)
    assert expected == pytest.approx(2.745415, abs=1e-6)
    assert Box().tau_x(x)[0] == pytest.approx(expected, abs=1e-12)


def test_highdim_zero_scale_is_flat():
    spec = make_spec("highdim", 100, 0, scale=0.0)
    d, o = generate(spec)
    assert np.all(o.pi_x(d.x) == 0.5)


def test_highdim_trial_fraction_default_scale():
    d, _ = gen_highdim(100_000, 3)
    assert 0.35 <= d.n1 / d.n <= 0.65


def test_highdim_variances():
    o = HighDim(np.ones(3), np.ones(3), np.ones(3), 1.0)
    x = np.zeros((4, 3))
    assert np.all(o.sigma2(x, 1) == 2) and np.all(o.sigma2(x, 0) == 1)


@pytest.mark.parametrize("kind", KINDS)
def test_regeneration_is_identical(kind):
    a, _ = generate(make_spec(kind, 300, 9))
    b, _ = generate(make_spec(kind, 300, 9))
    for f in ("x", "s", "t", "y"):
        assert np.array_equal(getattr(a, f), getattr(b, f), equal_nan=True)


@pytest.mark.parametrize("kind", KINDS)
def test_rows_and_effect_identity(kind):
    d, o = generate(make_spec(kind, 500, 2))
    tr = d.trial
    assert np.isfinite(d.y[tr]).all() and np.isnan(d.y[~tr]).all() and np.isnan(d.t[~tr]).all()
    assert np.array_equal(o.tau_x(d.x), o.mu(d.x, 1) - o.mu(d.x, 0))
    pi = o.pi_x(d.x)
    assert ((pi >= 0) & (pi <= 1)).all()
    assert (o.sigma2(d.x, 0) >= 0).all() and (o.sigma2(d.x, 1) >= 0).all()


@pytest.mark.parametrize("kind", KINDS)
def test_trial_fraction_matches_mean_score(kind):
    n = 20_000
    d, o = generate(make_spec(kind, n, 17))
    rng = np.random.default_rng(0)
    mean_pi = o.pi_x(o.sample_x(400_000, rng)).mean()
    se = math.sqrt(mean_pi * (1 - mean_pi) / n)
    assert abs(d.n1 / n - mean_pi) < 3 * se + 3 * math.sqrt(0.25 / 400_000)


def test_unknown_dgp():
    with pytest.raises(UnknownDgp, match="out of scope"):
        make_spec("clone", 100, 0)


def test_uniform_selection_target_effect_is_thirteen():
    spec = make_spec("community", 100, 0, uniform_selection=0.3)
    est = oracle_tate(spec, 10**6, 1)
    assert abs(est.value - 13.0) < 3 * est.se


def test_orthogonal_highdim_target_effect_is_zero():
    spec = make_spec("highdim", 100, 4, beta1_orthogonal=True)
    assert abs(np.dot(spec.params["alpha0"], spec.params["beta1"])) < 1e-9
    est = oracle_tate(spec, 400_000, 2)
    assert abs(est.value) < 3 * est.se


@pytest.mark.parametrize("kind", KINDS)
def test_identification_functionals_agree(kind):
    t0, t1 = oracle_thetas(make_spec(kind, 100, 0), 300_000, 3)
    assert abs(t0.value - t1.value) < 3 * math.hypot(t0.se, t1.se)


def test_display_variance_vanishes_without_noise_or_heterogeneity():
    assert oracle_variance(Homogeneous(), 200_000, 0, form="display").value == pytest.approx(0.0, abs=1e-12)


def test_doubling_treated_noise_doubles_its_term():
    x = Community().sample_x(100, np.random.default_rng(5))
    base = variance_integrand(Community(), x, 0.36, 13.0)
    doubled = variance_integrand(DoubledTreatedNoise(), x, 0.36, 13.0)
    assert np.array_equal(doubled[0], 2 * base[0])
    assert np.array_equal(doubled[1], base[1]) and np.array_equal(doubled[2], base[2])


def test_exact_variance_matches_direct_contrast_variance():
    # independent check: simulate trial units directly and take the variance of the IPW contrast
    spec = make_spec("box", 100, 0)
    o = Box()
    rng = np.random.default_rng(8)
    x = o.sample_x(400_000, rng)
    pi = o.pi_x(x)
    s = rng.random(x.shape[0]) < pi
    pbar = pi.mean()
    xs = x[s]
    t = rng.random(xs.shape[0]) < 0.5
    y0, y1 = o.outcomes(xs, rng)
    y = np.where(t, y1, y0)
    ell = o.pi_x(xs) / (1 - o.pi_x(xs))
    c = pbar / (1 - pbar) * np.where(t, y / 0.5, -y / 0.5) / ell
    assert oracle_variance(spec, 10**6, 0).value == pytest.approx(c.var(), rel=0.02)
