import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from agesir.errors import ConfigurationError, HorizonCapError
from agesir.model import (AgeLaw, DurationDistribution, InfectivityLaw, InitialCondition, Profile,
                          infectivity_covariance, mean_infectivity, sample_infectivity, sample_initial_batch,
                          sample_initial_individual)


def erlang_sf_sum(k, rate, t):
    # sum_{m<k} e^{-x} x^m / m!
    x = rate * t
    return sum(math.exp(-x) * x**m / math.factorial(m) for m in range(k))


@pytest.mark.parametrize("t", [0.0, 0.3, 1.0, 4.0, 11.0])
def test_exponential_sf_closed_form(t):
    d = DurationDistribution.exponential(0.25)
    assert d.sf(t) == pytest.approx(math.exp(-0.25 * t), rel=1e-14)
    assert d.logsf(t) == pytest.approx(-0.25 * t, abs=1e-15)
    assert float(d.hazard(t)) == 0.25


@pytest.mark.parametrize("k,rate,t", [(2, 0.5, 1.0), (3, 1.3, 0.2), (4, 0.8, 7.0), (5, 2.0, 12.0)])
def test_gamma_sf_matches_erlang_sum(k, rate, t):
    d = DurationDistribution.gamma(k, rate)
    assert d.sf(t) == pytest.approx(erlang_sf_sum(k, rate, t), rel=1e-12)


def test_gamma_hazard_is_pdf_over_sf():
    d = DurationDistribution.gamma(3.0, 0.7)
    t = np.linspace(0.1, 20, 50)
    assert np.allclose(d.hazard(t), d.pdf(t) / d.sf(t), rtol=1e-10)


def test_lognormal_against_scipy():
    d = DurationDistribution.lognormal(1.0, 0.5)
    ref = stats.lognorm(0.5, scale=math.e)
    t = np.array([0.5, 2.0, 5.0])
    assert np.allclose(d.cdf(t), ref.cdf(t))
    assert d.mean == pytest.approx(math.exp(1.0 + 0.125))


def test_near_deterministic_concentration():
    d = DurationDistribution.near_deterministic(5.0, cv=0.05)
    assert d.mean == pytest.approx(5.0)
    x = d.sample(np.random.default_rng(0), 20_000)
    assert np.std(x) / np.mean(x) == pytest.approx(0.05, rel=0.05)


def test_piecewise_linear_cdf_and_hazard():
    d = DurationDistribution.piecewise_linear([0, 1, 3], [0, 0.5, 1.0])
    assert d.cdf(0.5) == pytest.approx(0.25)
    assert d.cdf(2.0) == pytest.approx(0.75)
    # on (1, 3): f = 0.25, F^c(2) = 0.25
    assert float(d.hazard(2.0)) == pytest.approx(1.0)
    assert d.mean == pytest.approx(0.5 * 0.5 + 0.5 * 2.0)


@pytest.mark.parametrize("knots,cdf", [([0, 1], [0.1, 1.0]), ([0, 2, 1], [0, 0.5, 1]), ([0, 1], [0, 0.9])])
def test_piecewise_linear_rejects_bad_cdf(knots, cdf):
    with pytest.raises(ConfigurationError):
        DurationDistribution.piecewise_linear(knots, cdf)


def test_invalid_parameters_rejected():
    with pytest.raises(ConfigurationError):
        DurationDistribution.exponential(0.0)
    with pytest.raises(ConfigurationError):
        DurationDistribution.gamma(0.5, 1.0)
    with pytest.raises(ConfigurationError):
        DurationDistribution.lognormal(0.0, -1.0)


@settings(max_examples=60, deadline=None)
@given(age=st.floats(0, 10), t=st.floats(0, 10), t2=st.floats(0, 10))
def test_residual_ratio_is_a_monotone_survival(age, t, t2):
    d = DurationDistribution.gamma(2.0, 0.5)
    r, r2 = d.ratio(age, t), d.ratio(age, t2)
    assert 0.0 <= r <= 1.0 + 1e-12
    if t <= t2:
        assert r2 <= r + 1e-12
    assert d.ratio(age, 0.0) == pytest.approx(1.0)


def test_residual_sampling_follows_truncated_law():
    d = DurationDistribution.gamma(3.0, 1.0)
    ages = np.full(20_000, 2.0)
    eta = d.sample_residual(np.random.default_rng(1), ages)
    assert np.all(eta > 2.0)
    # KS against F^c(2 + s) / F^c(2)
    res = stats.kstest(eta - 2.0, lambda s: 1.0 - d.ratio(2.0, s))
    assert res.pvalue > 1e-3


def test_exponential_residual_is_memoryless():
    d = DurationDistribution.exponential(0.5)
    eta = d.sample_residual(np.random.default_rng(2), np.full(20_000, 3.0))
    assert stats.kstest(eta - 3.0, "expon", args=(0, 2.0)).pvalue > 1e-3


def test_sup_hazard_bounds_hazard():
    for d in (DurationDistribution.gamma(3.0, 0.6), DurationDistribution.lognormal(0.5, 0.4),
              DurationDistribution.piecewise_linear([0, 1, 5, 6], [0, 0.2, 0.7, 1.0])):
        t = np.linspace(0, 5.5, 2000)
        assert np.all(d.hazard(t) <= d.sup_hazard(5.5) * (1 + 1e-9))


def test_user_hazard_bound_wins():
    d = DurationDistribution.gamma(2.0, 1.0, hazard_bound=3.0)
    assert d.sup_hazard(10.0) == 3.0


def test_profile_table_interpolates_linearly():
    p = Profile.tabulate(lambda a: a**2, horizon=2.0, step=0.5)
    assert p(0.75) == pytest.approx(0.5 * (0.25 + 1.0))
    assert p.sup == pytest.approx(4.0)
    assert not p.is_constant
    assert Profile.constant(0.3)(np.array([1.0, 2.0])).tolist() == [0.3, 0.3]


def test_indicator_realization_shape():
    law = InfectivityLaw.indicator(0.4, DurationDistribution.exponential(0.25))
    lam = sample_infectivity(np.random.default_rng(0), law)
    a = np.array([0.0, lam.eta * 0.5, lam.eta, lam.eta + 1])
    assert lam(a).tolist() == [0.4, 0.4, 0.0, 0.0]


def test_two_phase_realizations_respect_bound():
    law = InfectivityLaw.two_phase(DurationDistribution.gamma(3.0, 0.6), (0.2, 0.5), (0.4, 1.0))
    eta, breaks, levels = law.sample_batch(np.random.default_rng(3), 5000)
    assert np.all(breaks[:, 0] == 0) and np.all(breaks[:, -1] == eta)
    frac = breaks[:, 1] / eta
    assert frac.min() >= 0.2 and frac.max() <= 0.5
    assert np.all(levels[:, 0] == 0) and levels[:, 1].max() <= law.lam_star
    assert not law.separable_law


def test_separable_mean_and_covariance_closed_form():
    d = DurationDistribution.exponential(0.5)
    law = InfectivityLaw.indicator(2.0, d)
    assert mean_infectivity(law, 1.0) == pytest.approx(2.0 * math.exp(-0.5))
    # v(t, s) = 4 (F^c(t v s) - F^c(t) F^c(s))
    assert infectivity_covariance(law, 1.0, 3.0) == pytest.approx(4 * (math.exp(-1.5) - math.exp(-2.0)))


def test_two_phase_moments_match_direct_monte_carlo():
    d = DurationDistribution.gamma(2.0, 1.0)
    law = InfectivityLaw.two_phase(d, (0.2, 0.5), (0.4, 1.0))
    law.build_cache(8.0, step=0.1, n_samples=40_000, rng=np.random.default_rng(4))
    # independent oracle: E[X 1{U eta <= t < eta}] = E[X] int P(U <= t/e) f(e) de over e > t
    from scipy import integrate

    def oracle(t):
        def inner(e):
            p = np.clip((t / e - 0.2) / 0.3, 0.0, 1.0)
            return p * float(d.pdf(e))
        return 0.7 * integrate.quad(inner, t, np.inf)[0]

    for t in (0.5, 1.5, 3.0):
        assert law.mean(t) == pytest.approx(oracle(t), abs=0.01)


def test_residual_moments_separable():
    law = InfectivityLaw.indicator(1.0, DurationDistribution.exponential(1.0))
    assert law.residual_mean(2.0, 1.0) == pytest.approx(math.exp(-1.0))
    assert law.residual_covariance(2.0, 1.0, 1.0) == pytest.approx(math.exp(-1) - math.exp(-2))


def test_horizon_cap_raises():
    law = InfectivityLaw.indicator(1.0, DurationDistribution.exponential(1.0), eta_cap=0.01)
    with pytest.raises(HorizonCapError):
        law.sample_batch(np.random.default_rng(0), 1000)


def test_uniform_age_law_quadrature():
    law = AgeLaw.uniform(2.0)
    nodes, w = law.quadrature(0.1)
    assert w.sum() == pytest.approx(1.0)
    assert np.sum(w * nodes) == pytest.approx(1.0)
    x = law.sample(np.random.default_rng(0), 1000)
    assert x.min() > 0 and x.max() <= 2.0


def test_point_mass_age_law():
    law = AgeLaw.point_masses([0.5, 0.1], [1, 3])
    assert law.cdf(0.2) == pytest.approx(0.75)
    assert law.cdf(0.5) == pytest.approx(1.0)
    x = law.sample(np.random.default_rng(0), 40_000)
    assert np.mean(x == 0.1) == pytest.approx(0.75, abs=0.01)
    with pytest.raises(ConfigurationError):
        AgeLaw.point_masses([0.0], [1.0])


def test_density_age_law_cdf():
    law = AgeLaw.density(lambda a: 2 * a, 1.0)
    assert law.cdf(0.5) == pytest.approx(0.25, abs=1e-6)


def test_paper_uniform_law_matches_its_sampler():
    d = DurationDistribution.gamma(2.0, 1.0)
    law = AgeLaw.paper_uniform(d, 1.5)
    x = law.sample(np.random.default_rng(5), 40_000)
    for a in (0.3, 0.8, 1.2):
        assert np.mean(x <= a) == pytest.approx(float(law.cdf(a)), abs=0.01)
    nodes, w = law.quadrature(0.05)
    assert w.sum() == pytest.approx(1.0, abs=1e-9)
    assert w[-1] == pytest.approx(np.mean(x == 1.5), abs=0.01)


def test_initial_condition_validation():
    age = AgeLaw.uniform(1.0)
    with pytest.raises(ConfigurationError):
        InitialCondition(0.5, 0.1, 0.1, age)
    with pytest.raises(ConfigurationError):
        InitialCondition(1.0, 0.0, 0.0, age)
    with pytest.raises(ConfigurationError):
        InitialCondition(0.9, 0.1, 0.0, age, coupling_mode="other")


def test_counts_are_floors_summing_to_N():
    init = InitialCondition(0.9, 0.1, 0.0, AgeLaw.uniform(1.0))
    assert init.counts(10_000) == (9000, 1000, 0)
    assert sum(init.counts(333)) == 333


def test_initial_batch_residual_coupling():
    law = InfectivityLaw.indicator(1.0, DurationDistribution.gamma(2.0, 1.0))
    init = InitialCondition(0.9, 0.1, 0.0, AgeLaw.uniform(1.0))
    ages, eta0, breaks, levels = sample_initial_batch(np.random.default_rng(0), init, law, 500)
    assert np.all(eta0 > 0)
    assert np.allclose(breaks[:, -1] - ages, eta0)
    ind = sample_initial_individual(np.random.default_rng(1), init, law)
    assert ind.realization(ind.age) == 1.0


def test_residual_coupling_rejects_dead_support():
    law = InfectivityLaw.indicator(1.0, DurationDistribution.piecewise_linear([0, 1], [0, 1]))
    init = InitialCondition(0.9, 0.1, 0.0, AgeLaw.uniform(2.0))
    with pytest.raises(ConfigurationError):
        sample_initial_batch(np.random.default_rng(0), init, law, 10)
