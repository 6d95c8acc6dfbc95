import numpy as np
import pytest
from scipy import integrate, stats

from agesir.clt import (CltSetup, bridge_covariance, cholesky_psd, clt_hat_I01, clt_hat_IR, driver_covariances,
                        sample_coupled_paths, sample_driver_paths, solve_clt_path, spde_solution_apply,
                        variance_identity_check)
from agesir.clt import _bridge_masses
from agesir.errors import ConfigurationError, NumericalError
from agesir.lln import Grid, TestFunction, solve_lln
from agesir.model import AgeLaw, DurationDistribution, InfectivityLaw, InitialCondition

BETA, GAMMA_RATE = 0.4, 0.25
MARKOV = InfectivityLaw.indicator(BETA, DurationDistribution.exponential(GAMMA_RATE))
INIT = InitialCondition(0.9, 0.1, 0.0, AgeLaw.uniform(1.0))
ONE = TestFunction.constant(1.0)
P = 4000


@pytest.fixture(scope="module")
def markov_lln():
    return solve_lln(MARKOV, INIT, Grid(30.0, 0.01))


@pytest.fixture(scope="module")
def setup(markov_lln):
    return CltSetup(markov_lln, 30.0, 0.25, phis=[ONE])


@pytest.fixture(scope="module")
def blocks(setup):
    return driver_covariances(setup)


@pytest.fixture(scope="module")
def drivers(setup, blocks):
    return sample_driver_paths(np.random.default_rng(1), setup, P, blocks)


@pytest.fixture(scope="module")
def coupled(setup):
    return sample_coupled_paths(np.random.default_rng(2), setup, P)


def within(emp, exact, k=4.0, floor=1e-10):
    # sample variance of P Gaussians: sd = var sqrt(2 / (P - 1))
    return np.all(np.abs(emp - exact) <= k * np.abs(exact) * np.sqrt(2.0 / (P - 1)) + floor)


def lna_covariance(times):
    """Linear-noise covariance of the Markovian SIR, started without fluctuations."""
    def rhs(t, y):
        s, i = y[:2]
        C = y[2:].reshape(2, 2)
        inf = BETA * s * i
        A = np.array([[-BETA * i, -BETA * s], [BETA * i, BETA * s - GAMMA_RATE]])
        B = np.array([[inf, -inf], [-inf, inf + GAMMA_RATE * i]])
        return np.concatenate([[-inf, inf - GAMMA_RATE * i], (A @ C + C @ A.T + B).ravel()])

    sol = integrate.solve_ivp(rhs, (0, times[-1]), [0.9, 0.1, 0, 0, 0, 0], t_eval=times, rtol=1e-10, atol=1e-12)
    return sol.y[2], sol.y[5], sol.y[3]


def test_bridge_covariance_values():
    assert bridge_covariance(0.5, 0.5) == 0.25
    assert bridge_covariance(0.25, 0.75) == pytest.approx(0.25 - 0.1875)
    assert bridge_covariance(0.0, 0.3) == 0.0 and bridge_covariance(1.0, 0.3) == pytest.approx(0.0)


def test_bridge_masses_covariance_and_sum():
    mass = np.array([0.02, 0.03, 0.05])
    Z = _bridge_masses(np.random.default_rng(0), mass, 100_000)
    assert np.max(np.abs(Z.sum(axis=1))) < 1e-15
    w = mass / mass.sum()
    exact = mass.sum() * (np.diag(w) - np.outer(w, w))
    assert np.allclose(np.cov(Z.T), exact, atol=4 * 0.1 * 0.25 * np.sqrt(2 / 1e5))


def test_cholesky_psd_reconstructs_and_keeps_zero_rows():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((5, 3))
    C = np.zeros((6, 6))
    C[1:, 1:] = A @ A.T  # rank 3, first row zero
    L = cholesky_psd(C)
    assert np.all(L[0] == 0) and np.all(L[:, 0] == 0)
    assert np.allclose(L @ L.T, C, atol=1e-7)
    assert np.all(cholesky_psd(np.zeros((3, 3))) == 0)


def test_cholesky_psd_rejects_bad_matrices():
    with pytest.raises(NumericalError):
        cholesky_psd(np.diag([1.0, -1.0]))
    with pytest.raises(NumericalError):
        cholesky_psd(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_setup_validation(markov_lln):
    with pytest.raises(ConfigurationError):
        CltSetup(markov_lln, 30.0, 0.7)
    with pytest.raises(ConfigurationError):
        CltSetup(markov_lln, 40.0, 0.5)


def test_zero_drivers_give_zero_paths(drivers):
    z = drivers.zeros_like()
    path = solve_clt_path(z)
    assert np.all(path.S == 0) and np.all(path.F == 0) and np.all(path.U == 0)
    I, R = clt_hat_IR(z, path)
    assert np.all(I == 0) and np.all(R == 0)


def test_solution_is_linear_in_drivers(drivers):
    base = solve_clt_path(drivers)
    twice = solve_clt_path(drivers.scaled(-2.5))
    assert np.allclose(twice.S, -2.5 * base.S, rtol=1e-12, atol=1e-14)
    assert np.allclose(twice.U, -2.5 * base.U, rtol=1e-12, atol=1e-14)


def test_drivers_vanish_at_time_zero(drivers):
    for x in (drivers.S1, drivers.F1, drivers.F2, drivers.I_inf, drivers.I_rec, drivers.I1, drivers.R0,
              drivers.R1, drivers.I0, drivers.F02):
        assert np.all(x[:, 0] == 0)
    # ages are redistributed among the initially infected, their number is not
    assert np.max(np.abs(drivers.Z.sum(axis=1))) < 1e-14


def test_S1_variance_is_integrated_upsilon(setup, blocks, markov_lln):
    ups = np.interp(np.linspace(0, 30, 30001), markov_lln.t, markov_lln.Upsilon)
    cum = integrate.cumulative_trapezoid(ups, dx=1e-3, initial=0.0)[::250][: setup.n + 1]
    assert np.allclose(np.diag(blocks["S1"]), cum, rtol=2e-3, atol=1e-6)


@pytest.mark.parametrize("key,attr", [("S1", "S1"), ("F1", "F1"), ("F2", "F2"), ("F01", "F01"), ("F02", "F02"),
                                      ("I_inf", "I_inf"), ("I_rec", "I_rec"), ("I0", "I0"), ("I1", "I1"),
                                      ("R0", "R0"), ("R1", "R1")])
def test_sampled_driver_variances_match_blocks(drivers, blocks, key, attr):
    emp = getattr(drivers, attr).var(axis=0, ddof=1)
    assert within(emp[1:], np.diag(blocks[key])[1:])


def test_sampled_cross_covariance_S1_F1(drivers, blocks):
    for m in (10, 40, 120):
        emp = np.cov(drivers.S1[:, m], drivers.F1[:, m])[0, 1]
        ex = blocks["S1_F1"][m, m]
        sd = np.sqrt((blocks["S1"][m, m] * blocks["F1"][m, m] + ex**2) / (P - 1))
        assert abs(emp - ex) <= 4 * sd


def test_registered_mu_drivers(drivers, blocks):
    name = ONE.name
    assert np.allclose(drivers.mu_rec[name], drivers.I_rec)
    assert within(drivers.mu_inf[name].var(axis=0, ddof=1)[1:], blocks[f"mu_inf_var[{name}]"][1:])
    # mu_check_inf(1) is I_inf itself
    assert np.allclose(drivers.mu_inf[name], drivers.I_inf)


def test_fluctuations_are_gaussian(drivers):
    path = solve_clt_path(drivers)
    for X in (path.S[:, 40], path.F[:, 80], drivers.I_rec[:, 60]):
        assert abs(stats.skew(X)) <= 3 * np.sqrt(6 / P)
        assert abs(stats.kurtosis(X)) <= 3 * np.sqrt(24 / P)


def test_coupled_paths_conserve_mass(coupled):
    assert np.max(np.abs(coupled.S + coupled.I + coupled.R)) < 1e-12
    assert np.all(coupled.S[:, 0] == 0)


def test_coupled_paths_match_linear_noise_approximation(setup, coupled):
    idx = [40, 80, 120]
    vS, vI, cSI = lna_covariance(setup.t[idx])
    assert np.allclose(coupled.S[:, idx].var(axis=0, ddof=1), vS, rtol=0.1)
    assert np.allclose(coupled.I[:, idx].var(axis=0, ddof=1), vI, rtol=0.1)
    emp = [np.cov(coupled.S[:, m], coupled.I[:, m])[0, 1] for m in idx]
    assert np.allclose(emp, cSI, rtol=0.15)


def test_decoupled_and_coupled_share_the_law_of_S(drivers, coupled):
    path = solve_clt_path(drivers)
    idx = [20, 60, 100]
    assert np.allclose(path.S[:, idx].var(axis=0), coupled.S[:, idx].var(axis=0), rtol=0.12)


def test_driver_parts_of_I_hat_satisfy_variance_identity(drivers, blocks):
    # Var(I_inf + I_rec) = Var(I_0 + I_1), analytically and in the samples
    lhs = np.diag(blocks["I_inf"]) + np.diag(blocks["I_rec"])
    rhs = np.diag(blocks["I0"]) + np.diag(blocks["I1"])
    assert np.allclose(lhs[1:], rhs[1:], rtol=2e-3)
    assert within((drivers.I_inf + drivers.I_rec).var(axis=0, ddof=1)[1:], rhs[1:])
    assert within((drivers.I0 + drivers.I1).var(axis=0, ddof=1)[1:], rhs[1:])


def test_two_forms_of_I_hat_share_the_mean(drivers):
    path = solve_clt_path(drivers)
    I, _ = clt_hat_IR(drivers, path)
    I01 = clt_hat_I01(drivers, path)
    sd = np.sqrt(I.var(axis=0) / P + I01.var(axis=0) / P)
    assert np.all(np.abs(I.mean(axis=0) - I01.mean(axis=0)) <= 4 * sd + 1e-12)


def test_spde_solution_matches_transport_form(setup):
    drv = sample_driver_paths(np.random.default_rng(5), setup, 50, keep_field=True)
    path = solve_clt_path(drv)
    I, _ = clt_hat_IR(drv, path)
    for t in (5.0, 17.5, 30.0):
        m = int(round(t / setup.dt))
        reg = spde_solution_apply(drv, path, ONE, t)
        assert np.allclose(reg, I[:, m], rtol=1e-10, atol=1e-12)
        drv.mu_rec.clear()
        field = spde_solution_apply(drv, path, ONE, t)
        assert np.allclose(field, I[:, m], rtol=1e-10, atol=1e-12)
        drv.mu_rec[ONE.name] = drv.I_rec


def test_spde_solution_needs_registration_or_field(setup, drivers):
    path = solve_clt_path(drivers)
    with pytest.raises(ConfigurationError):
        spde_solution_apply(drivers, path, TestFunction.bump(0.0, 5.0), 10.0)


def test_coupled_construction_rejects_non_separable_law():
    law = InfectivityLaw.two_phase(DurationDistribution.gamma(3.0, 0.6))
    lln = solve_lln(law, INIT, Grid(5.0, 0.05))
    with pytest.raises(ConfigurationError):
        sample_coupled_paths(np.random.default_rng(0), CltSetup(lln, 5.0, 0.5), 10)


@pytest.mark.parametrize("law", [MARKOV, InfectivityLaw.indicator(0.5, DurationDistribution.gamma(2.0, 0.5))])
@pytest.mark.parametrize("phi", [ONE, TestFunction.bump(0.0, 8.0)])
def test_variance_identity_converges_at_second_order(law, phi):
    gaps = [variance_identity_check(solve_lln(law, INIT, Grid(10.0, dt)), phi, 10.0)[2] for dt in (0.02, 0.01)]
    assert gaps[1] <= 1e-5
    assert 3.0 <= gaps[0] / gaps[1] <= 5.0


def test_variance_identity_without_new_infections():
    law = InfectivityLaw.indicator(0.0, DurationDistribution.gamma(2.0, 0.5))
    lhs, rhs, gap = variance_identity_check(solve_lln(law, INIT, Grid(10.0, 0.01)), ONE, 10.0)
    assert rhs > 0 and gap < 1e-4


def test_no_transmission_variance_of_I_hat_has_closed_form():
    # beta = 0: I_hat(t) = sum_m Z_m r_m(t) + T(t), a bridge term plus independent Bernoulli thinning
    law = InfectivityLaw.indicator(0.0, DurationDistribution.gamma(2.0, 0.5))
    lln = solve_lln(law, INIT, Grid(10.0, 0.05))
    s = CltSetup(lln, 10.0, 0.5)
    cp = sample_coupled_paths(np.random.default_rng(7), s, P)
    w = s.mass / s.mass.sum()
    r = s.ratio
    exact = s.mass @ (r - r**2) + 0.1 * (w @ r**2 - (w @ r) ** 2)
    assert within(cp.I.var(axis=0, ddof=1)[1:], exact[1:])
    assert np.all(cp.S == 0)
