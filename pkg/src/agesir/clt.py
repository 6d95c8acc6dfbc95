"""Gaussian fluctuation limit: driver covariances, driver sampling and the linear Volterra solve.

Two samplers are provided.

``sample_driver_paths`` draws the drivers as separate Gaussian objects:
``W_inf`` increments, the white noise ``W_rec`` on characteristic cells, a
Brownian bridge for ``mu_hat_0`` and Cholesky samples of ``F_hat_{0,2}`` and
``F_hat_2``, independent of everything else. This reproduces the law of
``(S_hat, F_hat)`` and each driver's marginal law, but ``W_rec`` is not
coupled to the infectivity drivers.

``sample_coupled_paths`` (separable laws only) builds every driver from one
white noise on (infection time, duration) plus per-node bridges for the
initially infected, so the joint law of ``(S_hat, F_hat, I_hat, R_hat)`` is
the one of the particle system and ``S_hat + I_hat + R_hat = 0`` path by path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._jit import njit
from .errors import ConfigurationError, NumericalError
from .lln import TestFunction, initial_quadrature, trapz_weights

JITTER = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8)


def bridge_covariance(s, s2):
    """``E[W0(s) W0(s')] = min(s, s') - s s'``."""
    return np.minimum(s, s2) - np.multiply(s, s2)


def cholesky_psd(C):
    """Lower Cholesky factor of a PSD matrix, adding ``eps * mean(diag)`` jitter when needed."""
    C = 0.5 * (C + C.T)
    diag = np.diag(C)
    if np.any(diag < 0):
        raise NumericalError("covariance block has a negative variance")
    # rows with zero variance (e.g. t = 0) stay exactly zero
    live = diag > 0
    L = np.zeros_like(C)
    if not live.any():
        return L
    sub = C[np.ix_(live, live)]
    scale = float(np.mean(np.diag(sub)))
    eye = np.eye(len(sub))
    for eps in JITTER:
        try:
            L[np.ix_(live, live)] = np.linalg.cholesky(sub + eps * scale * eye)
            return L
        except np.linalg.LinAlgError:
            continue
    raise NumericalError("covariance block is not positive semi-definite after jitter")


class CltSetup:
    """Deterministic ingredients of the fluctuation limit on a coarse grid ``t_n = n dt``.

    Infection-time cells are ``[t_j, t_{j+1})`` with midpoints ``s_j``; the
    initial age law is discretized on quadrature nodes ``a_m`` with masses
    ``I0 w_m``. ``phis`` registers test functions whose ``mu``-actions are
    accumulated while sampling.
    """

    def __init__(self, lln, T, dt, phis=(), age_step=None):
        law, init = lln.law, lln.init
        n = int(round(T / dt))
        if abs(n * dt - T) > 1e-9 * T:
            raise ConfigurationError("T must be a multiple of the CLT grid step")
        if T > lln.t[-1] + 1e-9:
            raise ConfigurationError("LLN paths do not cover the CLT horizon")
        self.law, self.init, self.lln = law, init, lln
        self.n, self.dt = n, dt
        self.t = np.arange(n + 1) * dt
        self.mid = (np.arange(n) + 0.5) * dt
        q = lambda x, at: np.interp(at, lln.t, x)
        self.Sbar = q(lln.S, self.t)
        self.Fbar = q(lln.F, self.t)
        self.Ubar = q(lln.Upsilon, self.t)
        self.Umid = q(lln.Upsilon, self.mid)
        dur = law.duration
        self.lam = np.asarray(law.mean(self.t), dtype=float) * np.ones(n + 1)
        self.lam_half = np.asarray(law.mean(self.mid), dtype=float) * np.ones(n)
        self.sf = dur.sf(self.t)
        self.sf_half = dur.sf(self.mid)
        step = age_step if age_step is not None else min(dt, init.abar / 50)
        self.nodes, self.mass = initial_quadrature(law, init, dt, step)
        a = self.nodes[:, None]
        self.ratio = dur.ratio(a, self.t[None, :])
        self.ratio_mid = dur.ratio(a, self.mid[None, :])
        self.lam0 = np.asarray(law.residual_mean(a, self.t[None, :]), dtype=float) * np.ones_like(self.ratio)
        # W_rec masses. New infections: cell (i, j), i <= j, infection time s_i, recovery in [t_j, t_{j+1})
        k = np.arange(n + 1)
        Fk = dur.cdf((k + 0.5) * dt)
        self.dF = np.concatenate([[float(dur.cdf(0.5 * dt))], np.diff(Fk)[: n - 1]]) if n > 1 else \
            np.array([float(dur.cdf(0.5 * dt))])
        self.sf_lag = dur.sf(k[:n] * dt)  # F^c((j - i) dt)
        # initially infected at node m recovering in [t_j, t_{j+1})
        self.mass_init = self.mass[:, None] * (self.ratio[:, :-1] - self.ratio[:, 1:])
        self.phis = list(phis)
        self._tw = [trapz_weights(m, dt) for m in range(n + 1)]

    # -- discretized operators --------------------------------------------
    def toeplitz(self, values):
        """Matrix ``M[j, m] = values[m - j - 1]`` for ``j < m`` (cells before grid time ``t_m``)."""
        n = self.n
        M = np.zeros((n, n + 1))
        for m in range(1, n + 1):
            M[:m, m] = values[m - 1::-1][:m]
        return M

    def cell_kernel(self, fn):
        """``K[j, m] = fn(t_m - s_j)`` for ``j < m``."""
        return self.toeplitz(np.asarray(fn(self.mid), dtype=float) * np.ones(self.n))

    def trapz_matrix(self, kern):
        """``M[k, m]`` = trapezoid weight of ``int_0^{t_m} kern(t_m - s) y(s) ds`` on node ``k``."""
        n = self.n
        M = np.zeros((n + 1, n + 1))
        for m in range(1, n + 1):
            M[: m + 1, m] = self._tw[m] * kern[m::-1]
        return M

    def rec_weight(self, phi):
        """Weights of the new-infection part of ``mu_check_rec``: ``phi(t_m - s_i) F^c(t_m - s_i)`` for ``i < m``."""
        return self.cell_kernel(lambda a: np.asarray(phi(a)) * self.law.duration.sf(a))


# ---------------------------------------------------------------------------
# covariance blocks


def driver_covariances(setup, phis=None):
    """Analytic covariance matrices on the grid (quadrature consistent with the samplers)."""
    s = setup
    n = s.n
    law = s.law
    dur = law.duration
    t = s.t
    mass, I0 = s.mass, s.init.I0
    out = {}
    # W_inf functionals: sums over cells j < min(m, m')
    Uc = s.Umid * s.dt

    def cell_cov(f_row, g_row=None):
        A = s.cell_kernel(f_row) if callable(f_row) else f_row
        B = A if g_row is None else (s.cell_kernel(g_row) if callable(g_row) else g_row)
        return (A * Uc[:, None]).T @ B

    ind = s.toeplitz(np.ones(n))
    out["S1"] = cell_cov(ind)
    out["F1"] = cell_cov(law.mean)
    out["S1_F1"] = cell_cov(ind, law.mean)
    out["I1"] = _pair_cells(s, lambda a, b: dur.sf(np.maximum(a, b)))
    out["R1"] = _pair_cells(s, lambda a, b: dur.cdf(np.minimum(a, b)))
    out["I_inf"] = cell_cov(dur.sf)
    out["F2"] = _pair_cells(s, lambda a, b: law.covariance(a, b))
    # initial-individual blocks
    r = s.ratio
    lam0 = s.lam0
    out["F01"] = (lam0 * mass[:, None]).T @ lam0 - np.outer(mass @ lam0, mass @ lam0) / I0
    rmax = np.minimum(r[:, :, None], r[:, None, :])  # r(t v t') = min of the two ratios
    out["I0"] = np.einsum("m,mab->ab", mass, rmax - r[:, :, None] * r[:, None, :])
    q = 1.0 - r
    qmin = np.minimum(q[:, :, None], q[:, None, :])
    out["R0"] = np.einsum("m,mab->ab", mass, qmin - q[:, :, None] * q[:, None, :])
    F02 = np.zeros((n + 1, n + 1))
    for m, a in enumerate(s.nodes):
        F02 += mass[m] * law.residual_covariance(a, t[:, None], t[None, :])
    out["F02"] = F02
    out["I_rec"] = _rec_cov(s, TestFunction.constant(1.0), TestFunction.constant(1.0))
    for phi in (phis if phis is not None else s.phis):
        out[f"mu_inf_var[{phi.name}]"] = mu_check_inf_var(s, phi)
        out[f"mu_rec_var[{phi.name}]"] = np.diag(_rec_cov(s, phi, phi))
        out[f"mu0_var[{phi.name}]"] = mu_hat0_var(s, phi)
        out[f"mu1_var[{phi.name}]"] = mu_hat1_var(s, phi)
    return out


def _pair_cells(s, fn):
    """``sum_{j < min(m, m')} fn(t_m - s_j, t_m' - s_j) Upsilon(s_j) dt``."""
    n = s.n
    C = np.zeros((n + 1, n + 1))
    for j in range(n):
        ages = s.t[j + 1:] - s.mid[j]
        C[j + 1:, j + 1:] += s.Umid[j] * s.dt * np.asarray(fn(ages[:, None], ages[None, :]), dtype=float)
    return C


def _rec_cov(s, phi, psi):
    """Covariance of ``mu_check_rec(phi)`` and ``mu_check_rec(psi)`` on the discretized ``W_rec`` cells."""
    n = s.n
    # new infections: sum_{i<=j<min} mass_ij K_m(i,j) K_m'(i,j), K = phi(t - s_i) F^c(t - s_i) / F^c((j-i) dt)
    w = s.dF / s.sf_lag**2  # depends on j - i
    cw = np.concatenate([[0.0], np.cumsum(w)])
    C = np.zeros((n + 1, n + 1))
    Wp = s.rec_weight(phi)
    Wq = s.rec_weight(psi)
    for i in range(n):
        # Q_i(m) = sum_{j=i}^{m-1} mass_ij / F^c((j-i)dt)^2, for m > i
        Qi = s.Umid[i] * s.dt * cw[np.arange(n + 1) - i].clip(0) * (np.arange(n + 1) > i)
        Qm = np.minimum(Qi[:, None], Qi[None, :])  # Q_i is non-decreasing in m
        C += Qm * np.outer(Wp[i], Wq[i])
    # initial atoms: sum_m sum_{j<min} mass_init[m,j] r_m(t)/r_m(s_j) r_m(t')/r_m(s_j) phi psi
    cum = np.concatenate([np.zeros((len(s.nodes), 1)), np.cumsum(s.mass_init / s.ratio_mid**2, axis=1)], axis=1)
    vp = np.asarray(phi(s.nodes[:, None] + s.t[None, :])) * s.ratio
    vq = np.asarray(psi(s.nodes[:, None] + s.t[None, :])) * s.ratio
    Qm = np.minimum(cum[:, :, None], cum[:, None, :])
    C += np.einsum("mab,ma,mb->ab", Qm, vp, vq)
    return C


def mu_check_inf_var(s, phi):
    Wi = s.rec_weight(phi)
    return (Wi**2 * (s.Umid * s.dt)[:, None]).sum(axis=0)


def mu_hat0_var(s, phi):
    v = np.asarray(phi(s.nodes[:, None] + s.t[None, :])) ** 2
    return (s.mass[:, None] * (s.ratio - s.ratio**2) * v).sum(axis=0)


def mu_hat1_var(s, phi):
    K = s.cell_kernel(lambda a: np.asarray(phi(a)) ** 2 * s.law.duration.sf(a))
    return (K * (s.Umid * s.dt)[:, None]).sum(axis=0)


# ---------------------------------------------------------------------------
# sampling


@dataclass
class GaussianDriverSet:
    """``P`` sampled driver paths on the grid of ``setup`` (arrays are ``(P, n+1)`` unless noted)."""

    setup: CltSetup
    Z: np.ndarray  # (P, M) mu_hat_0 masses on the quadrature nodes, rows sum to 0
    F01: np.ndarray
    F02: np.ndarray
    S1: np.ndarray
    F1: np.ndarray
    F2: np.ndarray
    dW_inf: np.ndarray  # (P, n)
    I_inf: np.ndarray
    I_rec: np.ndarray
    I0: np.ndarray
    I1: np.ndarray
    R0: np.ndarray
    R1: np.ndarray
    mu_inf: dict = field(default_factory=dict)
    mu_rec: dict = field(default_factory=dict)
    rec_new: np.ndarray | None = None  # (P, n, n) scaled W_rec cell masses (i, j), zero below the diagonal
    rec_init: np.ndarray | None = None  # (P, M, n)

    @property
    def P(self):
        return self.Z.shape[0]

    def scaled(self, c):
        """Every driver multiplied by ``c``."""
        sc = lambda x: None if x is None else c * x
        return GaussianDriverSet(self.setup, c * self.Z, c * self.F01, c * self.F02, c * self.S1, c * self.F1,
                                 c * self.F2, c * self.dW_inf, c * self.I_inf, c * self.I_rec, c * self.I0,
                                 c * self.I1, c * self.R0, c * self.R1,
                                 {k: c * v for k, v in self.mu_inf.items()},
                                 {k: c * v for k, v in self.mu_rec.items()},
                                 sc(self.rec_new), sc(self.rec_init))

    def zeros_like(self):
        return self.scaled(0.0)


def _bridge_masses(rng, mass, P):
    """``Z_m`` with ``sum_m Z_m = 0``: increments of ``sqrt(I0) W0(G)`` over the quadrature cells."""
    I0 = mass.sum()
    w = mass / I0
    xi = rng.standard_normal((P, len(mass)))
    inc = np.sqrt(w) * xi
    Z = math.sqrt(I0) * (inc - w * inc.sum(axis=1, keepdims=True))
    return Z


def sample_driver_paths(rng, setup, P, blocks=None, keep_field=False, chunk=256):
    """Draw ``P`` decoupled driver paths (see the module docstring)."""
    s = setup
    n = s.n
    blocks = driver_covariances(s, []) if blocks is None else blocks
    chol = {k: cholesky_psd(blocks[k]) for k in ("F02", "F2", "I0", "I1", "R0", "R1")}
    ind = s.toeplitz(np.ones(n))
    L1 = s.toeplitz(s.lam_half)
    Winf1 = s.rec_weight(TestFunction.constant(1.0))
    phis = s.phis
    Wphi = {phi.name: s.rec_weight(phi) for phi in phis}
    out = {k: [] for k in ("Z", "F01", "F02", "S1", "F1", "F2", "dW", "Iinf", "Irec", "I0", "I1", "R0", "R1",
                           "new", "init")}
    mu_inf = {phi.name: [] for phi in phis}
    mu_rec = {phi.name: [] for phi in phis}
    sq_new = np.sqrt(np.maximum(s.dF, 0.0)) / s.sf_lag  # by lag j - i, divided by F^c(lag)
    sq_init = np.sqrt(np.maximum(s.mass_init, 0.0)) / s.ratio_mid
    lag = np.arange(n)[None, :] - np.arange(n)[:, None]
    upper = lag >= 0
    scale_new = np.where(upper, np.sqrt(s.Umid * s.dt)[:, None] * sq_new[np.clip(lag, 0, n - 1)], 0.0)
    for start in range(0, P, chunk):
        p = min(chunk, P - start)
        Z = _bridge_masses(rng, s.mass, p)
        F01 = Z @ s.lam0
        F02 = rng.standard_normal((p, n + 1)) @ chol["F02"].T
        F2 = rng.standard_normal((p, n + 1)) @ chol["F2"].T
        dW = rng.standard_normal((p, n)) * np.sqrt(s.Umid * s.dt)
        S1 = dW @ ind
        F1 = dW @ L1
        Iinf = dW @ Winf1
        # W_rec on characteristic cells, divided by the F^c(s_j - s_i) denominators
        xi_new = rng.standard_normal((p, n, n)) * scale_new
        xi_init = rng.standard_normal((p, len(s.nodes), n)) * sq_init
        X_new = np.concatenate([np.zeros((p, n, 1)), np.cumsum(xi_new, axis=2)], axis=2)  # (p, i, m)
        X_init = np.concatenate([np.zeros((p, len(s.nodes), 1)), np.cumsum(xi_init, axis=2)], axis=2)
        rec = lambda Wm, vals: np.einsum("pim,im->pm", X_new, Wm) + np.einsum("pmk,mk->pk", X_init, vals)
        Irec = rec(Winf1, s.ratio)
        for phi in phis:
            mu_inf[phi.name].append(dW @ Wphi[phi.name])
            mu_rec[phi.name].append(rec(Wphi[phi.name], np.asarray(phi(s.nodes[:, None] + s.t[None, :])) * s.ratio))
        for key in ("I0", "I1", "R0", "R1"):
            out[key].append(rng.standard_normal((p, n + 1)) @ chol[key].T)
        for key, val in (("Z", Z), ("F01", F01), ("F02", F02), ("S1", S1), ("F1", F1), ("F2", F2), ("dW", dW),
                         ("Iinf", Iinf), ("Irec", Irec)):
            out[key].append(val)
        if keep_field:
            out["new"].append(xi_new * s.sf_lag[np.clip(lag, 0, n - 1)])
            out["init"].append(xi_init * s.ratio_mid)
    cat = lambda k: np.concatenate(out[k], axis=0)
    return GaussianDriverSet(
        s, cat("Z"), cat("F01"), cat("F02"), cat("S1"), cat("F1"), cat("F2"), cat("dW"), cat("Iinf"),
        cat("Irec"), cat("I0"), cat("I1"), cat("R0"), cat("R1"),
        {k: np.concatenate(v) for k, v in mu_inf.items()}, {k: np.concatenate(v) for k, v in mu_rec.items()},
        cat("new") if keep_field else None, cat("init") if keep_field else None)


# ---------------------------------------------------------------------------
# solving


@dataclass
class CltPath:
    """Fluctuation paths ``(P, n+1)``."""

    t: np.ndarray
    S: np.ndarray
    F: np.ndarray
    U: np.ndarray
    I: np.ndarray | None = None
    R: np.ndarray | None = None
    mu: dict = field(default_factory=dict)


@njit
def _volterra_linear(S1, D, lam, Sbar, Fbar, dt):
    P, n1 = D.shape
    S = np.zeros((P, n1))
    F = np.zeros((P, n1))
    U = np.zeros((P, n1))
    c = 0.5 * dt
    d = 0.5 * dt * lam[0]
    for p in range(P):
        F[p, 0] = D[p, 0]
        S[p, 0] = -S1[p, 0]
        U[p, 0] = S[p, 0] * Fbar[0] + Sbar[0] * F[p, 0]
    bad = 0
    for m in range(1, n1):
        coef = 1.0 + c * Fbar[m] - d * Sbar[m]
        if coef <= 0.0:
            bad = m
            break
        for p in range(P):
            conv = 0.5 * lam[m] * U[p, 0]
            cum = 0.5 * U[p, 0]
            for j in range(1, m):
                conv += lam[m - j] * U[p, j]
                cum += U[p, j]
            a = -S1[p, m] - dt * cum
            b = D[p, m] + dt * conv
            u = (a * Fbar[m] + Sbar[m] * b) / coef
            U[p, m] = u
            S[p, m] = a - c * u
            F[p, m] = b + d * u
    return S, F, U, bad


def _solve(setup, S1, D):
    S, F, U, bad = _volterra_linear(np.ascontiguousarray(S1), np.ascontiguousarray(D), setup.lam,
                                    setup.Sbar, setup.Fbar, setup.dt)
    if bad:
        raise NumericalError(f"singular node coefficient at t={setup.t[bad]:.6g}; reduce dt")
    return S, F, U


def solve_clt_path(drivers):
    """Solve the linear system for ``(S_hat, F_hat, Upsilon_hat)`` for every driver path."""
    s = drivers.setup
    D = drivers.F01 + drivers.F02 + drivers.F1 + drivers.F2
    S, F, U = _solve(s, drivers.S1, D)
    return CltPath(s.t, S, F, U)


def clt_hat_IR(drivers, path):
    """``I_hat`` (transport form with ``mu_check`` drivers) and ``R_hat`` (with independent ``R_0``, ``R_1``)."""
    s = drivers.setup
    Kc = s.trapz_matrix(s.sf)
    Kf = s.trapz_matrix(1.0 - s.sf)
    I = drivers.Z @ s.ratio + path.U @ Kc + drivers.I_inf + drivers.I_rec
    R = drivers.Z @ (1.0 - s.ratio) + path.U @ Kf + drivers.R0 + drivers.R1
    return I, R


def clt_hat_I01(drivers, path):
    """``I_hat`` in the alternative form driven by the independent ``I_0``, ``I_1`` processes."""
    s = drivers.setup
    return drivers.Z @ s.ratio + path.U @ s.trapz_matrix(s.sf) + drivers.I0 + drivers.I1


def spde_solution_apply(drivers, path, phi, t):
    """``mu_hat_t(phi)`` for every path from the explicit solution formula.

    The ``mu_hat_0`` integral is done by summation by parts against the bridge
    path. ``phi`` must be registered with the setup or the drivers must carry
    the ``W_rec`` field (``keep_field=True``).
    """
    s = drivers.setup
    m = int(round(t / s.dt))
    if abs(s.t[m] - t) > 1e-9 * max(1.0, t):
        raise ValueError("t must be a grid time")
    if not np.isfinite(phi.support) and not np.allclose(phi(np.array([1e3, 1e4])), phi(np.array([1e3, 1e4]))[0]):
        raise ConfigurationError("test function must have compact support or be constant")
    dur = s.law.duration
    psi = np.asarray(phi(s.nodes + s.t[m])) * s.ratio[:, m]
    C = np.cumsum(drivers.Z, axis=1)
    init = C[:, -1] * psi[-1] - C[:, :-1] @ np.diff(psi)
    ages = s.t[m] - s.t[: m + 1]
    trans = path.U[:, : m + 1] @ (s._tw[m] * np.asarray(phi(ages)) * dur.sf(ages))
    agem = s.t[m] - s.mid[:m]
    winf = drivers.dW_inf[:, :m] @ (np.asarray(phi(agem)) * dur.sf(agem))
    if phi.name in drivers.mu_rec:
        rec = drivers.mu_rec[phi.name][:, m]
    elif drivers.rec_new is not None:
        i, j = np.triu_indices(s.n)
        keep = j < m
        i, j = i[keep], j[keep]
        kern = np.asarray(phi(s.t[m] - s.mid[i])) * np.exp(dur.logsf(s.t[m] - s.mid[i]) - dur.logsf((j - i) * s.dt))
        rec = drivers.rec_new[:, i, j] @ kern
        kern0 = (np.asarray(phi(s.nodes + s.t[m]))[:, None] * s.ratio[:, m][:, None] / s.ratio_mid[:, :m])
        rec = rec + np.einsum("pmk,mk->p", drivers.rec_init[:, :, :m], kern0)
    else:
        raise ConfigurationError(f"{phi.name} is not registered and no W_rec field was kept")
    return init + trans + winf + rec


# ---------------------------------------------------------------------------
# coupled construction


def sample_coupled_paths(rng, setup, P, chunk=128):
    """Fluctuation paths from the coupled construction (separable laws only).

    New infections: per cell ``j`` a process ``B_j(a)``, the noise of
    individuals infected in the cell with ``eta > a``, with
    ``Var B_j(a) = Upsilon(s_j) dt F^c(a)``. Initially infected at node ``m``:
    a bridge ``T_m`` in ``r = F^c(a_m + t) / F^c(a_m)`` with variance
    ``I0 w_m r (1 - r)``. The age masses ``Z`` form a discrete Brownian bridge.
    """
    s = setup
    law = s.law
    if not law.separable_law:
        raise ConfigurationError("the coupled construction needs a separable infectivity law")
    n = s.n
    dur = law.duration
    ages = s.mid  # (k - 1/2) dt, k = 1..n
    u = np.concatenate([dur.sf(ages)[::-1], [1.0]])  # increasing survival levels, last = 1
    du = np.diff(np.concatenate([[0.0], u]))
    prof_half = np.asarray(law.profile(ages), dtype=float) * np.ones(n)
    prof0 = np.asarray(law.profile(s.nodes[:, None] + s.t[None, :]), dtype=float) * np.ones_like(s.ratio)
    Kc = s.trapz_matrix(s.sf)
    Kf = s.trapz_matrix(1.0 - s.sf)
    rr = s.ratio  # (M, n+1), decreasing in time from 1
    dr = np.diff(np.concatenate([np.zeros((len(s.nodes), 1)), rr[:, ::-1]], axis=1), axis=1)
    sq_q = np.sqrt(s.Umid * s.dt)
    anti_j = [np.arange(m) for m in range(n + 1)]
    out = {k: [] for k in ("S", "F", "U", "I", "R", "Z")}
    for start in range(0, P, chunk):
        p = min(chunk, P - start)
        Z = _bridge_masses(rng, s.mass, p)
        # per-node bridges in r-time: W at r_n < ... < r_0 = 1, built upward
        inc = rng.standard_normal((p, len(s.nodes), n + 1)) * np.sqrt(np.maximum(dr, 0.0))
        Wr = np.cumsum(inc, axis=2)[:, :, ::-1]  # W(r_k), k = 0..n
        T = (Wr - rr[None] * Wr[:, :, :1]) * np.sqrt(s.mass)[None, :, None]
        # per-cell survival-time Brownian motions: W_j(u) at u = F^c(a_k), then u = 1
        incB = rng.standard_normal((p, n, n + 1)) * np.sqrt(du)
        WB = np.cumsum(incB, axis=2) * sq_q[None, :, None]  # index 0..n-1 -> ages a_n..a_1, index n -> u = 1
        B0 = WB[:, :, n]
        S1 = np.zeros((p, n + 1))
        FB = np.zeros((p, n + 1))
        IB = np.zeros((p, n + 1))
        S1[:, 1:] = np.cumsum(B0, axis=1)
        for m in range(1, n + 1):
            j = anti_j[m]
            k = m - j  # age index (k - 1/2) dt
            vals = WB[:, j, n - k]
            IB[:, m] = vals.sum(axis=1)
            FB[:, m] = vals @ prof_half[k - 1]
        F01 = Z @ s.lam0
        F02 = np.einsum("pmk,mk->pk", T, prof0)
        I0 = T.sum(axis=1)
        S, F, U = _solve(s, S1, F01 + F02 + FB)
        I = Z @ rr + U @ Kc + I0 + IB
        R = Z @ (1.0 - rr) + U @ Kf - I0 + (S1 - IB)
        for key, val in (("S", S), ("F", F), ("U", U), ("I", I), ("R", R), ("Z", Z)):
            out[key].append(val)
    cat = lambda k: np.concatenate(out[k], axis=0)
    return CltPath(s.t, cat("S"), cat("F"), cat("U"), cat("I"), cat("R"))


# ---------------------------------------------------------------------------
# variance identity


@njit
def _rec_density_var(phi2, sf, h, ups, dt, n):
    # int_0^t ds int_0^s da phi(t-s+a)^2 (F^c(t-s+a)/F^c(a))^2 h(a) F^c(a) Ups(s-a), 2-d trapezoid
    # phi2[k] = phi(k dt)^2, sf[k] = F^c(k dt), h[k] = h(k dt); t = n dt
    outer = 0.0
    for i in range(n + 1):
        inner = 0.0
        for k in range(i + 1):
            age_t = n - i + k
            r = sf[age_t] / sf[k]
            val = phi2[age_t] * r * r * h[k] * sf[k] * ups[i - k]
            wk = 0.5 if (k == 0 or k == i) else 1.0
            if i == 0:
                wk = 0.0
            inner += wk * val
        wi = 0.5 if (i == 0 or i == n) else 1.0
        outer += wi * inner * dt
    return outer * dt


def variance_identity_check(lln, phi, t):
    """Both sides of the variance identity at grid time ``t`` of the LLN grid.

    Returns ``(lhs, rhs, relative_gap)`` with
    ``lhs = Var(mu_check_inf) + Var(mu_check_rec)`` and
    ``rhs = Var(mu_hat^0) + Var(mu_hat^1)``, all by trapezoid quadrature on
    the LLN grid (the initial atoms are exact quadrature nodes).
    """
    law = lln.law
    dur = law.duration
    n = lln.index(t)
    dt = lln.dt
    k = np.arange(n + 1) * dt
    sf = dur.sf(k)
    h = np.asarray(dur.hazard(k), dtype=float) * np.ones(n + 1)
    phi2 = np.asarray(phi(k), dtype=float) ** 2 * np.ones(n + 1)
    ups = lln.Upsilon[: n + 1]
    w = trapz_weights(n, dt)
    # s = k dt, age t - s
    var_inf = float(np.sum(w * phi2[::-1] * sf[::-1] ** 2 * ups))
    var_rec_new = _rec_density_var(phi2, sf, h, ups, dt, n)
    a = lln.age_nodes
    mass = lln.age_mass
    rt = dur.ratio(a, t)
    phit2 = np.asarray(phi(a + t), dtype=float) ** 2
    # int_0^t f(a+s)/F^c(a+s)^2 ds  = int_0^t h(a+s)/F^c(a+s) ds, trapezoid in s
    hs = np.asarray(dur.hazard(a[:, None] + k[None, :]), dtype=float) * np.ones((len(a), n + 1))
    inv = np.exp(-dur.logsf(a[:, None] + k[None, :]))
    integ = (hs * inv) @ w
    var_rec_init = float(np.sum(mass * phit2 * (dur.sf(a + t) ** 2) / dur.sf(a) * integ))
    lhs = var_inf + var_rec_new + var_rec_init
    var0 = float(np.sum(mass * phit2 * (rt - rt**2)))
    var1 = float(np.sum(w * phi2[::-1] * sf[::-1] * ups))
    rhs = var0 + var1
    gap = abs(lhs - rhs) / max(abs(rhs), 1e-300)
    return lhs, rhs, gap
