"""Deterministic large-population limit: Volterra solver, limit age measure and PDE checks."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ._jit import njit
from .errors import ConfigurationError, NumericalError


@dataclass(frozen=True)
class Grid:
    """Uniform time grid ``t_n = n dt`` on ``[0, T]``."""

    T: float
    dt: float

    def __post_init__(self):
        if not self.T > 0 or not self.dt > 0:
            raise ConfigurationError("grid horizon and step must be positive")
        n = self.T / self.dt
        if abs(n - round(n)) > 1e-6 * max(1.0, n):
            raise ConfigurationError("T must be an integer multiple of dt")

    @property
    def n(self):
        return int(round(self.T / self.dt))

    @property
    def t(self):
        return np.arange(self.n + 1) * self.dt

    def refine(self, factor):
        return Grid(self.T, self.dt / factor)

    def age_nodes(self, abar):
        """Age nodes ``m dt`` covering ``[0, T + abar]``."""
        return np.arange(int(math.ceil((self.T + abar) / self.dt)) + 1) * self.dt


class TestFunction:
    """A test function ``phi`` together with its derivative."""

    __test__ = False  # not a pytest class

    def __init__(self, name, fn, deriv, support=math.inf):
        self.name = name
        self.fn = fn
        self.deriv = deriv
        self.support = support

    def __call__(self, a):
        return self.fn(np.asarray(a, dtype=float))

    def __repr__(self):
        return f"TestFunction({self.name})"

    @classmethod
    def constant(cls, c=1.0):
        return cls(f"const({c:g})", lambda a: np.full(np.shape(a), c) + 0.0 * a, lambda a: 0.0 * a)

    @classmethod
    def bump(cls, lo, hi):
        """C-infinity bump ``exp(-1 / (1 - x^2))`` rescaled to ``(lo, hi)``."""
        c, r = 0.5 * (lo + hi), 0.5 * (hi - lo)

        def fn(a):
            x = (a - c) / r
            inside = np.abs(x) < 1
            xs = np.where(inside, x, 0.0)
            return np.where(inside, np.exp(-1.0 / (1.0 - xs**2)), 0.0)

        def deriv(a):
            x = (a - c) / r
            inside = np.abs(x) < 1
            xs = np.where(inside, x, 0.0)
            return np.where(inside, np.exp(-1.0 / (1.0 - xs**2)) * (-2.0 * xs / (1.0 - xs**2) ** 2) / r, 0.0)

        return cls(f"bump({lo:g},{hi:g})", fn, deriv, support=hi)

    @classmethod
    def cutoff(cls, L, power=4):
        """``(1 - a/L)_+^power``: C^{power-1} with support ``[0, L]``."""
        def fn(a):
            return np.maximum(0.0, 1.0 - a / L) ** power

        def deriv(a):
            return -power / L * np.maximum(0.0, 1.0 - a / L) ** (power - 1)

        return cls(f"cutoff({L:g},{power})", fn, deriv, support=L)

    @classmethod
    def ramp(cls, L):
        """``(1 - a/L)_+^2``, the C^1 ramp."""
        out = cls.cutoff(L, 2)
        out.name = f"ramp({L:g})"
        return out


# ---------------------------------------------------------------------------
# kernels


@njit
def _node_root(A, B, c, d):
    # Upsilon = (A - c U)(B + d U)  <=>  c d U^2 + (1 - A d + c B) U - A B = 0
    b = 1.0 - A * d + c * B
    ab = A * B
    if b <= 0.0:
        return -1.0
    if c * d == 0.0:
        return ab / b
    return 2.0 * ab / (b + math.sqrt(b * b + 4.0 * c * d * ab))


@njit
def _node_newton(A, B, c, d, u):
    for _ in range(100):
        g = u - (A - c * u) * (B + d * u)
        dg = 1.0 + c * (B + d * u) - d * (A - c * u)
        if dg <= 0.0:
            return -1.0
        step = g / dg
        u -= step
        if abs(step) <= 1e-16 * max(1.0, abs(u)):
            break
    return u


@njit
def volterra_sir(F0, lam, S0, dt, newton, u_init):
    """Forward trapezoid stepping of ``S = S0 - int U``, ``F = F0 + int lam(t-s) U(s) ds``, ``U = S F``."""
    n = F0.shape[0]
    S = np.empty(n)
    F = np.empty(n)
    U = np.empty(n)
    S[0] = S0
    F[0] = F0[0]
    U[0] = S0 * F0[0]
    cum = 0.0  # sum_{j=1}^{m-1} U_j
    c = 0.5 * dt
    d = 0.5 * dt * lam[0]
    for m in range(1, n):
        conv = 0.5 * lam[m] * U[0]
        for j in range(1, m):
            conv += lam[m - j] * U[j]
        A = S0 - dt * (0.5 * U[0] + cum)
        B = F0[m] + dt * conv
        if newton:
            u = _node_newton(A, B, c, d, u_init)
        else:
            u = _node_root(A, B, c, d)
        if u < 0.0 or not math.isfinite(u):
            return S, F, U, m
        U[m] = u
        S[m] = A - c * u
        F[m] = B + d * u
        cum += u
    return S, F, U, 0


@njit
def trapz_convolution(kern, y, dt):
    """``out[n] = trapezoid of int_0^{t_n} kern(t_n - s) y(s) ds`` on the grid."""
    n = y.shape[0]
    out = np.zeros(n)
    for m in range(1, n):
        acc = 0.5 * (kern[m] * y[0] + kern[0] * y[m])
        for j in range(1, m):
            acc += kern[m - j] * y[j]
        out[m] = dt * acc
    return out


def trapz_weights(n, dt):
    w = np.full(n + 1, dt)
    if n == 0:
        return np.zeros(1)
    w[0] = w[-1] = 0.5 * dt
    return w


# ---------------------------------------------------------------------------
# limit paths


@dataclass
class LlnPaths:
    """Grid samples of the deterministic limit plus the data needed to evaluate ``mu_bar_t``."""

    t: np.ndarray
    S: np.ndarray
    F: np.ndarray
    Upsilon: np.ndarray
    I: np.ndarray
    R: np.ndarray
    law: object = None
    init: object = None
    age_nodes: np.ndarray = field(default=None, repr=False)
    age_mass: np.ndarray = field(default=None, repr=False)  # I0 * quadrature weights

    @property
    def dt(self):
        return float(self.t[1] - self.t[0])

    def index(self, t):
        n = int(round(t / self.dt))
        if n < 0 or n >= len(self.t) or abs(self.t[n] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not a grid node")
        return n

    def initial_part(self, t):
        """Transported initial atoms at time ``t``: ages ``a_m + t`` and masses ``I0 w_m F^c(a_m+t)/F^c(a_m)``."""
        ratio = self.law.duration.ratio(self.age_nodes, t)
        return self.age_nodes + t, self.age_mass * ratio

    def density(self, t, ages):
        """Absolutely continuous part ``F^c(a) Upsilon(t - a)`` for ``a < t``."""
        ages = np.asarray(ages, dtype=float)
        ups = np.interp(t - ages, self.t, self.Upsilon)
        return np.where(ages < t, self.law.duration.sf(ages) * ups, 0.0)

    def measure_apply(self, t, phi):
        """``mu_bar_t(phi)`` at grid time ``t``: exact sum over transported atoms plus a trapezoid integral."""
        n = self.index(t)
        tn = self.t[n]
        ages, mass = self.initial_part(tn)
        first = float(np.sum(np.asarray(phi(ages), dtype=float) * mass))
        if n == 0:
            return first
        s = self.t[: n + 1]
        a = tn - s
        integrand = np.asarray(phi(a), dtype=float) * self.law.duration.sf(a) * self.Upsilon[: n + 1]
        return first + float(np.dot(trapz_weights(n, self.dt), integrand))

    def subsample(self, every):
        sl = slice(None, None, every)
        return LlnPaths(self.t[sl], self.S[sl], self.F[sl], self.Upsilon[sl], self.I[sl], self.R[sl],
                        self.law, self.init, self.age_nodes, self.age_mass)

    def on_grid(self, t):
        """Paths linearly interpolated onto the times ``t``."""
        t = np.asarray(t, dtype=float)
        f = lambda x: np.interp(t, self.t, x)
        return LlnPaths(t, f(self.S), f(self.F), f(self.Upsilon), f(self.I), f(self.R),
                        self.law, self.init, self.age_nodes, self.age_mass)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "Sbar", "Fbar", "Upsbar", "Ibar", "Rbar"])
            for row in zip(self.t, self.S, self.F, self.Upsilon, self.I, self.R):
                w.writerow([repr(float(x)) for x in row])


def initial_quadrature(law, init, dt, age_step=None):
    """Nodes and ``I0``-scaled masses discretizing ``mu_bar_0``."""
    age_law = init.effective_age_law(law.duration)
    step = age_step if age_step is not None else max(dt, age_law.abar / 2000)
    nodes, w = age_law.quadrature(step)
    if np.any(law.duration.sf(nodes) <= 0):
        raise ConfigurationError("F^c vanishes inside the support of the initial age law")
    return nodes, init.I0 * w


def _initial_terms(law, nodes, mass, t, chunk=64):
    F0 = np.zeros(len(t))
    I0 = np.zeros(len(t))
    for k in range(0, len(nodes), chunk):
        a = nodes[k:k + chunk, None]
        m = mass[k:k + chunk, None]
        F0 += np.sum(m * law.residual_mean(a, t[None, :]), axis=0)
        I0 += np.sum(m * law.duration.ratio(a, t[None, :]), axis=0)
    return F0, I0


def solve_lln(law, init, grid, age_step=None, node_solver="root", initial_iterate=0.0):
    """Solve the limit system on ``grid``.

    The trapezoid endpoint makes the node equation for ``Upsilon(t_n)``
    quadratic; ``node_solver="root"`` takes its positive root in closed form,
    ``"newton"`` iterates from ``initial_iterate``.
    """
    t = grid.t
    dt = grid.dt
    nodes, mass = initial_quadrature(law, init, dt, age_step)
    F0, Iinit = _initial_terms(law, nodes, mass, t)
    lam = np.asarray(law.mean(t), dtype=float) * np.ones_like(t)
    S, F, U, bad = volterra_sir(F0, lam, float(init.S0), dt, node_solver == "newton", float(initial_iterate))
    if bad:
        raise NumericalError(f"node equation has no admissible root at t={t[bad]:.6g}; reduce dt")
    sf = law.duration.sf(t)
    I = Iinit + trapz_convolution(sf, U, dt)
    R = init.R0 + (init.I0 - Iinit) + trapz_convolution(1.0 - sf, U, dt)
    return LlnPaths(t, S, F, U, I, R, law, init, nodes, mass)


def lln_measure_apply(paths, t, phi):
    return paths.measure_apply(t, phi)


def weak_form_residual(paths, phi, t):
    """``|d/dt mu_bar_t(phi) - phi(0) Upsilon(t) - mu_bar_t(phi' - h phi)|`` with a central difference."""
    n = paths.index(t)
    if n == 0 or n == len(paths.t) - 1:
        raise ValueError("central difference needs an interior grid time")
    dt = paths.dt
    h = paths.law.duration.hazard
    deriv = (paths.measure_apply(paths.t[n + 1], phi) - paths.measure_apply(paths.t[n - 1], phi)) / (2 * dt)
    gen = lambda a: np.asarray(phi.deriv(a)) - h(a) * np.asarray(phi(a))
    rhs = float(phi(0.0)) * paths.Upsilon[n] + paths.measure_apply(paths.t[n], gen)
    return abs(deriv - rhs)


def markovian_ode_oracle(beta, gamma, init, grid, refine=10):
    """Classical SIR ODE ``S' = -beta S I``, ``I' = beta S I - gamma I`` by RK4 at ``dt / refine``."""
    h = grid.dt / refine

    def f(s, i):
        inf = beta * s * i
        return -inf, inf - gamma * i

    n = grid.n
    S = np.empty(n + 1)
    I = np.empty(n + 1)
    s, i = float(init.S0), float(init.I0)
    S[0], I[0] = s, i
    for m in range(1, n + 1):
        for _ in range(refine):
            k1 = f(s, i)
            k2 = f(s + 0.5 * h * k1[0], i + 0.5 * h * k1[1])
            k3 = f(s + 0.5 * h * k2[0], i + 0.5 * h * k2[1])
            k4 = f(s + h * k3[0], i + h * k3[1])
            s += h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            i += h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        S[m], I[m] = s, i
    return S, I, 1.0 - S - I


# ---------------------------------------------------------------------------
# generic linear transport PDE  d_t u + d_a u = -h u + g,  u(t, 0) = k(t)

_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


def _gauss(fn, lo, hi):
    """Gauss-Legendre integral of a vectorized ``fn`` over ``[lo, hi]`` (broadcast over leading axes)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    mid = 0.5 * (hi + lo)
    half = 0.5 * (hi - lo)
    x = mid[..., None] + half[..., None] * _GL_X
    return half * np.sum(_GL_W * fn(x), axis=-1)


class GenericTransport:
    """Explicit solution of the linear transport equation with inflow ``k`` and source ``g``."""

    def __init__(self, duration, u0, k, g):
        self.duration = duration
        self.u0 = u0
        self.k = k
        self.g = g

    def __call__(self, t, a):
        a = np.asarray(a, dtype=float)
        logsf = self.duration.logsf
        older = a > t
        a0 = np.where(older, a - t, 0.0)
        first = np.where(older, np.exp(logsf(a) - logsf(a0)) * self.u0(a0), 0.0)
        tk = np.where(older, 0.0, t - a)
        second = np.where(older, 0.0, np.exp(logsf(a)) * self.k(tk))
        lo = np.maximum(t - a, 0.0)
        third = _gauss(lambda s: np.exp(logsf(a[..., None]) - logsf(a[..., None] - t + s))
                       * self.g(s, a[..., None] - t + s), lo, np.full(a.shape, float(t)))
        return first + second + third

    def apply(self, t, phi, upper, pieces=64):
        """``<u_t, phi>`` by composite Gauss-Legendre on ``[0, upper]``, split at the characteristic ``a = t``."""
        cuts = [0.0, float(t), float(upper)] if 0 < t < upper else [0.0, float(upper)]
        total = 0.0
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            edges = np.linspace(lo, hi, pieces + 1)
            total += float(np.sum(_gauss(lambda a: np.asarray(phi(a)) * self(t, a), edges[:-1], edges[1:])))
        return total

    def weak_residual(self, phi, t, dt, upper):
        """Central-difference residual of the weak form at time ``t``."""
        h = self.duration.hazard
        deriv = (self.apply(t + dt, phi, upper) - self.apply(t - dt, phi, upper)) / (2 * dt)
        gen = lambda a: np.asarray(phi.deriv(a)) - h(a) * np.asarray(phi(a))
        src = lambda a: np.asarray(phi(a)) * self.g(t, a)
        edges = np.linspace(0.0, upper, 65)
        g_term = float(np.sum(_gauss(src, edges[:-1], edges[1:])))
        rhs = self.apply(t, gen, upper) + float(phi(0.0)) * float(self.k(t)) + g_term
        return abs(deriv - rhs)


def manufactured_transport():
    """Manufactured data: gamma(2, 1) durations, ``u0 = e^{-a}``, ``k = 1 + sin(t)/2``, ``g = 0.3 e^{-a} cos t``."""
    from .model import DurationDistribution

    return GenericTransport(DurationDistribution.gamma(2.0, 1.0), lambda a: np.exp(-a),
                            lambda t: 1.0 + 0.5 * np.sin(t), lambda s, a: 0.3 * np.exp(-a) * np.cos(s))
