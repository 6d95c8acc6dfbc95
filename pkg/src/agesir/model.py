"""Infectious-period laws, random infectivity functions and initial conditions.

Every sampler takes an explicit :class:`numpy.random.Generator`; nothing in
this module touches global random state.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize, special, stats

from .errors import ConfigurationError, HorizonCapError

DEBUG = os.environ.get("AGESIR_DEBUG", "0") == "1"

# hazard kinds understood by the simulation kernels
HAZ_CONST, HAZ_ERLANG, HAZ_LOGNORMAL, HAZ_PIECEWISE, HAZ_TABLE = range(5)


class DurationDistribution:
    """Law ``F`` of the infectious period, with density ``f`` and hazard ``h = f / F^c``.

    Use the constructors :meth:`exponential`, :meth:`gamma`, :meth:`lognormal`,
    :meth:`piecewise_linear` and :meth:`near_deterministic`.
    """

    def __init__(self, name, params, dist=None, knots=None, cdf_values=None, hazard_bound=None):
        self.name = name
        self.params = dict(params)
        self._dist = dist
        self._knots = None if knots is None else np.asarray(knots, dtype=float)
        self._cdf_values = None if cdf_values is None else np.asarray(cdf_values, dtype=float)
        self.hazard_bound = hazard_bound

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items() if k not in ("knots", "cdf"))
        return f"DurationDistribution.{self.name}({args})"

    # -- constructors -----------------------------------------------------
    @classmethod
    def exponential(cls, rate, hazard_bound=None):
        if rate <= 0:
            raise ConfigurationError("exponential rate must be positive")
        return cls("exponential", {"rate": float(rate)}, stats.expon(scale=1.0 / rate),
                   hazard_bound=hazard_bound)

    @classmethod
    def gamma(cls, shape, rate, hazard_bound=None):
        # shape >= 1 keeps h bounded near zero
        if shape < 1:
            raise ConfigurationError("gamma shape must be >= 1 so the hazard stays bounded")
        if rate <= 0:
            raise ConfigurationError("gamma rate must be positive")
        return cls("gamma", {"shape": float(shape), "rate": float(rate)},
                   stats.gamma(shape, scale=1.0 / rate), hazard_bound=hazard_bound)

    @classmethod
    def lognormal(cls, mu, sigma, hazard_bound=None):
        if sigma <= 0:
            raise ConfigurationError("lognormal sigma must be positive")
        return cls("lognormal", {"mu": float(mu), "sigma": float(sigma)},
                   stats.lognorm(sigma, scale=math.exp(mu)), hazard_bound=hazard_bound)

    @classmethod
    def near_deterministic(cls, mean, cv=0.05, hazard_bound=None):
        """Duration concentrated near ``mean``: a gamma law with coefficient of variation ``cv``."""
        shape = 1.0 / cv**2
        out = cls.gamma(shape, shape / mean, hazard_bound=hazard_bound)
        out.name = "near_deterministic"
        out.params = {"mean": float(mean), "cv": float(cv), "shape": shape, "rate": shape / mean}
        return out

    @classmethod
    def piecewise_linear(cls, knots, cdf, hazard_bound=None):
        """Continuous CDF interpolating ``(knots[i], cdf[i])`` linearly; needs ``cdf[0] == 0`` at 0 and ends at 1."""
        knots = np.asarray(knots, dtype=float)
        cdf = np.asarray(cdf, dtype=float)
        if knots.ndim != 1 or knots.shape != cdf.shape or len(knots) < 2:
            raise ConfigurationError("knots and cdf must be 1-d arrays of equal length >= 2")
        if knots[0] != 0.0 or cdf[0] != 0.0 or abs(cdf[-1] - 1.0) > 1e-12:
            raise ConfigurationError("piecewise-linear CDF must start at (0, 0) and end at 1")
        if np.any(np.diff(knots) <= 0) or np.any(np.diff(cdf) < 0):
            raise ConfigurationError("knots must increase and cdf must be non-decreasing")
        cdf = cdf.copy()
        cdf[-1] = 1.0
        return cls("piecewise_linear", {"knots": knots.tolist(), "cdf": cdf.tolist()},
                   knots=knots, cdf_values=cdf, hazard_bound=hazard_bound)

    # -- evaluation -------------------------------------------------------
    def _eval(self, method, t):
        # large inputs (ages on a lattice) repeat values; scipy's special functions are the cost
        if t.size < 4096:
            return getattr(self._dist, method)(t)
        u, inv = np.unique(np.round(t, 12), return_inverse=True)
        return getattr(self._dist, method)(u)[inv].reshape(t.shape)

    @property
    def is_exponential(self):
        return self.name == "exponential"

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        if self._dist is not None:
            return self._eval("cdf", t)
        return np.interp(t, self._knots, self._cdf_values, left=0.0, right=1.0)

    def sf(self, t):
        t = np.asarray(t, dtype=float)
        if self._dist is not None:
            return self._eval("sf", t)
        return 1.0 - self.cdf(t)

    def logsf(self, t):
        t = np.asarray(t, dtype=float)
        if self.is_exponential:
            return -self.params["rate"] * np.maximum(t, 0.0)
        if self._dist is not None:
            return self._eval("logsf", t)
        with np.errstate(divide="ignore"):
            return np.log(self.sf(t))

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        if self._dist is not None:
            return self._eval("pdf", t)
        slopes = np.diff(self._cdf_values) / np.diff(self._knots)
        idx = np.searchsorted(self._knots, t, side="right") - 1
        inside = (idx >= 0) & (idx < len(slopes))
        return np.where(inside, slopes[np.clip(idx, 0, len(slopes) - 1)], 0.0)

    def hazard(self, t):
        t = np.asarray(t, dtype=float)
        if self.is_exponential:
            return np.full(t.shape, self.params["rate"]) if t.ndim else np.float64(self.params["rate"])
        if self._dist is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.exp(self._eval("logpdf", t) - self._eval("logsf", t))
            return np.where(t < 0, 0.0, out)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.sf(t) > 0, self.pdf(t) / self.sf(t), np.inf)

    def ratio(self, age, t):
        """Residual survival ``F^c(age + t) / F^c(age)``, computed in log space."""
        age = np.asarray(age, dtype=float)
        return np.exp(self.logsf(age + t) - self.logsf(age))

    def isf(self, q):
        q = np.asarray(q, dtype=float)
        if self._dist is not None:
            return self._dist.isf(q)
        return self._inverse_cdf(1.0 - q)

    def _inverse_cdf(self, p):
        # right-most knot on flat pieces is irrelevant (probability zero)
        return np.interp(p, self._cdf_values, self._knots)

    @property
    def mean(self):
        if self._dist is not None:
            return float(self._dist.mean())
        k, c = self._knots, self._cdf_values
        return float(np.sum(np.diff(c) * 0.5 * (k[1:] + k[:-1])))

    # -- sampling ---------------------------------------------------------
    def sample(self, rng, size):
        p = self.params
        if self.name == "exponential":
            return rng.exponential(1.0 / p["rate"], size)
        if self.name in ("gamma", "near_deterministic"):
            return rng.gamma(p["shape"], 1.0 / p["rate"], size)
        if self.name == "lognormal":
            return rng.lognormal(p["mu"], p["sigma"], size)
        return self._inverse_cdf(rng.random(size))

    def sample_residual(self, rng, ages):
        """Draw ``eta`` from ``F`` conditioned on ``eta > age`` (inverse CDF of the truncated law)."""
        ages = np.asarray(ages, dtype=float)
        if self.is_exponential:
            return ages + rng.exponential(1.0 / self.params["rate"], ages.shape)
        u = rng.random(ages.shape)
        target = self.logsf(ages) + np.log1p(-u)
        if np.any(~np.isfinite(self.logsf(ages))):
            raise ConfigurationError("cannot condition on eta > age where F^c(age) = 0")
        eta = self.isf(np.exp(target))
        return np.maximum(eta, np.nextafter(ages, np.inf))

    # -- bounds and kernel descriptions -----------------------------------
    def sup_hazard(self, horizon):
        """An upper bound of ``h`` on ``[0, horizon]``; the user-supplied bound wins when present."""
        if self.hazard_bound is not None:
            return float(self.hazard_bound)
        p = self.params
        if self.is_exponential:
            return p["rate"]
        if self.name in ("gamma", "near_deterministic"):
            # hazard increases to the rate when shape >= 1
            return p["rate"]
        if self.name == "lognormal":
            res = optimize.minimize_scalar(lambda x: -float(self.hazard(x)), bounds=(1e-9, horizon),
                                           method="bounded", options={"xatol": 1e-10})
            grid = np.linspace(1e-9, horizon, 4001)
            return float(max(-res.fun, np.max(self.hazard(grid)))) * (1.0 + 1e-6)
        k, c = self._knots, self._cdf_values
        best = 0.0
        for i in range(len(k) - 1):
            if k[i] >= horizon:
                break
            end = min(k[i + 1], horizon)
            surv = 1.0 - float(np.interp(end, k, c))
            slope = (c[i + 1] - c[i]) / (k[i + 1] - k[i])
            if slope > 0 and surv <= 0:
                raise ConfigurationError("hazard is unbounded on the horizon (F reaches 1)")
            if slope > 0:
                best = max(best, slope / surv)
        return best

    def kernel_spec(self, horizon, table_step=1e-3):
        """``(kind, params, table)`` describing ``h`` to the simulation kernels."""
        p = self.params
        if self.is_exponential:
            return HAZ_CONST, np.array([p["rate"]]), np.zeros(1)
        if self.name in ("gamma", "near_deterministic") and float(p["shape"]).is_integer():
            return HAZ_ERLANG, np.array([p["shape"], p["rate"]]), np.zeros(1)
        if self.name == "lognormal":
            return HAZ_LOGNORMAL, np.array([p["mu"], p["sigma"]]), np.zeros(1)
        if self.name == "piecewise_linear":
            return HAZ_PIECEWISE, self._knots.copy(), self._cdf_values.copy()
        n = int(math.ceil(horizon / table_step)) + 2
        grid = np.arange(n) * table_step
        return HAZ_TABLE, np.array([table_step]), np.asarray(self.hazard(grid), dtype=float)


class Profile:
    """Deterministic infectivity shape ``lambda~(a)``: constant, or linear interpolation of a table."""

    def __init__(self, value=None, step=None, table=None):
        self.value = None if value is None else float(value)
        self.step = step
        self.table = None if table is None else np.asarray(table, dtype=float)

    @classmethod
    def constant(cls, value):
        return cls(value=value)

    @classmethod
    def tabulate(cls, fn, horizon, step=1e-3):
        n = int(math.ceil(horizon / step)) + 1
        grid = np.arange(n) * step
        return cls(step=step, table=np.asarray(fn(grid), dtype=float))

    @property
    def is_constant(self):
        return self.value is not None

    @property
    def sup(self):
        return self.value if self.is_constant else float(self.table.max())

    def __call__(self, a):
        a = np.asarray(a, dtype=float)
        if self.is_constant:
            return np.full(a.shape, self.value) if a.ndim else np.float64(self.value)
        grid = np.arange(len(self.table)) * self.step
        return np.interp(a, grid, self.table)


@dataclass
class InfectivityRealization:
    """One infectivity function ``lambda(a) = profile(a) * levels[l]`` on ``[breaks[l], breaks[l+1])``."""

    breaks: np.ndarray
    levels: np.ndarray
    profile: Profile

    @property
    def eta(self):
        return float(self.breaks[-1])

    def __call__(self, a):
        a = np.asarray(a, dtype=float)
        idx = np.searchsorted(self.breaks, a, side="right") - 1
        inside = (idx >= 0) & (idx < len(self.levels))
        lev = np.where(inside, self.levels[np.clip(idx, 0, len(self.levels) - 1)], 0.0)
        return lev * self.profile(a)

    def shifted(self, age):
        """Infectivity seen from time 0 by an individual of current age ``age``."""
        return InfectivityRealization(self.breaks - age, self.levels, self.profile)


class MomentCache:
    """Monte Carlo estimates of ``lambda_bar`` and ``v`` on a uniform age grid, linearly interpolated."""

    def __init__(self, step, mean, cov, n_samples):
        self.step = step
        self.mean_values = mean
        self.cov_values = cov
        self.n_samples = n_samples

    @property
    def horizon(self):
        return self.step * (len(self.mean_values) - 1)

    def mean(self, t):
        grid = np.arange(len(self.mean_values)) * self.step
        return np.interp(t, grid, self.mean_values, right=0.0)

    def cov(self, t, s):
        t, s = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
        n = len(self.mean_values)
        x = np.clip(t / self.step, 0, n - 1)
        y = np.clip(s / self.step, 0, n - 1)
        i0 = np.minimum(np.floor(x).astype(int), n - 2)
        j0 = np.minimum(np.floor(y).astype(int), n - 2)
        fx, fy = x - i0, y - j0
        c = self.cov_values
        out = ((1 - fx) * (1 - fy) * c[i0, j0] + fx * (1 - fy) * c[i0 + 1, j0]
               + (1 - fx) * fy * c[i0, j0 + 1] + fx * fy * c[i0 + 1, j0 + 1])
        beyond = (t > self.horizon) | (s > self.horizon)
        return np.where(beyond, 0.0, out)


PieceSampler = Callable[[np.random.Generator, np.ndarray], "tuple[np.ndarray, np.ndarray]"]


@dataclass
class InfectivityLaw:
    """Law of the random infectivity function.

    Realizations are ``lambda(a) = profile(a) * levels[l]`` for ``a`` in
    ``[breaks[l], breaks[l+1])`` with ``breaks[0] = 0`` and ``breaks[-1] = eta ~ F``.
    The pieces are drawn conditionally on ``eta`` by ``piece_sampler``.
    """

    duration: DurationDistribution
    profile: Profile
    piece_count: int
    lam_star: float
    kind: str = "separable"
    piece_sampler: PieceSampler | None = None
    eta_cap: float = math.inf
    mc_samples: int = 100_000
    metadata: dict = field(default_factory=dict)
    cache: MomentCache | None = None

    @classmethod
    def indicator(cls, beta, duration, eta_cap=math.inf):
        """``lambda(a) = beta * 1{a < eta}``."""
        return cls(duration, Profile.constant(beta), 1, float(beta), "indicator", eta_cap=eta_cap)

    @classmethod
    def separable(cls, profile_fn, duration, horizon, step=1e-3, eta_cap=math.inf):
        """``lambda(a) = profile(a) * 1{a < eta}`` with a deterministic profile tabulated up to ``horizon``."""
        prof = Profile.tabulate(profile_fn, horizon, step)
        if np.any(prof.table < 0):
            raise ConfigurationError("infectivity profile must be non-negative")
        return cls(duration, prof, 1, prof.sup, "separable", eta_cap=eta_cap)

    @classmethod
    def two_phase(cls, duration, latent_fraction=(0.2, 0.5), level=(0.2, 0.6), eta_cap=math.inf):
        """Non-separable law: silent for ``U * eta`` then infectious at a random level ``X``.

        ``U ~ Uniform(latent_fraction)`` and ``X ~ Uniform(level)``, both independent of ``eta``.
        """
        lo, hi = map(float, latent_fraction)
        xlo, xhi = map(float, level)
        if not (0.0 <= lo <= hi < 1.0) or not (0.0 < xlo <= xhi):
            raise ConfigurationError("two_phase needs 0 <= latent fractions < 1 and positive levels")

        def sampler(rng, eta):
            n = eta.shape[0]
            u = lo + (hi - lo) * rng.random(n)
            x = xlo + (xhi - xlo) * rng.random(n)
            breaks = np.column_stack([np.zeros(n), u * eta, eta])
            levels = np.column_stack([np.zeros(n), x])
            return breaks, levels

        return cls(duration, Profile.constant(1.0), 2, xhi, "two_phase", piece_sampler=sampler,
                   eta_cap=eta_cap, metadata={"latent_fraction": (lo, hi), "level": (xlo, xhi)})

    @property
    def separable_law(self):
        return self.kind in ("indicator", "separable")

    @property
    def constant_while_infectious(self):
        """True when ``lambda = c * 1{a < eta}``: the aggregate force is then ``c`` times a count."""
        return self.piece_count == 1 and self.profile.is_constant

    # -- sampling ---------------------------------------------------------
    def sample_pieces(self, rng, eta):
        eta = np.asarray(eta, dtype=float)
        n = eta.shape[0]
        if self.piece_sampler is None:
            breaks = np.column_stack([np.zeros(n), eta])
            levels = np.ones((n, 1))
        else:
            breaks, levels = self.piece_sampler(rng, eta)
        if DEBUG:
            check_realizations(self, breaks, levels)
        return breaks, levels

    def sample_batch(self, rng, n):
        """``n`` i.i.d. realizations as ``(eta, breaks, levels)`` arrays."""
        eta = self.duration.sample(rng, n)
        if n and eta.max() > self.eta_cap:
            raise HorizonCapError(f"sampled eta={eta.max():.6g} exceeds the hard cap {self.eta_cap}")
        breaks, levels = self.sample_pieces(rng, eta)
        return eta, breaks, levels

    def evaluate(self, breaks, levels, ages):
        """Evaluate many realizations (rows) at ``ages`` (broadcast against rows)."""
        ages = np.asarray(ages, dtype=float)
        out = np.zeros(np.broadcast_shapes(breaks.shape[:1] + (1,), ages.shape))
        for l in range(levels.shape[1]):
            inside = (ages >= breaks[:, l:l + 1]) & (ages < breaks[:, l + 1:l + 2])
            out += np.where(inside, levels[:, l:l + 1], 0.0)
        return out * self.profile(ages)

    # -- moments ----------------------------------------------------------
    def build_cache(self, horizon, step=0.05, n_samples=None, rng=None, chunk=10_000):
        """Monte Carlo cache of the mean and covariance on ``[0, horizon]``."""
        n_samples = n_samples or self.mc_samples
        rng = np.random.default_rng(0) if rng is None else rng
        grid = np.arange(int(math.ceil(horizon / step)) + 1) * step
        s1 = np.zeros(len(grid))
        s2 = np.zeros((len(grid), len(grid)))
        done = 0
        while done < n_samples:
            m = min(chunk, n_samples - done)
            _, b, l = self.sample_batch(rng, m)
            x = self.evaluate(b, l, grid[None, :])
            s1 += x.sum(axis=0)
            s2 += x.T @ x
            done += m
        mean = s1 / n_samples
        cov = s2 / n_samples - np.outer(mean, mean)
        self.cache = MomentCache(step, mean, cov, n_samples)
        return self.cache

    def _need_cache(self, t):
        tmax = float(np.max(t)) if np.size(t) else 0.0
        if self.cache is None or self.cache.horizon < tmax:
            horizon = max(tmax, float(self.duration.isf(1e-6)))
            self.build_cache(horizon)
        return self.cache

    def mean(self, t):
        t = np.asarray(t, dtype=float)
        if self.separable_law:
            return self.profile(t) * self.duration.sf(t)
        return self._need_cache(t).mean(t)

    def covariance(self, t, s):
        t, s = np.asarray(t, dtype=float), np.asarray(s, dtype=float)
        if self.separable_law:
            sf = self.duration.sf
            return self.profile(t) * self.profile(s) * (sf(np.maximum(t, s)) - sf(t) * sf(s))
        return self._need_cache(np.maximum(t, s)).cov(t, s)

    def residual_mean(self, age, t):
        """``E[lambda(age + t) | eta > age]`` (``lambda > 0`` forces ``eta > age``)."""
        age = np.asarray(age, dtype=float)
        if self.separable_law:
            return self.profile(age + t) * self.duration.ratio(age, t)
        return self.mean(age + t) / self.duration.sf(age)

    def residual_covariance(self, age, t, s):
        """``Cov(lambda(age + t), lambda(age + s) | eta > age)``."""
        age = np.asarray(age, dtype=float)
        if self.separable_law:
            r = self.duration.ratio
            return (self.profile(age + t) * self.profile(age + s)
                    * (r(age, np.maximum(t, s)) - r(age, t) * r(age, s)))
        sf = self.duration.sf(age)
        mt, ms = self.mean(age + t), self.mean(age + s)
        return (self.covariance(age + t, age + s) + mt * ms) / sf - mt * ms / sf**2


def check_realizations(law, breaks, levels):
    """Assert the structural invariants of sampled realizations."""
    eta = breaks[:, -1]
    if np.any(np.diff(breaks, axis=1) < 0) or np.any(breaks[:, 0] != 0):
        raise AssertionError("breakpoints must start at 0 and be non-decreasing")
    if np.any(levels < 0) or np.any(levels * law.profile.sup > law.lam_star * (1 + 1e-12)):
        raise AssertionError("realization exceeds lam_star")
    if np.any(eta <= 0):
        raise AssertionError("eta must be positive")


def sample_infectivity(rng, law):
    """Draw one infectivity realization."""
    _, breaks, levels = law.sample_batch(rng, 1)
    return InfectivityRealization(breaks[0], levels[0], law.profile)


def mean_infectivity(law, t):
    return law.mean(t)


def infectivity_covariance(law, t, s):
    return law.covariance(t, s)


# ---------------------------------------------------------------------------
# initial condition


class AgeLaw:
    """Probability law of the infection ages at time 0, supported on ``[0, abar]``."""

    def __init__(self, kind, abar, cdf_knots=None, cdf_values=None, atoms=None, weights=None,
                 source=None):
        self.kind = kind
        self.abar = float(abar)
        self._knots = cdf_knots
        self._cdf = cdf_values
        self.atoms = atoms
        self.weights = weights
        self.source = source

    @classmethod
    def uniform(cls, abar):
        if abar <= 0:
            raise ConfigurationError("abar must be positive")
        return cls("uniform", abar)

    @classmethod
    def density(cls, g0, abar, resolution=4096):
        knots = np.linspace(0.0, abar, resolution + 1)
        vals = np.asarray(g0(knots), dtype=float)
        if np.any(vals < 0):
            raise ConfigurationError("age density must be non-negative")
        cdf = integrate.cumulative_trapezoid(vals, knots, initial=0.0)
        if cdf[-1] <= 0:
            raise ConfigurationError("age density has zero mass")
        return cls("density", abar, knots, cdf / cdf[-1])

    @classmethod
    def point_masses(cls, ages, weights):
        ages = np.asarray(ages, dtype=float)
        w = np.asarray(weights, dtype=float)
        if np.any(ages <= 0):
            raise ConfigurationError("age atoms must be positive (no mass at age 0)")
        order = np.argsort(ages, kind="stable")
        return cls("atoms", float(ages.max()), atoms=ages[order], weights=w[order] / w.sum())

    @classmethod
    def paper_uniform(cls, duration, abar, resolution=2048):
        """Law of ``min(U * eta, abar)``: density ``int_a^inf f(e)/e de`` on ``(0, abar)`` plus an atom at ``abar``."""
        knots = np.linspace(0.0, abar, resolution + 1)
        # P(U eta <= a) = F(a) + a * int_a^inf f(e)/e de
        tail = np.array([integrate.quad(lambda e: float(duration.pdf(e)) / e, a, np.inf, limit=200)[0]
                         if a > 0 else np.inf for a in knots])
        cdf = np.where(knots > 0, duration.cdf(knots) + knots * np.where(np.isfinite(tail), tail, 0.0), 0.0)
        return cls("paper_uniform", abar, knots, np.minimum(cdf, 1.0), source=duration)

    def cdf(self, a):
        a = np.asarray(a, dtype=float)
        if self.kind == "uniform":
            return np.clip(a / self.abar, 0.0, 1.0)
        if self.kind == "atoms":
            cum = np.concatenate([[0.0], np.cumsum(self.weights)])
            return cum[np.searchsorted(self.atoms, a, side="right")]
        out = np.interp(a, self._knots, self._cdf)
        return np.where(a >= self.abar, 1.0, out)

    def sample(self, rng, n):
        if self.kind == "uniform":
            u = rng.random(n)
            return self.abar * (1.0 - u)  # in (0, abar]
        if self.kind == "atoms":
            idx = np.searchsorted(np.cumsum(self.weights), rng.random(n), side="right")
            return self.atoms[np.minimum(idx, len(self.atoms) - 1)]
        if self.kind == "paper_uniform":
            u = rng.random(n)
            eta = self.source.sample(rng, n)
            return np.minimum(u * eta, self.abar)
        u = rng.random(n)
        return np.interp(u, self._cdf, self._knots)

    def quadrature(self, step):
        """Nodes and weights integrating against the law: cell midpoints carrying exact cell masses."""
        if self.kind == "atoms":
            return self.atoms.copy(), self.weights.copy()
        n = max(1, int(math.ceil(self.abar / step - 1e-9)))
        edges = np.linspace(0.0, self.abar, n + 1)
        cum = self.cdf(edges)
        if self.kind == "paper_uniform":
            below = np.interp(edges, self._knots, self._cdf)
            w = np.diff(below)
            atom = 1.0 - below[-1]
            return (np.concatenate([0.5 * (edges[1:] + edges[:-1]), [self.abar]]),
                    np.concatenate([w, [atom]]))
        return 0.5 * (edges[1:] + edges[:-1]), np.diff(cum)


@dataclass
class InitialCondition:
    """Initial fractions ``S(0), I(0), R(0)`` and the law of the initial infection ages."""

    S0: float
    I0: float
    R0: float
    age_law: AgeLaw
    coupling_mode: str = "residual"

    def __post_init__(self):
        if min(self.S0, self.I0, self.R0) < 0 or abs(self.S0 + self.I0 + self.R0 - 1.0) > 1e-12:
            raise ConfigurationError("S0 + I0 + R0 must equal 1 with non-negative entries")
        if not 0.0 < self.I0 < 1.0:
            raise ConfigurationError("I0 must lie in (0, 1)")
        if self.coupling_mode not in ("residual", "paper-uniform"):
            raise ConfigurationError(f"unknown coupling mode {self.coupling_mode!r}")

    @property
    def abar(self):
        return self.age_law.abar

    def counts(self, N):
        """Integer parts: ``S = floor(N S0)``, ``I = floor(N I0)``, ``R = N - S - I``."""
        S = int(math.floor(N * self.S0 + 1e-9))
        I = int(math.floor(N * self.I0 + 1e-9))
        return S, I, N - S - I

    def effective_age_law(self, duration):
        """Age law implied by the coupling mode (``paper-uniform`` ages come from ``min(U eta, abar)``)."""
        if self.coupling_mode == "paper-uniform":
            return AgeLaw.paper_uniform(duration, self.abar)
        return self.age_law


@dataclass
class InitialIndividual:
    age: float
    eta0: float
    realization: InfectivityRealization  # in the individual's own infection-age coordinates


def sample_initial_batch(rng, init, law, n):
    """``n`` initially infected individuals as ``(ages, eta0, breaks, levels)``.

    ``breaks`` are in infection-age coordinates, so the individual's infectivity at
    time ``t`` is the realization evaluated at ``age + t``.
    """
    duration = law.duration
    if init.coupling_mode == "residual":
        if duration.sf(init.abar) <= 0:
            raise ConfigurationError("residual coupling needs F^c(abar) > 0")
        ages = init.age_law.sample(rng, n)
        eta = duration.sample_residual(rng, ages)
    else:
        eta = duration.sample(rng, n)
        u = rng.random(n)
        ages = np.minimum(u * eta, init.abar)
    if n and eta.max() > law.eta_cap:
        raise HorizonCapError(f"sampled eta={eta.max():.6g} exceeds the hard cap {law.eta_cap}")
    breaks, levels = law.sample_pieces(rng, eta)
    return ages, eta - ages, breaks, levels


def sample_initial_individual(rng, init, law):
    ages, eta0, breaks, levels = sample_initial_batch(rng, init, law, 1)
    return InitialIndividual(float(ages[0]), float(eta0[0]),
                             InfectivityRealization(breaks[0], levels[0], law.profile))


def erlang_sf(k, rate, t):
    """Survival of the Erlang(k, rate) law (used as an independent oracle in tests)."""
    x = rate * np.asarray(t, dtype=float)
    return special.gammaincc(k, x)
