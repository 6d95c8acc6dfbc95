"""Exact stochastic simulation of the N-individual epidemic."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels
from .agepop import AgeMeasure
from .errors import ConfigurationError, GridMismatchError, ThinningBoundError
from .model import InfectivityLaw, InitialCondition, sample_initial_batch


@dataclass
class SimulationConfig:
    """Everything needed to run one replica.

    ``counts`` optionally overrides the integer parts ``(S, I, R)`` derived from
    the initial fractions (useful for degenerate populations such as ``N = 1``).
    """

    N: int
    init: InitialCondition
    law: InfectivityLaw
    horizon: float
    dt: float
    mode: str = "scheduled"
    seed: int = 0
    counts: tuple | None = None
    resync: int = 4096

    def __post_init__(self):
        if self.N < 1:
            raise ConfigurationError("N must be >= 1")
        if not self.horizon > 0 or not self.dt > 0:
            raise ConfigurationError("horizon and dt must be positive")
        if self.mode not in ("scheduled", "hazard"):
            raise ConfigurationError(f"unknown simulation mode {self.mode!r}")
        if self.counts is not None and sum(self.counts) != self.N:
            raise ConfigurationError("explicit counts must sum to N")

    @property
    def duration(self):
        return self.law.duration

    @property
    def grid(self):
        n = int(round(self.horizon / self.dt))
        return np.arange(n + 1) * self.dt

    def initial_counts(self):
        return tuple(self.counts) if self.counts is not None else self.init.counts(self.N)


@dataclass
class Trajectory:
    """Event log and left-limit grid samples of one replica."""

    N: int
    t: np.ndarray
    S: np.ndarray
    I: np.ndarray
    R: np.ndarray
    F: np.ndarray
    event_time: np.ndarray
    event_kind: np.ndarray
    event_id: np.ndarray
    initial_ages: np.ndarray
    mode: str
    stats: dict = field(default_factory=dict)

    @property
    def Upsilon(self):
        return self.S / self.N * self.F

    @property
    def n_initial(self):
        return len(self.initial_ages)

    def infection_times(self):
        """Infection time per individual id (``-age`` for the initially infected, NaN if never infected)."""
        n = self.n_initial + int(np.sum(self.event_kind == _kernels.EV_INFECTION))
        out = np.full(n, np.nan)
        out[: self.n_initial] = -self.initial_ages
        inf = self.event_kind == _kernels.EV_INFECTION
        out[self.event_id[inf]] = self.event_time[inf]
        return out

    def recovery_times(self):
        """Recovery time per id (``inf`` if still infected at the horizon)."""
        tau = self.infection_times()
        out = np.full(len(tau), np.inf)
        rec = self.event_kind == _kernels.EV_RECOVERY
        out[self.event_id[rec]] = self.event_time[rec]
        return out

    def infected_count_from_log(self, t):
        """``I(t-)`` rebuilt from infection and recovery times."""
        tau, rec = self.infection_times(), self.recovery_times()
        return int(np.sum((tau < t) & (rec >= t)))

    def age_measure(self, t, hazard=None):
        """Age measure of the individuals infected at ``t-``."""
        tau, rec = self.infection_times(), self.recovery_times()
        alive = (tau < t) & (rec >= t)
        return AgeMeasure(t - tau[alive], np.flatnonzero(alive), hazard)

    def write_csv(self, events_path=None, grid_path=None):
        if events_path is not None:
            with open(events_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["time", "kind", "id"])
                for tt, kk, ii in zip(self.event_time, self.event_kind, self.event_id):
                    w.writerow([repr(float(tt)), "infection" if kk == 0 else "recovery", int(ii)])
        if grid_path is not None:
            with open(grid_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "S", "I", "R", "F", "Upsilon"])
                ups = self.Upsilon
                for n in range(len(self.t)):
                    w.writerow([repr(float(self.t[n])), int(self.S[n]), int(self.I[n]), int(self.R[n]),
                                repr(float(self.F[n])), repr(float(ups[n]))])


def _profile_arrays(law):
    prof = law.profile
    if prof.is_constant:
        return prof.value, np.zeros(1), 0.0
    return 0.0, prof.table, float(prof.step)


def _rng_for(config, rng):
    if rng is not None:
        return rng
    return np.random.default_rng(np.random.SeedSequence(config.seed))


def _initial(config, rng):
    S, I, _ = config.initial_counts()
    ages, _, breaks0, levels0 = sample_initial_batch(rng, config.init, config.law, I)
    order = np.argsort(ages, kind="stable")
    return S, I, ages[order], breaks0[order], levels0[order]


def _finish(config, out, ages, mode):
    ev_t, ev_k, ev_id, gS, gI, gR, gF, max_ratio, n_prop, violations, status = out
    stats = {"max_ratio": float(max_ratio), "proposals": int(n_prop),
             "conservation_violations": int(violations), "events": int(len(ev_t))}
    if status == _kernels.BOUND_BREACH:
        raise ThinningBoundError(f"thinning ratio {max_ratio:.12g} exceeded 1 ({mode} mode)")
    return Trajectory(config.N, config.grid, gS, gI, gR, gF, ev_t, ev_k, ev_id, ages, mode, stats)


def simulate(config, rng=None):
    """Scheduled-recovery simulation: each infected individual carries its own ``eta``."""
    rng = _rng_for(config, rng)
    S, I, ages, breaks0, levels0 = _initial(config, rng)
    _, breaks_new, levels_new = config.law.sample_batch(rng, S)
    tau = np.concatenate([-ages, np.zeros(S)])
    breaks = np.ascontiguousarray(np.vstack([breaks0, breaks_new]))
    levels = np.ascontiguousarray(np.vstack([levels0, levels_new]))
    const, table, step = _profile_arrays(config.law)
    out = _kernels.run_scheduled(rng, config.N, S, I, tau, breaks, levels, const, table, step,
                                 float(config.law.lam_star), float(config.horizon), config.grid,
                                 int(config.resync))
    return _finish(config, out, ages, "scheduled")


def simulate_hazard(config, rng=None):
    """Hazard-driven simulation: recoveries thinned from a rate ``I h*`` clock."""
    law = config.law
    if not law.separable_law:
        raise ConfigurationError("hazard mode needs a separable infectivity law lambda~(a) 1{a < eta}")
    rng = _rng_for(config, rng)
    S, I, _ = config.initial_counts()
    # initial ages are drawn as in scheduled mode; the durations are discarded
    ages, _, _, _ = sample_initial_batch(rng, config.init, law, I)
    ages = np.sort(ages, kind="stable")
    tau = np.concatenate([-ages, np.zeros(S)])
    reach = config.horizon + (float(ages.max()) if I else 0.0)
    h_star = law.duration.sup_hazard(reach)
    kind, par, tab = law.duration.kernel_spec(reach)
    const, table, step = _profile_arrays(law)
    out = _kernels.run_hazard(rng, config.N, S, I, tau, const, table, step, float(law.lam_star),
                              kind, par, tab, float(h_star), float(config.horizon), config.grid)
    traj = _finish(config, out, ages, "hazard")
    traj.stats["h_star"] = float(h_star)
    return traj


def run(config, rng=None):
    return simulate(config, rng) if config.mode == "scheduled" else simulate_hazard(config, rng)


def replica_seed(root, index):
    """Stream of replica ``index``: the root seed with the replica index as spawn key."""
    return np.random.SeedSequence(root, spawn_key=(index,))


def run_replicas(config, n_replicas, threads=1, root_seed=None, start=0):
    """Run replicas ``start .. start + n_replicas - 1``; results are ordered by replica index."""
    root = config.seed if root_seed is None else root_seed

    def one(i):
        return run(config, np.random.default_rng(replica_seed(root, i)))

    idx = range(start, start + n_replicas)
    if threads <= 1:
        return [one(i) for i in idx]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, idx))


class ScaledPaths(NamedTuple):
    t: np.ndarray
    S: np.ndarray
    I: np.ndarray
    R: np.ndarray
    F: np.ndarray
    Upsilon: np.ndarray


def scaled_paths(traj, N=None):
    """LLN-scaled grid samples ``X / N``."""
    N = traj.N if N is None else N
    return ScaledPaths(traj.t, traj.S / N, traj.I / N, traj.R / N, traj.F / N, traj.S * traj.F / N**2)


def fluctuation_paths(traj, lln):
    """``sqrt(N) (Xbar^N - Xbar)`` for S, I, R, F and Upsilon on the trajectory grid."""
    sc = scaled_paths(traj)
    if len(sc.t) != len(lln.t) or not np.allclose(sc.t, lln.t, rtol=0, atol=1e-9):
        raise GridMismatchError("trajectory and LLN paths live on different grids")
    root = math.sqrt(traj.N)
    return ScaledPaths(sc.t, root * (sc.S - lln.S), root * (sc.I - lln.I), root * (sc.R - lln.R),
                       root * (sc.F - lln.F), root * (sc.Upsilon - lln.Upsilon))
