"""Acceptance criteria, one function per criterion.

Every function returns a :class:`~agesir.harness.CriterionResult`. ``quick``
shrinks the Monte Carlo sizes for smoke runs; Monte Carlo tolerances are then
widened to three relative standard errors where the full-size tolerance would
be below that.
"""
from __future__ import annotations

import hashlib
import math
import time

import numpy as np

from .abm import SimulationConfig, fluctuation_paths, run_replicas, scaled_paths
from .clt import (CltSetup, clt_hat_IR, sample_coupled_paths, sample_driver_paths, solve_clt_path,
                  spde_solution_apply, variance_identity_check)
from .harness import CriterionResult, ExperimentConfig, loglog_slope, sup_errors
from .lln import Grid, TestFunction, manufactured_transport, markovian_ode_oracle, solve_lln, weak_form_residual
from .model import AgeLaw, DurationDistribution, InfectivityLaw, InitialCondition, sample_initial_batch

BETA, GAMMA = 0.4, 0.25
T_MARKOV = 40.0


def markovian(T=T_MARKOV, dt=0.01, **kw):
    law = InfectivityLaw.indicator(BETA, DurationDistribution.exponential(GAMMA))
    init = InitialCondition(0.9, 0.1, 0.0, AgeLaw.uniform(1.0))
    base = dict(law=law, init=init, T=T, dt=dt, N_list=[500, 2000, 8000], replicas=200, clt_replicas=1000,
                clt_paths=10_000, seed=20240601)
    base.update(kw)
    return ExperimentConfig(**base)


def _lln(cfg):
    return cfg.solve_lln()


def criterion_1(quick=False):
    cfg = markovian()
    grid = cfg.grid
    solve_lln(cfg.law, cfg.init, Grid(1.0, 0.01))  # compile outside the timed call
    t0 = time.perf_counter()
    lln = solve_lln(cfg.law, cfg.init, grid)
    elapsed = time.perf_counter() - t0
    S, I, R = markovian_ode_oracle(BETA, GAMMA, cfg.init, grid)
    err = max(np.max(np.abs(lln.S - S)), np.max(np.abs(lln.I - I)), np.max(np.abs(lln.R - R)))
    tol = 5 * grid.dt**2
    return CriterionResult("1 Markovian reduction", bool(err <= tol and elapsed < 1.0),
                           f"sup error {err:.3e}, runtime {elapsed:.3f}s", f"<= {tol:.1e}, < 1 s",
                           f"grid dt={grid.dt} on [0, {grid.T}]")


def criterion_2(quick=False):
    N_list = [500, 2000] if quick else [500, 2000, 8000]
    R = 50 if quick else 200
    cfg = markovian(N_list=N_list, replicas=R)
    lln = _lln(cfg)
    t0 = time.perf_counter()
    means = []
    for N in N_list:
        trajs = run_replicas(cfg.simulation(N), R, root_seed=cfg.seed + N)
        means.append(float(sup_errors(trajs, lln)[:, :3].max(axis=1).mean()))
    elapsed = time.perf_counter() - t0
    slope = loglog_slope(N_list, means)
    ok = -0.65 <= slope <= -0.35 and elapsed < 600
    errs = ", ".join(f"N={n}: {m:.4f}" for n, m in zip(N_list, means))
    return CriterionResult("2 FLLN convergence", bool(ok), f"slope {slope:.3f} ({errs}), {elapsed:.1f}s",
                           "[-0.65, -0.35], < 600 s", f"sup over grid dt={cfg.dt} on [0, {cfg.T}], R={R}")


def criterion_3(quick=False):
    N, R = (2000, 50) if quick else (2000, 200)
    cfg = markovian(dt=1.0, clt_dt=1.0)
    out = {}
    for mode in ("scheduled", "hazard"):
        trajs = run_replicas(cfg.simulation(N, mode), R, root_seed=cfg.seed + (0 if mode == "scheduled" else 1))
        out[mode] = np.array([tr.I / N for tr in trajs])
    a, b = out["scheduled"], out["hazard"]
    diff = np.abs(a.mean(0) - b.mean(0))
    band = 3 * np.sqrt(a.var(0, ddof=1) / R + b.var(0, ddof=1) / R)
    ok = bool(np.all(diff <= band))
    worst = float(np.max(diff / np.where(band > 0, band, np.inf)))
    return CriterionResult("3 recovery-mechanism equivalence", ok,
                           f"max |diff| / 3sigma = {worst:.3f}", "<= 1 at every grid time",
                           f"t = 0, 1, ..., {cfg.T:g}; N={N}, R={R}")


def criterion_4(quick=False):
    N, R, P = (1000, 50, 1000) if quick else (10_000, 1000, 10_000)
    cfg = markovian(dt=0.2, clt_dt=0.2, N_list=[N], clt_replicas=R, clt_paths=P, lln_refine=20)
    lln = _lln(cfg)
    trajs = run_replicas(cfg.simulation(N), R, root_seed=cfg.seed + 4)
    fl = [fluctuation_paths(tr, lln) for tr in trajs]
    Sx = np.array([f.S for f in fl])
    Ix = np.array([f.I for f in fl])
    setup = CltSetup(lln, cfg.T, cfg.clt_dt)
    cp = sample_coupled_paths(np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(4,))), setup, P)
    tol = 0.15 if not quick else max(0.15, 3 * math.sqrt(2.0 / (R - 1)))
    worst, parts = 0.0, []
    for t in (cfg.T / 4, cfg.T / 2, 3 * cfg.T / 4):
        k = int(round(t / cfg.dt))
        for name, emp, pred in (("S", Sx, cp.S), ("I", Ix, cp.I)):
            rel = abs(np.var(emp[:, k], ddof=1) / np.var(pred[:, k], ddof=1) - 1.0)
            worst = max(worst, rel)
            parts.append(f"{name}({t:g}) {rel:.3f}")
    v0 = float(np.var(Sx[:, 0]))
    ok = worst <= tol and v0 == 0.0
    return CriterionResult("4 FCLT variance match", bool(ok), f"max relative gap {worst:.3f} [{', '.join(parts)}]; "
                           f"Var S^N(0) = {v0!r}", f"<= {tol:.3f}; Var S^N(0) == 0",
                           f"t = {cfg.T / 4:g}, {cfg.T / 2:g}, {3 * cfg.T / 4:g}; N={N}, R={R}, P={P}")


def criterion_5(quick=False):
    t = 10.0
    cfg = markovian()
    gaps = {}
    for dt in (1e-3, 5e-4):
        lln = solve_lln(cfg.law, cfg.init, Grid(t, dt))
        for phi in (TestFunction.constant(1.0), TestFunction.bump(0.0, 8.0)):
            gaps[(phi.name, dt)] = variance_identity_check(lln, phi, t)[2]
    names = sorted({k[0] for k in gaps})
    worst = max(gaps[(n, 1e-3)] for n in names)
    ratios = [gaps[(n, 1e-3)] / gaps[(n, 5e-4)] for n in names]
    ok = worst <= 1e-4 and all(3.0 <= r <= 5.0 for r in ratios)
    obs = "; ".join(f"{n}: gap {gaps[(n, 1e-3)]:.2e}, ratio {r:.2f}" for n, r in zip(names, ratios))
    return CriterionResult("5 variance identity", bool(ok), obs, "gap <= 1e-4 at dt=1e-3, ratio in [3, 5]",
                           f"t={t:g}, dt = 1e-3 and 5e-4")


def criterion_6(quick=False):
    cfg = markovian()
    lln = solve_lln(cfg.law, cfg.init, Grid(cfg.T, 0.01))
    one = TestFunction.constant(1.0)
    setup = CltSetup(lln, cfg.T, 0.2, phis=[one])
    d = sample_driver_paths(np.random.default_rng(6), setup, 100, keep_field=True)
    path = solve_clt_path(d)
    I, _ = clt_hat_IR(d, path)
    d.mu_rec.clear()  # force the field-based evaluation of the recovery integral
    worst = 0.0
    for n in range(setup.n + 1):
        mu = spde_solution_apply(d, path, one, setup.t[n])
        worst = max(worst, float(np.max(np.abs(mu - I[:, n]))))
    scale = float(np.max(np.abs(I)))
    rel = worst / scale
    return CriterionResult("6 SPDE self-consistency", bool(rel <= 1e-8), f"{rel:.2e} relative",
                           "<= 1e-8", f"every t on the dt=0.2 grid of [0, {cfg.T:g}], 100 paths")


def criterion_7(quick=False):
    law = InfectivityLaw.indicator(0.5, DurationDistribution.gamma(2.0, 0.5))
    init = InitialCondition(0.9, 0.1, 0.0, AgeLaw.uniform(1.0))
    phi = TestFunction.cutoff(12.0)
    t = 10.0
    res = {}
    for dt in (0.01, 0.005):
        lln = solve_lln(law, init, Grid(12.0, dt))
        res[dt] = weak_form_residual(lln, phi, t)
    man = manufactured_transport()
    psi = TestFunction.cutoff(4.0)
    gen = {dt: man.weak_residual(psi, 1.5, dt, 4.0) for dt in (0.01, 0.005)}
    r1, r2 = res[0.01] / res[0.005], gen[0.01] / gen[0.005]
    ok = (res[0.01] <= 10 * 0.01**2 and res[0.005] <= 10 * 0.005**2 and 3 <= r1 <= 5
          and gen[0.01] <= 10 * 0.01**2 and gen[0.005] <= 10 * 0.005**2 and 3 <= r2 <= 5)
    obs = (f"limit PDE {res[0.01]:.2e}/{res[0.005]:.2e} (ratio {r1:.2f}); "
           f"manufactured {gen[0.01]:.2e}/{gen[0.005]:.2e} (ratio {r2:.2f})")
    return CriterionResult("7 weak-form PDE residual", bool(ok), obs, "<= 10 dt^2, ratio in [3, 5]",
                           "limit at t=10 (gamma(2, 0.5) durations), manufactured at t=1.5; dt = 0.01, 0.005")


def _log_hash(tr):
    h = hashlib.sha256()
    for arr in (tr.event_time, tr.event_kind, tr.event_id, tr.F):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def criterion_8(quick=False):
    N = 20_000 if quick else 600_000
    law = InfectivityLaw.two_phase(DurationDistribution.gamma(4.0, 0.8))
    init = InitialCondition(0.999, 0.001, 0.0, AgeLaw.uniform(2.0))
    cfg = SimulationConfig(N, init, law, 200.0, 1.0, seed=8)
    reps = 2 if quick else 4
    one = run_replicas(cfg, reps, threads=1)
    many = run_replicas(cfg, reps, threads=4)
    events = sum(tr.stats["events"] for tr in one)
    viol = sum(tr.stats["conservation_violations"] for tr in one)
    grid_ok = all(np.all(tr.S + tr.I + tr.R == N) for tr in one)
    counts_ok = True
    for tr in one:
        inf = np.cumsum(tr.event_kind == 0)
        rec = np.cumsum(tr.event_kind == 1)
        S0, I0 = cfg.initial_counts()[:2]
        counts_ok &= bool(np.all(S0 - inf >= 0) and np.all(I0 + inf - rec >= 0))
    ratio = max(tr.stats["max_ratio"] for tr in one)
    same = [_log_hash(a) == _log_hash(b) for a, b in zip(one, many)]
    need = 10_000 if quick else 1_000_000
    ok = events >= need and viol == 0 and grid_ok and counts_ok and ratio <= 1.0 and all(same)
    return CriterionResult("8 exactness invariants", bool(ok),
                           f"{events} events, {viol} conservation violations, max thinning ratio {ratio:.6f}, "
                           f"logs identical across 1/4 threads: {all(same)}",
                           f">= {need} events, 0 violations, ratio <= 1, identical logs",
                           f"N={N}, {reps} replicas, two-phase gamma(4, 0.8) law")


def criterion_9(quick=False):
    N = 10_000
    draws = 2000 if quick else 10_000
    cfg = markovian()
    I = cfg.init.counts(N)[1]
    rng = np.random.default_rng(9)
    a_pts = np.array([0.25, 0.5, 0.75])
    G = a_pts / cfg.init.abar
    X = np.empty((draws, len(a_pts)))
    for k in range(draws):
        ages = sample_initial_batch(rng, cfg.init, cfg.law, I)[0]
        X[k] = (np.sum(ages[:, None] <= a_pts[None, :], axis=0) - I * G) / math.sqrt(N)
    worst, parts = 0.0, []
    for i in range(len(a_pts)):
        for j in range(i, len(a_pts)):
            prod = (X[:, i] - X[:, i].mean()) * (X[:, j] - X[:, j].mean())
            emp = prod.sum() / (draws - 1)
            target = cfg.init.I0 * (min(G[i], G[j]) - G[i] * G[j])
            sig = prod.std(ddof=1) / math.sqrt(draws)
            z = abs(emp - target) / sig
            worst = max(worst, z)
            parts.append(f"({a_pts[i]:g},{a_pts[j]:g}) {emp:.4f} vs {target:.4f}")
    return CriterionResult("9 Brownian-bridge initial fluctuation", bool(worst <= 3.0),
                           f"max |emp - target| / sigma = {worst:.2f} [{'; '.join(parts)}]", "<= 3 sigma",
                           f"a in {{0.25, 0.5, 0.75}}, N={N}, {draws} draws")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
            criterion_8, criterion_9]


def run_all(quick=False, only=None, log=None):
    results = []
    for k, fn in enumerate(CRITERIA, 1):
        if only and k not in only:
            continue
        t0 = time.perf_counter()
        res = fn(quick=quick)
        res.detail = (res.detail + "; " if res.detail else "") + f"{time.perf_counter() - t0:.1f}s"
        results.append(res)
        if log is not None:
            log(res.line())
    return results
