"""Experiment configuration, replication sweeps and reports.

Configuration files are INI documents::

    [model]
    infectivity = indicator        ; indicator | two_phase | hump
    beta = 0.4                     ; indicator level, or hump peak value
    duration = exponential         ; exponential | gamma | lognormal | near_deterministic
    rate = 0.25                    ; duration parameters (see DURATION_KEYS)
    ; two_phase: latent_low, latent_high, level_low, level_high
    ; hump: peak_age (lambda~(a) = beta (a / peak_age) exp(1 - a / peak_age))

    [init]
    S0 = 0.9
    I0 = 0.1
    R0 = 0
    age_law = uniform              ; uniform | paper_uniform
    abar = 1.0
    coupling = residual            ; residual | paper-uniform

    [grid]
    T = 40
    dt = 0.01                      ; simulation and comparison grid
    lln_refine = 10                ; LLN solved at dt / lln_refine
    clt_dt = 0.2

    [sweep]
    N = 500, 2000, 8000            ; ascending
    replicas = 200
    clt_replicas = 1000
    clt_paths = 10000
    mode = scheduled               ; scheduled | hazard
    threads = 1
    seed = 1

    [tolerances]
    slope_low = -0.65
    slope_high = -0.35
    clt_relative = 0.15

    [output]
    dir = out

Every error raised while reading a file names the file and the line of the
offending entry.
"""
from __future__ import annotations

import configparser
import csv
import math
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .abm import SimulationConfig, fluctuation_paths, run_replicas, scaled_paths
from .clt import CltSetup, sample_coupled_paths, sample_driver_paths, solve_clt_path, clt_hat_IR
from .errors import ConfigurationError
from .lln import Grid, solve_lln
from .model import AgeLaw, DurationDistribution, InfectivityLaw, InitialCondition

DURATION_KEYS = {
    "exponential": ("rate",),
    "gamma": ("shape", "rate"),
    "lognormal": ("mu", "sigma"),
    "near_deterministic": ("mean", "cv"),
}

DEFAULTS = {
    "init": {"R0": "0", "age_law": "uniform", "coupling": "residual"},
    "grid": {"lln_refine": "10", "clt_dt": "0.2"},
    "sweep": {"replicas": "200", "clt_replicas": "1000", "clt_paths": "10000", "mode": "scheduled",
              "threads": "1", "seed": "1"},
    "tolerances": {"slope_low": "-0.65", "slope_high": "-0.35", "clt_relative": "0.15"},
    "output": {"dir": "out"},
}


class ConfigError(ConfigurationError):
    """Malformed experiment configuration, anchored to a file line."""


@dataclass
class ExperimentConfig:
    law: InfectivityLaw
    init: InitialCondition
    T: float
    dt: float
    N_list: list
    replicas: int
    clt_replicas: int
    clt_paths: int
    clt_dt: float = 0.2
    lln_refine: int = 10
    mode: str = "scheduled"
    threads: int = 1
    seed: int = 1
    slope_range: tuple = (-0.65, -0.35)
    clt_relative: float = 0.15
    out_dir: str = "out"
    beta: float | None = None
    source: str = "<memory>"

    def __post_init__(self):
        if self.replicas < 2 or self.clt_replicas < 2:
            raise ConfigurationError("at least two replicas are needed for Monte Carlo bands")
        if list(self.N_list) != sorted(self.N_list) or len(set(self.N_list)) != len(self.N_list):
            raise ConfigurationError("N-list must be strictly ascending")
        Grid(self.T, self.dt)
        Grid(self.T, self.clt_dt)
        ratio = self.clt_dt / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigurationError("clt_dt must be a multiple of dt")

    @property
    def grid(self):
        return Grid(self.T, self.dt)

    def simulation(self, N, mode=None):
        return SimulationConfig(N, self.init, self.law, self.T, self.dt, mode=mode or self.mode, seed=self.seed)

    def solve_lln(self):
        """LLN paths on the comparison grid, solved at ``dt / lln_refine``."""
        fine = solve_lln(self.law, self.init, self.grid.refine(self.lln_refine))
        return fine.subsample(self.lln_refine)


def _line_of(text, section, key):
    sec = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            sec = m.group(1).strip()
            continue
        if sec == section and re.match(rf"{re.escape(key)}\s*[=:]", line, re.IGNORECASE):
            return no
    return None


class _Reader:
    def __init__(self, text, source):
        self.text, self.source = text, source
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        cp.optionxform = str
        try:
            cp.read_string(text, source=source)
        except configparser.Error as exc:
            line = getattr(exc, "lineno", None)
            msg = str(exc).splitlines()[0]
            raise ConfigError(f"{source}:{line or '?'}: {msg}") from None
        self.cp = cp

    def fail(self, section, key, msg):
        line = _line_of(self.text, section, key)
        where = f"{self.source}:{line}" if line else f"{self.source}: [{section}]"
        raise ConfigError(f"{where}: {key}: {msg}")

    def raw(self, section, key):
        if self.cp.has_option(section, key):
            return self.cp.get(section, key).strip()
        if key in DEFAULTS.get(section, {}):
            return DEFAULTS[section][key]
        where = f"{self.source}: [{section}]" if self.cp.has_section(section) else f"{self.source}"
        raise ConfigError(f"{where}: missing required entry {section}.{key}")

    def float(self, section, key):
        val = self.raw(section, key)
        try:
            out = float(val)
        except ValueError:
            self.fail(section, key, f"expected a number, got {val!r}")
        if not math.isfinite(out):
            self.fail(section, key, f"expected a finite number, got {val!r}")
        return out

    def int(self, section, key):
        val = self.raw(section, key)
        try:
            return int(val)
        except ValueError:
            self.fail(section, key, f"expected an integer, got {val!r}")

    def ints(self, section, key):
        val = self.raw(section, key)
        try:
            return [int(x) for x in re.split(r"[,\s]+", val) if x]
        except ValueError:
            self.fail(section, key, f"expected a comma-separated list of integers, got {val!r}")

    def choice(self, section, key, options):
        val = self.raw(section, key)
        if val not in options:
            self.fail(section, key, f"expected one of {', '.join(options)}, got {val!r}")
        return val

    def guard(self, section, key, fn, candidates=()):
        """Run ``fn``; anchor its error on the first of ``candidates`` named in the message, else ``key``."""
        try:
            return fn()
        except ConfigurationError as exc:
            if isinstance(exc, ConfigError):
                raise
            msg = str(exc)
            hit = next((k for k in candidates if re.search(rf"\b{re.escape(k)}\b", msg)), key)
            self.fail(section, hit, msg)


def parse_config(text, source="<string>"):
    """Build an :class:`ExperimentConfig` from INI text."""
    r = _Reader(text, source)
    dname = r.choice("model", "duration", tuple(DURATION_KEYS))
    dpar = [r.float("model", k) for k in DURATION_KEYS[dname]]
    dur = r.guard("model", "duration", lambda: getattr(DurationDistribution, dname)(*dpar),
                  DURATION_KEYS[dname])
    kind = r.choice("model", "infectivity", ("indicator", "two_phase", "hump"))
    T = r.float("grid", "T")
    beta = None
    if kind == "indicator":
        beta = r.float("model", "beta")
        law = r.guard("model", "beta", lambda: InfectivityLaw.indicator(beta, dur))
    elif kind == "two_phase":
        lat = (r.float("model", "latent_low"), r.float("model", "latent_high"))
        lev = (r.float("model", "level_low"), r.float("model", "level_high"))
        law = r.guard("model", "infectivity", lambda: InfectivityLaw.two_phase(dur, lat, lev))
    else:
        peak, top = r.float("model", "peak_age"), r.float("model", "beta")
        if peak <= 0:
            r.fail("model", "peak_age", "must be positive")
        law = r.guard("model", "infectivity", lambda: InfectivityLaw.separable(
            lambda a: top * (a / peak) * np.exp(1.0 - a / peak), dur, horizon=T + 50 * peak))
    S0, I0, R0 = r.float("init", "S0"), r.float("init", "I0"), r.float("init", "R0")
    abar = r.float("init", "abar")
    age_kind = r.choice("init", "age_law", ("uniform", "paper_uniform"))
    coupling = r.choice("init", "coupling", ("residual", "paper-uniform"))
    age_law = r.guard("init", "abar", lambda: AgeLaw.uniform(abar) if age_kind == "uniform"
                      else AgeLaw.paper_uniform(dur, abar))
    init = r.guard("init", "I0", lambda: InitialCondition(S0, I0, R0, age_law, coupling_mode=coupling))
    fields = dict(
        law=law, init=init, T=T, dt=r.float("grid", "dt"), N_list=r.ints("sweep", "N"),
        replicas=r.int("sweep", "replicas"), clt_replicas=r.int("sweep", "clt_replicas"),
        clt_paths=r.int("sweep", "clt_paths"), clt_dt=r.float("grid", "clt_dt"),
        lln_refine=r.int("grid", "lln_refine"), mode=r.choice("sweep", "mode", ("scheduled", "hazard")),
        threads=r.int("sweep", "threads"), seed=r.int("sweep", "seed"),
        slope_range=(r.float("tolerances", "slope_low"), r.float("tolerances", "slope_high")),
        clt_relative=r.float("tolerances", "clt_relative"), out_dir=r.raw("output", "dir"),
        beta=beta, source=source)
    try:
        return ExperimentConfig(**fields)
    except ConfigurationError as exc:
        msg = str(exc)
        key = {"replica": ("sweep", "replicas"), "N-list": ("sweep", "N"), "clt_dt": ("grid", "clt_dt")}
        for word, (sec, k) in key.items():
            if word in msg:
                r.fail(sec, k, msg)
        r.fail("grid", "dt", msg)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), source=os.fspath(path))


# ---------------------------------------------------------------------------
# reports


@dataclass
class CriterionResult:
    """Verdict for one check: what was measured, against which tolerance, where."""

    name: str
    passed: bool
    observed: str
    tolerance: str
    where: str = ""
    detail: str = ""

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        out = f"[{tag}] {self.name}: observed {self.observed}; tolerance {self.tolerance}"
        if self.where:
            out += f"; at {self.where}"
        return out


@dataclass
class Report:
    title: str = "report"
    criteria: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)  # name -> (header, rows)
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.criteria)

    def extend(self, other):
        self.criteria += other.criteria
        self.tables.update(other.tables)
        self.notes += other.notes
        return self

    def render_text(self):
        lines = [self.title, "=" * len(self.title), ""]
        for name, (header, rows) in self.tables.items():
            lines.append(name)
            widths = [max(len(str(h)), *(len(_fmt(r[i])) for r in rows)) if rows else len(str(h))
                      for i, h in enumerate(header)]
            lines.append("  ".join(str(h).rjust(w) for h, w in zip(header, widths)))
            for row in rows:
                lines.append("  ".join(_fmt(v).rjust(w) for v, w in zip(row, widths)))
            lines.append("")
        lines += [c.line() for c in self.criteria]
        lines += [""] + self.notes if self.notes else []
        lines.append("")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(self.render_text())
        for name, (header, rows) in self.tables.items():
            with open(os.path.join(out_dir, f"{name}.csv"), "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                w.writerows([[_fmt(v) for v in row] for row in rows])
        with open(os.path.join(out_dir, "criteria.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["criterion", "verdict", "observed", "tolerance", "where"])
            for c in self.criteria:
                w.writerow([c.name, "pass" if c.passed else "fail", c.observed, c.tolerance, c.where])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# ---------------------------------------------------------------------------
# experiments


def sup_errors(trajs, lln):
    """Per replica ``sup_t |X^N/N - X|`` for S, I, R, F (columns)."""
    out = np.empty((len(trajs), 4))
    for k, tr in enumerate(trajs):
        sc = scaled_paths(tr)
        out[k] = [np.max(np.abs(sc.S - lln.S)), np.max(np.abs(sc.I - lln.I)),
                  np.max(np.abs(sc.R - lln.R)), np.max(np.abs(sc.F - lln.F))]
    return out


def loglog_slope(N, err):
    return float(np.polyfit(np.log(N), np.log(err), 1)[0])


def run_lln_experiment(cfg, lln=None, N_list=None, replicas=None):
    """Mean sup-grid LLN error per N with 95% bands and the log-log slope over N."""
    lln = cfg.solve_lln() if lln is None else lln
    N_list = list(cfg.N_list if N_list is None else N_list)
    R = cfg.replicas if replicas is None else replicas
    if R < 2:
        raise ConfigurationError("at least two replicas are needed for Monte Carlo bands")
    rows, means = [], []
    for N in N_list:
        trajs = run_replicas(cfg.simulation(N), R, threads=cfg.threads, root_seed=cfg.seed + N)
        err = sup_errors(trajs, lln)
        comb = err[:, :3].max(axis=1)
        m, half = comb.mean(), 1.96 * comb.std(ddof=1) / math.sqrt(R)
        means.append(m)
        rows.append([N, R, m, half, *err.mean(axis=0)])
    slope = loglog_slope(N_list, means) if len(N_list) > 1 else float("nan")
    lo, hi = cfg.slope_range
    rep = Report("LLN")
    rep.tables["lln_errors"] = (["N", "replicas", "sup_err_SIR", "band95", "sup_err_S", "sup_err_I", "sup_err_R",
                                 "sup_err_F"], rows)
    rep.criteria.append(CriterionResult(
        "LLN log-log slope", lo <= slope <= hi, f"{slope:.4f}", f"[{lo}, {hi}]",
        f"N={N_list}, R={R}, grid dt={cfg.dt} on [0, {cfg.T}]"))
    return rep


def clt_predictions(cfg, lln, paths, rng):
    """CLT paths on the ``clt_dt`` grid: coupled construction when the law is separable."""
    setup = CltSetup(lln, cfg.T, cfg.clt_dt)
    if cfg.law.separable_law:
        return setup, sample_coupled_paths(rng, setup, paths)
    d = sample_driver_paths(rng, setup, paths)
    p = solve_clt_path(d)
    p.I, p.R = clt_hat_IR(d, p)
    return setup, p


def run_clt_experiment(cfg, lln=None, N=None, replicas=None, paths=None, times=None):
    """Empirical fluctuation variances at the largest N against CLT path statistics."""
    lln = cfg.solve_lln() if lln is None else lln
    N = cfg.N_list[-1] if N is None else N
    R = cfg.clt_replicas if replicas is None else replicas
    P = cfg.clt_paths if paths is None else paths
    times = [cfg.T / 4, cfg.T / 2, 3 * cfg.T / 4] if times is None else list(times)
    trajs = run_replicas(cfg.simulation(N), R, threads=cfg.threads, root_seed=cfg.seed + 7919 * N)
    fl = [fluctuation_paths(tr, lln) for tr in trajs]
    emp = {k: np.array([getattr(f, k) for f in fl]) for k in ("S", "I", "R")}
    setup, cp = clt_predictions(cfg, lln, P, np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1,))))
    pred = {"S": cp.S, "I": cp.I, "R": cp.R}
    rep = Report("CLT")
    rows = []
    tol = cfg.clt_relative
    mc = math.sqrt(2.0 / (R - 1)) + math.sqrt(2.0 / (P - 1))
    for t in times:
        i_sim = int(round(t / cfg.dt))
        i_clt = int(round(t / cfg.clt_dt))
        for k in ("S", "I", "R"):
            ve = float(np.var(emp[k][:, i_sim], ddof=1))
            vp = float(np.var(pred[k][:, i_clt], ddof=1))
            rel = abs(ve / vp - 1.0) if vp > 0 else math.inf
            rows.append([t, f"Var {k}", ve, vp, rel])
            if k in ("S", "I"):
                rep.criteria.append(CriterionResult(
                    f"Var {k}^N(t) vs CLT", rel <= tol, f"relative gap {rel:.4f}", f"<= {tol}",
                    f"t={t}, N={N}, R={R}, P={P}", f"empirical {ve:.5g}, predicted {vp:.5g}"))
    for a, b in zip(times[:-1], times[1:]):
        ce = float(np.cov(emp["S"][:, int(round(a / cfg.dt))], emp["S"][:, int(round(b / cfg.dt))])[0, 1])
        cp_ = float(np.cov(pred["S"][:, int(round(a / cfg.clt_dt))], pred["S"][:, int(round(b / cfg.clt_dt))])[0, 1])
        rows.append([f"{a}/{b}", "Cov S", ce, cp_, abs(ce / cp_ - 1.0) if cp_ else math.inf])
    v0 = float(np.var(emp["S"][:, 0]))
    rep.criteria.append(CriterionResult("Var S^N(0) = 0", v0 == 0.0, f"{v0!r}", "== 0 exactly", "t=0"))
    rep.tables["clt_variances"] = (["t", "statistic", "empirical", "predicted", "relative_gap"], rows)
    rep.notes.append(f"Monte Carlo relative s.e. of a variance ratio ~ {mc:.3f}")
    return rep
