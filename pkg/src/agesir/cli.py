"""Command-line entry point: ``agesir {simulate,lln,clt,verify,report}``."""
from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .errors import ConfigurationError


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment INI file")
    common.add_argument("--seed", type=int, help="root seed (overrides [sweep] seed)")
    common.add_argument("--out", help="output directory (overrides [output] dir)")
    common.add_argument("--mode", choices=("scheduled", "hazard"), help="recovery mechanism")
    common.add_argument("--threads", type=int, help="worker threads for replicas")
    common.add_argument("--quick", action="store_true", help="reduced sizes")

    p = argparse.ArgumentParser(prog="agesir", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="write event logs and grid samples")
    s.add_argument("--replicas", type=int, default=1)
    s.add_argument("--N", type=int, help="population size (default: largest N of the sweep)")
    l = sub.add_parser("lln", parents=[common], help="write the deterministic limit paths")
    l.add_argument("--oracle", action="store_true", help="also write the classical SIR ODE (Markovian laws)")
    c = sub.add_parser("clt", parents=[common], help="write analytic variance tables and CLT path summaries")
    c.add_argument("--paths", type=int, help="number of CLT paths (default: [sweep] clt_paths)")
    v = sub.add_parser("verify", parents=[common], help="run the acceptance suite")
    v.add_argument("--only", type=int, nargs="*", help="criterion numbers to run")
    sub.add_parser("report", parents=[common], help="LLN and CLT experiments with a plain-text + CSV report")
    return p


def _config(args):
    from .harness import load_config

    if not args.config:
        raise ConfigurationError(f"{args.command} needs --config")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.out_dir = args.out
    if args.mode:
        cfg.mode = args.mode
    if args.threads:
        cfg.threads = args.threads
    if args.quick:
        cfg.N_list = [250, 1000] if len(cfg.N_list) > 1 else [1000]
        cfg.replicas = min(cfg.replicas, 50)
        cfg.clt_replicas = min(cfg.clt_replicas, 50)
        cfg.clt_paths = min(cfg.clt_paths, 1000)
        cfg.clt_relative = max(cfg.clt_relative, 3 * (2.0 / (cfg.clt_replicas - 1)) ** 0.5)
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def cmd_simulate(args):
    from .abm import run_replicas

    cfg = _config(args)
    N = args.N or cfg.N_list[-1]
    trajs = run_replicas(cfg.simulation(N), args.replicas, threads=cfg.threads, root_seed=cfg.seed)
    for k, tr in enumerate(trajs):
        tr.write_csv(os.path.join(cfg.out_dir, f"events_{k:04d}.csv"), os.path.join(cfg.out_dir, f"grid_{k:04d}.csv"))
    print(f"wrote {len(trajs)} replica(s) to {cfg.out_dir}")
    return 0


def cmd_lln(args):
    from .lln import markovian_ode_oracle

    cfg = _config(args)
    lln = cfg.solve_lln()
    lln.write_csv(os.path.join(cfg.out_dir, "lln.csv"))
    if args.oracle:
        law = cfg.law
        if not (law.duration.is_exponential and law.profile.is_constant and law.constant_while_infectious):
            raise ConfigurationError("the ODE oracle needs an indicator law with exponential durations")
        S, I, R = markovian_ode_oracle(law.profile.value, law.duration.params["rate"], cfg.init, cfg.grid)
        _write_rows(os.path.join(cfg.out_dir, "ode_oracle.csv"), ["t", "S", "I", "R"], zip(lln.t, S, I, R))
    print(f"wrote LLN paths to {cfg.out_dir}")
    return 0


def cmd_clt(args):
    from .clt import CltSetup, driver_covariances
    from .harness import clt_predictions
    from .lln import TestFunction

    cfg = _config(args)
    lln = cfg.solve_lln()
    P = args.paths or cfg.clt_paths
    setup = CltSetup(lln, cfg.T, cfg.clt_dt)
    blocks = driver_covariances(setup, [TestFunction.constant(1.0)])
    names = ["S1", "F1", "F01", "F02", "F2", "I0", "I1", "R0", "R1", "I_inf", "I_rec"]
    rows = [[t, *(blocks[k][n, n] for k in names)] for n, t in enumerate(setup.t)]
    _write_rows(os.path.join(cfg.out_dir, "clt_driver_variances.csv"), ["t", *(f"var_{k}" for k in names)], rows)
    _, paths = clt_predictions(cfg, lln, P, np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1,))))
    stats = []
    for n, t in enumerate(paths.t):
        row = [t]
        for X in (paths.S, paths.I, paths.R, paths.F):
            row += [float(X[:, n].mean()), float(X[:, n].var(ddof=1))]
        stats.append(row)
    header = ["t"] + [f"{s}_{k}" for k in ("S", "I", "R", "F") for s in ("mean", "var")]
    _write_rows(os.path.join(cfg.out_dir, "clt_paths_summary.csv"), header, stats)
    print(f"wrote CLT tables ({P} paths) to {cfg.out_dir}")
    return 0


def cmd_verify(args):
    from .acceptance import run_all
    from .harness import Report

    results = run_all(quick=args.quick, only=args.only, log=print)
    if args.out:
        rep = Report("acceptance", criteria=results)
        rep.write(args.out)
    ok = all(r.passed for r in results)
    print("all criteria passed" if ok else "some criteria failed")
    return 0 if ok else 1


def cmd_report(args):
    from .harness import run_clt_experiment, run_lln_experiment

    cfg = _config(args)
    lln = cfg.solve_lln()
    rep = run_lln_experiment(cfg, lln)
    rep.extend(run_clt_experiment(cfg, lln))
    rep.title = f"report for {cfg.source}"
    rep.write(cfg.out_dir)
    sys.stdout.write(rep.render_text())
    return 0 if rep.passed else 1


COMMANDS = {"simulate": cmd_simulate, "lln": cmd_lln, "clt": cmd_clt, "verify": cmd_verify, "report": cmd_report}


def main(argv=None):
    parser = _parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"agesir: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
