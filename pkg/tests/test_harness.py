import csv
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from agesir.cli import main
from agesir.errors import ConfigurationError
from agesir.harness import (CriterionResult, Report, loglog_slope, parse_config, run_clt_experiment,
                            run_lln_experiment)

SMALL = textwrap.dedent("""\
    [model]
    infectivity = indicator
    beta = 0.4
    duration = exponential
    rate = 0.25

    [init]
    S0 = 0.9
    I0 = 0.1
    abar = 1.0

    [grid]
    T = 10
    dt = 0.1
    lln_refine = 10
    clt_dt = 0.5

    [sweep]
    N = 200, 800
    replicas = 10
    clt_replicas = 20
    clt_paths = 200
    seed = 3

    [output]
    dir = {out}
""")


def write_cfg(tmp_path, text=None):
    p = tmp_path / "exp.ini"
    p.write_text((text or SMALL).format(out=tmp_path / "out"))
    return p


def test_parse_valid_config(tmp_path):
    cfg = parse_config(SMALL.format(out="x"), "exp.ini")
    assert cfg.N_list == [200, 800] and cfg.replicas == 10
    assert cfg.T == 10 and cfg.dt == 0.1 and cfg.clt_dt == 0.5
    assert cfg.law.duration.is_exponential
    assert cfg.mode == "scheduled" and cfg.slope_range == (-0.65, -0.35)


def test_shipped_configs_parse():
    from agesir.harness import load_config
    import pathlib

    root = pathlib.Path(__file__).resolve().parents[1] / "configs"
    for p in sorted(root.glob("*.ini")):
        cfg = load_config(p)
        assert cfg.N_list == sorted(cfg.N_list)


@pytest.mark.parametrize("old,new,line,key", [
    ("rate = 0.25", "rate = fast", 5, "rate"),
    ("duration = exponential", "duration = weibull", 4, "duration"),
    ("N = 200, 800", "N = 800, 200", 19, "N"),
    ("dt = 0.1", "dt = 0.3", 14, "dt"),
    ("replicas = 10\n", "replicas = 1\n", 20, "replicas"),
])
def test_config_errors_name_the_line(old, new, line, key):
    text = SMALL.format(out="x").replace(old, new, 1)
    with pytest.raises(ConfigurationError) as exc:
        parse_config(text, "exp.ini")
    assert str(exc.value).startswith(f"exp.ini:{line}: {key}:")


def test_missing_key_is_reported():
    text = SMALL.format(out="x").replace("beta = 0.4\n", "")
    with pytest.raises(ConfigurationError, match="beta"):
        parse_config(text, "exp.ini")


def test_criterion_line_and_report(tmp_path):
    c = CriterionResult("demo", True, "0.1", "<= 0.2", "t=1")
    assert c.line() == "[PASS] demo: observed 0.1; tolerance <= 0.2; at t=1"
    bad = CriterionResult("other", False, "3", "<= 1")
    rep = Report("r", [c], {"tab": (["a", "b"], [[1, 0.5]])}, ["note"])
    assert rep.passed
    rep.extend(Report("s", [bad]))
    assert not rep.passed
    text = rep.render_text()
    assert "[FAIL] other" in text and text.rstrip().endswith("overall: FAIL")
    rep.write(tmp_path)
    rows = list(csv.reader(open(tmp_path / "criteria.csv")))
    assert rows[0][:2] == ["criterion", "verdict"] and rows[2][1] == "fail"
    assert (tmp_path / "tab.csv").read_text().splitlines() == ["a,b", "1,0.5"]


def test_loglog_slope_oracle():
    N = np.array([100, 400, 1600])
    assert loglog_slope(N, 3.0 * N**-0.5) == pytest.approx(-0.5)


def test_small_experiments_run(tmp_path):
    cfg = parse_config(SMALL.format(out=tmp_path), "exp.ini")
    lln = cfg.solve_lln()
    rep = run_lln_experiment(cfg, lln)
    header, rows = rep.tables["lln_errors"]
    assert [r[0] for r in rows] == [200, 800]
    assert rows[1][2] < rows[0][2]
    crep = run_clt_experiment(cfg, lln)
    assert any(c.name == "Var S^N(0) = 0" and c.passed for c in crep.criteria)


def test_simulate_is_byte_identical_across_runs_and_threads(tmp_path):
    p = write_cfg(tmp_path)
    assert main(["simulate", "--config", str(p), "--replicas", "3", "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--config", str(p), "--replicas", "3", "--threads", "3",
                 "--out", str(tmp_path / "b")]) == 0
    for name in ("events_0002.csv", "grid_0000.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_lln_command_with_oracle(tmp_path):
    p = write_cfg(tmp_path)
    assert main(["lln", "--config", str(p), "--oracle"]) == 0
    lln = np.loadtxt(tmp_path / "out" / "lln.csv", delimiter=",", skiprows=1)
    ode = np.loadtxt(tmp_path / "out" / "ode_oracle.csv", delimiter=",", skiprows=1)
    # LLN solved at dt / 10 = 0.01
    assert np.max(np.abs(lln[:, [1, 4, 5]] - ode[:, 1:])) <= 5 * 0.01**2


def test_clt_command_tables(tmp_path):
    p = write_cfg(tmp_path)
    assert main(["clt", "--config", str(p), "--paths", "100"]) == 0
    rows = list(csv.reader(open(tmp_path / "out" / "clt_paths_summary.csv")))
    assert rows[0][:3] == ["t", "mean_S", "var_S"] and len(rows) == 1 + 20 + 1
    assert float(rows[1][2]) == 0.0


def test_cli_reports_config_errors(tmp_path, capsys):
    p = write_cfg(tmp_path, SMALL.replace("rate = 0.25", "rate = -1"))
    assert main(["lln", "--config", str(p)]) == 2
    err = capsys.readouterr().err
    assert err.startswith("agesir: error: ") and f"{p}:5:" in err
    assert main(["lln"]) == 2


def test_cli_entry_point_usage_errors():
    res = subprocess.run([sys.executable, "-m", "agesir.cli", "frobnicate"], capture_output=True, text=True)
    assert res.returncode == 2 and "usage" in res.stderr
    res = subprocess.run([sys.executable, "-m", "agesir.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "verify" in res.stdout


def test_no_transmission_lln_error_is_initial_noise_only(tmp_path):
    cfg = parse_config(SMALL.format(out=tmp_path).replace("beta = 0.4", "beta = 0"), "exp.ini")
    rep = run_lln_experiment(cfg, N_list=[2000], replicas=20)
    _, rows = rep.tables["lln_errors"]
    assert rows[0][2] <= 3 / np.sqrt(2000)
