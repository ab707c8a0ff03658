import json
import subprocess
import sys
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from slqsim import cli
from slqsim.model import ConfigError, SystemConfig
from slqsim.verify import run_checks

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """\
# tiny system for fast CLI runs
n = 6
m = 2
d = 2
lambda = 0.2
mu = 1.0
gamma = 1.0
policy = SLQ
sampling_mode = WithoutReplacement
"""


@pytest.fixture
def small_conf(tmp_path):
    p = tmp_path / "small.conf"
    p.write_text(SMALL)
    return p


def test_parse_kv_comments_and_errors():
    assert cli.parse_kv("a = 1  # note\n\n# skip\nb=x") == {"a": "1", "b": "x"}
    with pytest.raises(ConfigError, match="line 1"):
        cli.parse_kv("no equals sign")
    with pytest.raises(ConfigError, match="duplicate"):
        cli.parse_kv("a=1\na=2")


def test_shipped_baseline_config():
    cfg = cli.load_config(CONFIGS / "baseline.conf")
    assert cfg == SystemConfig.baseline()


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("sweep_*.conf")))
def test_shipped_plans_validate(name):
    plan = cli.plan_from_kv(cli.parse_kv((CONFIGS / name).read_text()))
    assert plan.seeds == [1, 2, 3]
    assert plan.n_arrivals == 10**7


@given(
    st.integers(1, 500), st.integers(1, 500), st.integers(1, 8),
    st.floats(1e-6, 1e3, allow_nan=False), st.floats(1e-6, 1e3), st.floats(1e-6, 1e3),
    st.sampled_from(["SLQ", "JSQ"]), st.sampled_from(["WithReplacement", "WithoutReplacement"]),
)
def test_config_round_trip(n, m, d, lam, mu, gamma, policy, mode):
    cfg = SystemConfig(n=n, m=m, d=d, lam=lam, mu=mu, gamma=gamma, policy=policy, sampling_mode=mode)
    if cli.config_errors(cfg):
        return
    text = cli.config_to_kv(cfg)
    again = cli.config_from_kv(cli.parse_kv(text))
    assert again == cfg
    assert cli.config_to_kv(again) == text


def test_plan_round_trip():
    plan = cli.plan_from_kv(cli.parse_kv((CONFIGS / "sweep_gamma.conf").read_text()))
    again = cli.plan_from_kv(cli.parse_kv(cli.plan_to_kv(plan)))
    assert again == plan


def test_m_axis_holds_load_fixed():
    plan = cli.plan_from_kv(cli.parse_kv((CONFIGS / "sweep_m.conf").read_text()))
    loads = [c.offered_load for c in plan.points()]
    assert loads == pytest.approx([0.9] * 4)
    assert [c.m for c in plan.points()] == [5, 10, 20, 40]


def test_plan_rejects_invalid_point_before_running():
    text = SMALL + "sweep_axis = d\nsweep_values = 1, 2, 9\n"
    with pytest.raises(ConfigError, match="d=9"):
        cli.plan_from_kv(cli.parse_kv(text))
    with pytest.raises(ConfigError, match="sweep_axis"):
        cli.plan_from_kv(cli.parse_kv(SMALL + "sweep_axis = mu\nsweep_values = 1\n"))


def test_run_writes_report(small_conf, tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["run", str(small_conf), "--arrivals", "20000", "--seed", "3", "--out", str(out)])
    assert code == cli.EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["arrivals"] == 20000 and report["percentage_error"] >= 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("SLQ(d=2) w=") and "predicted=" in line


def test_run_policy_flag(small_conf, capsys):
    assert cli.main(["run", str(small_conf), "--policy", "jsq", "--arrivals", "5000"]) == 0
    assert capsys.readouterr().out.startswith("JSQ(d=2)")


def test_run_analytic_only(tmp_path, capsys):
    out = tmp_path / "a"
    code = cli.main(["run", str(CONFIGS / "baseline.conf"), "--analytic-only", "--out", str(out)])
    assert code == 0
    data = json.loads((out / "analytic.json").read_text())
    assert data["predicted_response_time"] == pytest.approx(32.4634208501133, abs=1e-9)
    assert "32.4634" in capsys.readouterr().out


def test_config_errors_have_distinct_exit_code(tmp_path):
    bad = tmp_path / "bad.conf"
    bad.write_text(SMALL.replace("d = 2", "d = 9"))
    assert cli.main(["run", str(bad)]) == cli.EXIT_CONFIG
    assert cli.main(["run", str(tmp_path / "missing.conf")]) == cli.EXIT_CONFIG
    assert cli.main(["sweep", str(tmp_path / "missing.conf")]) == cli.EXIT_CONFIG
    assert cli.EXIT_CONFIG not in (cli.EXIT_OK, cli.EXIT_FAILED)


def _plan(tmp_path, extra):
    p = tmp_path / "plan.conf"
    p.write_text(SMALL + extra)
    return p


def test_sweep_csv_is_deterministic_and_versioned(tmp_path):
    plan = _plan(tmp_path, "sweep_axis = d\nsweep_values = 1, 2\nseeds = 1, 2\nn_arrivals = 4000\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(["sweep", str(plan), "--out", str(a)]) == 0
    assert cli.main(["sweep", str(plan), "--out", str(b), "--workers", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()
    text = a.read_text()
    assert text.startswith("# slqsim-sweep v1\n")
    rows = cli.read_sweep_csv(text)
    assert [(r["value"], r["seed"]) for r in rows] == [("1", "1"), ("1", "2"), ("2", "1"), ("2", "2")]
    assert all(r["status"] == "ok" for r in rows)
    assert list(rows[0]) == cli.SWEEP_COLUMNS


def test_sweep_records_point_failures_in_row(tmp_path, monkeypatch):
    def boom(cfg, *a, **k):
        if cfg.d == 2:
            raise RuntimeError("kernel exploded")
        return real(cfg, *a, **k)

    real = cli.run_simulation
    monkeypatch.setattr(cli, "run_simulation", boom)
    plan = cli.plan_from_kv(cli.parse_kv(SMALL + "sweep_axis = d\nsweep_values = 1, 2\nn_arrivals = 2000\n"))
    rows = cli.run_sweep(plan)
    assert rows[0]["status"] == "ok"
    assert rows[1]["status"].startswith("error: RuntimeError: kernel exploded")


def test_equilibrium_export(tmp_path):
    out = tmp_path / "eq.csv"
    assert cli.main(["equilibrium", str(CONFIGS / "baseline.conf"), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "i,pi,density"
    assert lines[2].startswith("1,0.68377223398316")


def test_equilibrium_unstable_is_config_error(tmp_path):
    p = tmp_path / "u.conf"
    p.write_text(SMALL.replace("lambda = 0.2", "lambda = 0.5"))
    assert cli.main(["equilibrium", str(p)]) == cli.EXIT_CONFIG


def test_meanfield_export(tmp_path):
    out = tmp_path / "traj.csv"
    code = cli.main(["meanfield", str(CONFIGS / "baseline.conf"), "--t-end", "5",
                     "--record-every", "1", "--i-max", "8", "--out", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("t,y,x_1")
    assert len(lines) == 1 + 6


def test_verify_quick_passes():
    results = run_checks(quick=True)
    assert all(r.passed for r in results), [r.line() for r in results if not r.passed]


@pytest.mark.slow
def test_verify_mutant_is_caught():
    results = run_checks(quick=False, mutate=True)
    assert not all(r.passed for r in results)
    failed = [r.name for r in results if not r.passed]
    assert all(name.startswith("oracle") for name in failed)


def test_console_entry_point(small_conf):
    proc = subprocess.run(
        [sys.executable, "-m", "slqsim.cli", "run", str(small_conf), "--arrivals", "2000"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert "w=" in proc.stdout
