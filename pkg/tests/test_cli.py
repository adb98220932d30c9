import hashlib
import os
import subprocess
import sys
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from sddelab.action import path_action
from sddelab.artifacts import fmt, read_csv, read_path_csv, write_path_csv
from sddelab.cli import main, run
from sddelab.config import parse_config
from sddelab.errors import ConfigError
from sddelab.integrate import solve_dde
from sddelab.models import LinearDelayParams, build_linear_model
from sddelab.segments import GridSpec, HistorySegment

SMALL = """\
[model]
kind = "linear"
A = 0.0
B = 1.0
sigma0 = 1.0
tau = 0.5

[grid]
step = 0.03125
horizons = [1, 2, 4, 8]

[domain]
kind = "equilibrium"
center = [0.0]
radius = 0.5

[stability]
taus = [0.5, 1.5, 1.5707963267948966, 2.0]

[quasipotential]
eta_sequence = [0.05, 0.025, 0.01]
restarts = 0

[sweep]
epsilons = [0.3, 0.2]
trials = 200
t_max_factor = 2.0
seed = 7

[importance]
epsilon = 0.2
horizon = 1.0
trials = 500

[output]
directory = "out"
formats = ["csv", "svg"]
"""


def _write(tmp_path, text=SMALL, name="exp.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _drop_block(text, block):
    out, skip = [], False
    for line in text.splitlines():
        if line.startswith("["):
            skip = line.strip() == f"[{block}]"
        if not skip:
            out.append(line)
    return "\n".join(out) + "\n"


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("full")
    cfg = _write(root)
    files = run("full", cfg)
    return cfg, files


def test_stability_lists_critical_delay(tmp_path):
    files = run("stability", _write(tmp_path))
    comment, header, rows = read_csv(files[0])
    assert header == ["tau", "rightmost_real", "rightmost_imag", "tau0", "stable"]
    assert rows[0][3] == "1.5707963267948966"
    assert [r[4] for r in rows][:2] == ["true", "true"] and rows[-1][4] == "false"
    # at tau0 itself the root sits on the imaginary axis
    assert abs(float(rows[2][1])) < 1e-9 and float(rows[2][2]) == pytest.approx(1.0)
    assert float(rows[-1][1]) > 0 and float(rows[0][1]) < 0


def test_full_writes_every_artifact(full_run):
    cfg, files = full_run
    names = sorted(p.name for p in files)
    assert names == sorted(["stability.csv", "quasipotential.csv", "minimizing_path.csv",
                            "action.csv", "sweep.csv", "sweep.svg", "importance.csv"])
    assert all(p.parent == cfg.parent / "out" for p in files)


def test_artifacts_carry_config_hash(full_run):
    cfg, files = full_run
    digest = hashlib.sha256(cfg.read_bytes()).hexdigest()
    for p in files:
        if p.suffix == ".csv":
            first = p.read_text().splitlines()[0]
            assert first == f"# sddelab {first.split()[2]} config_sha256={digest} seed=7"
        else:
            assert digest in p.read_text()


def test_minimizing_path_round_trip(full_run):
    cfg, files = full_run
    out = cfg.parent / "out"
    _, header, rows = read_csv(out / "quasipotential.csv")
    # the smallest-eta upper-threshold row selected at its horizon
    sel = [r for r in rows if r[0] == "upper" and r[1] == "0.01" and r[5] == "true"]
    assert len(sel) == 1
    horizon = float(sel[0][3])
    grid = GridSpec(0.5, 0.03125, horizon)
    path = read_path_csv(out / "minimizing_path.csv", grid)
    model = build_linear_model(LinearDelayParams(0.0, 1.0), 0.5)
    assert path_action(model, path).value == pytest.approx(float(sel[0][4]), rel=1e-10)
    _, _, act = read_csv(out / "action.csv")
    assert float(act[-1][3]) == pytest.approx(float(sel[0][4]), rel=1e-10)


def test_sweep_csv_and_svg(full_run):
    cfg, _ = full_run
    out = cfg.parent / "out"
    _, header, rows = read_csv(out / "sweep.csv")
    assert header[:7] == ["epsilon", "trials", "censored_fraction", "mean_exit", "mean_ci_low",
                          "mean_ci_high", "eps_log_mean"]
    assert [r[-1] for r in rows] == ["ok", "ok"]
    root = ET.parse(out / "sweep.svg").getroot()
    lines = root.findall(".//{http://www.w3.org/2000/svg}polyline")
    assert len(lines) == 3
    assert not root.findall(".//{http://www.w3.org/2000/svg}script")


def test_full_rerun_is_byte_identical(full_run, tmp_path):
    cfg, files = full_run
    again = run("full", _write(tmp_path))
    for a, b in zip(sorted(files), sorted(again)):
        assert a.name == b.name
        if a.suffix == ".csv":
            assert a.read_bytes() == b.read_bytes(), a.name


def test_missing_block_is_named(tmp_path):
    cfg = _write(tmp_path, _drop_block(SMALL, "domain"))
    with pytest.raises(ConfigError, match=r"\[domain\]"):
        run("sweep", cfg)
    assert main(["sweep", "--config", str(cfg)]) == 2


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ConfigError) as info:
        parse_config("[model]\nkind = \"linear\"\ntau = = 1\n")
    assert info.value.line == 3
    with pytest.raises(ConfigError) as info:
        parse_config("[model]\nkind = \"linear\"\n\n[grid]\nstepp = 0.1\n")
    assert info.value.line == 5 and "stepp" in str(info.value)
    with pytest.raises(ConfigError, match="unknown block"):
        parse_config("[modle]\nkind = 1\n")


def test_bad_values_are_config_errors(tmp_path):
    text = SMALL.replace("step = 0.03125", "step = 0.3")
    with pytest.raises(ConfigError) as info:
        run("stability", _write(tmp_path, text))
    assert info.value.line == 9
    with pytest.raises(ConfigError):
        run("stability", _write(tmp_path, SMALL.replace("B = 1.0", "B = \"one\"")))
    with pytest.raises(ConfigError):
        run("stability", _write(tmp_path), threads=0)


def test_pipeline_errors_exit_nonzero(tmp_path, capsys):
    # ball larger than the deterministic basin check allows: start outside the domain
    text = SMALL.replace("[sweep]\n", "[sweep]\ninitial = [0.9]\nthresholds = [0.14, 0.15]\n")
    status = main(["sweep", "--config", str(_write(tmp_path, text))])
    assert status == 1
    assert "sweep:" in capsys.readouterr().err


def test_action_command_reads_a_path_file(tmp_path):
    g = GridSpec(0.5, 0.03125, 1.0)
    model = build_linear_model(LinearDelayParams(0.0, 1.0), 0.5)
    path = solve_dde(model, HistorySegment.constant(g, 0.3), g)
    write_path_csv(tmp_path / "p.csv", "# hand made", path)
    files = run("action", _write(tmp_path, SMALL + "\n[action]\npath = \"p.csv\"\n"))
    _, _, rows = read_csv(files[0])
    assert len(rows) == g.n_steps
    assert max(float(r[2]) for r in rows) < 1e-24


def test_orbit_command(tmp_path):
    text = """\
[model]
kind = "negative_feedback"
tau = 3.0
sigma0 = 0.0
[grid]
step = 0.01
[orbit]
initial = 1.0
transient = 100.0
"""
    files = run("orbit", _write(tmp_path, text), out=tmp_path / "o")
    _, header, rows = read_csv(files[0])
    assert header == ["t", "period", "is_equilibrium", "slowly_oscillating", "x0"]
    assert float(rows[0][1]) > 6.0 and rows[0][3] == "true"


def test_csv_number_format():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(True) == "true" and fmt(3) == "3"
    assert float(fmt(np.pi)) == np.pi


def test_threads_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("SDDELAB_THREADS", "nope")
    with pytest.raises(ConfigError):
        run("stability", _write(tmp_path))
    monkeypatch.setenv("SDDELAB_THREADS", "2")
    assert run("stability", _write(tmp_path))


def test_console_entry_point(tmp_path):
    cfg = _write(tmp_path)
    env = dict(os.environ)
    env["PYTHONPATH"] = str(Path(__file__).resolve().parents[1] / "src")
    proc = subprocess.run([sys.executable, "-m", "sddelab.cli", "stability", "--config",
                           str(cfg), "--out", str(tmp_path / "x")],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.strip().endswith("stability.csv")
    bad = subprocess.run([sys.executable, "-m", "sddelab.cli", "stability", "--config",
                          str(tmp_path / "missing.toml")], capture_output=True, text=True, env=env)
    assert bad.returncode != 0
