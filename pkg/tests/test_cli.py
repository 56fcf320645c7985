import subprocess
import sys

import pytest

from lrslab.cli import main

CHAIN = """\
[experiment]
name = cli_chain
room = chain
lrs = rule1
seeds = 1-3
episodes = 30

[ppo]
learning_rate = 0.05
rollout_length = 16
n_envs = 2
"""


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "chain.cfg"
    path.write_text(CHAIN)
    return path


def test_run_compare_heatmap(tmp_path, cfg_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(cfg_path), "--out", str(a)]) == 0
    assert main(["run", "--config", str(cfg_path), "--out", str(b), "--lrs", "off"]) == 0
    out = capsys.readouterr().out
    assert "seed 3" in out and "AUC" in out
    assert main(["compare", str(a), str(b)]) == 0
    assert "one-sided Mann-Whitney" in capsys.readouterr().out
    assert main(["heatmap", str(a), "--out", str(tmp_path / "hm")]) == 0
    assert (tmp_path / "hm" / "heatmap.pgm").read_bytes().startswith(b"P2")


def test_run_overrides(tmp_path, cfg_path):
    out = tmp_path / "o"
    assert main(["run", str(cfg_path), "--out", str(out), "--seeds", "7", "--episodes", "5", "--agent", "ppo"]) == 0
    text = (out / "config.ini").read_text()
    assert "seeds = 7" in text and "episodes = 5" in text and "agent = ppo" in text
    assert (out / "seed_07" / "record.csv").read_text().count("\n") == 6


def test_errors_return_two(tmp_path, cfg_path, capsys):
    assert main(["run", str(tmp_path / "missing.cfg")]) == 2
    assert main(["run", str(cfg_path), "--seeds", "1,1", "--out", str(tmp_path / "x")]) == 2
    assert main(["compare", str(tmp_path), str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["run", "--room", "Q9"])


def test_verify_theory_command(tmp_path):
    assert main(["verify-theory", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "convergence_sweep.csv").read_text().startswith("testbed,")


def test_sweep_command(tmp_path, cfg_path, capsys):
    assert main(["sweep-granularity", str(cfg_path), "--out", str(tmp_path), "--episodes", "10"]) == 0
    out = capsys.readouterr().out
    assert "type1(2)" in out and "type2" in out


def test_console_module_help():
    proc = subprocess.run([sys.executable, "-m", "lrslab.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "verify-theory" in proc.stdout
