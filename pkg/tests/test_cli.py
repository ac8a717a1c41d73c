import json

import pytest

from ccqsim.cli import main
from ccqsim.runner import dump_config

from test_runner import small


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text(dump_config(small(trajectories=8)))
    return p


def test_simulate(cfg_path, tmp_path, capsys):
    assert main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "o"),
                 "--seed", "3"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert sum(out["outcome_counts"].values()) == 8
    assert (tmp_path / "o" / "summary.json").exists()
    assert (tmp_path / "o" / "manifest.json").exists()


def test_simulate_frame_override(cfg_path, tmp_path, capsys):
    assert main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "o"),
                 "--frame", "lab-reduced"]) == 0
    lab = json.loads(capsys.readouterr().out)
    assert sum(lab["outcome_counts"].values()) == 8
    assert main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "o"),
                 "--frame", "sideways"]) == 1


def test_compensate_columns(cfg_path, tmp_path):
    assert main(["compensate", "--config", str(cfg_path), "--out", str(tmp_path),
                 "--mode", "adiabatic"]) == 0
    header = (tmp_path / "compensation.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "t_us" and len(header) == 7


def test_histogram_and_sweep(tmp_path):
    cfg = small(trajectories=4).with_(sweep={"eta_l_dB": [0.0], "eta_m": [1.0, 0.5],
                                             "widths_us": [0.4]})
    p = tmp_path / "c.toml"
    p.write_text(dump_config(cfg))
    assert main(["histogram", "--config", str(p), "--out", str(tmp_path / "h")]) == 0
    assert (tmp_path / "h" / "histogram.csv").exists()
    assert main(["sweep", "--config", str(p), "--out", str(tmp_path / "s")]) == 0
    rows = (tmp_path / "s" / "concurrence_grid.csv").read_text().splitlines()
    assert len(rows) == 2


def test_verify_slh(capsys):
    assert main(["verify-slh"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_exit_codes(cfg_path, tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "none.toml")]) == 1
    assert main(["simulate", "--config", str(cfg_path), "--workers", "0"]) == 1
    blocker = tmp_path / "blk"
    blocker.write_text("")
    assert main(["simulate", "--config", str(cfg_path), "--out", str(blocker / "x")]) == 3
    bad = tmp_path / "bad.toml"
    bad.write_text(dump_config(small()).replace("kappa1 = 1.5", "kappa1 = -1.5"))
    assert main(["simulate", "--config", str(bad)]) == 1
    assert "kappa1" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path):
    cfg = small(frame="full", trajectories=1, oracle_fock=3, snapshot_stride=10)
    p = tmp_path / "c.toml"
    p.write_text(dump_config(cfg))
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
