import json

import pytest

from cli import main, parse_state
from models import DepcagError


def read_json(path):
    return json.loads(path.read_text())


def test_verify_scalar_decay(config_path, tmp_path):
    out = tmp_path / "report.json"
    assert main(["verify", str(config_path("scalar_decay")), "--out", str(out)]) == 0
    report = read_json(out)
    assert report["command"] == "verify"
    assert report["checks"]["eq10a"]["pass"] is True
    assert len(report["config_hash"]) == 64
    assert report["seed"] == 0


def test_verify_names_the_failed_condition(config_path, capsys):
    assert main(["verify", str(config_path("bad_grid"))]) == 2
    assert "A1" in capsys.readouterr().err


def test_config_flag_is_accepted(config_path, tmp_path):
    out = tmp_path / "report.json"
    assert main(["verify", "--config", str(config_path("scalar_decay")), "--out", str(out)]) == 0
    assert out.exists()


def test_same_seed_gives_identical_reports(config_path, tmp_path):
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    for out in (first, second):
        assert main(["verify", str(config_path("depcag_rotation")), "--seed", "3", "--out", str(out)]) == 0
    assert first.read_bytes() == second.read_bytes()
    assert read_json(first)["seed"] == 3


def test_simulate_single_point(config_path, tmp_path):
    out = tmp_path / "traj.csv"
    code = main(["simulate", str(config_path("scalar_decay")), "--from", "0", "--to", "0",
                 "--init", "1.5", "--out", str(out)])
    assert code == 0
    assert out.read_text().splitlines() == ["t,z1", "0,1.5"]


def test_simulate_rows(config_path, tmp_path):
    out = tmp_path / "traj.csv"
    code = main(["simulate", str(config_path("depcag_rotation")), "--from", "0", "--to", "2",
                 "--init", "1, 0", "--out", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "t,z1,z2"
    assert lines[1].startswith("0,1,0")
    assert float(lines[-1].split(",")[0]) == 2.0


def test_transition_csv(config_path, tmp_path):
    out = tmp_path / "z.csv"
    assert main(["transition", str(config_path("depcag_rotation")), "--t", "2", "--s", "0",
                 "--out", str(out)]) == 0
    rows = [[float(v) for v in line.split(",")] for line in out.read_text().splitlines()]
    assert len(rows) == 2 and all(len(row) == 2 for row in rows)


def test_gronwall_command(config_path, tmp_path):
    out = tmp_path / "gronwall.json"
    code = main(["gronwall", str(config_path("gronwall_drift")), "--from", "0", "--to", "5",
                 "--init", "1, 0", "--expr", "0.2", "--out", str(out)])
    assert code == 0
    report = read_json(out)
    assert report["constants"]["theta_bar"] == pytest.approx(0.4)
    assert report["results"] == {"expr": "0.2"}


def test_conjugate_needs_block_config(config_path, capsys):
    assert main(["conjugate", str(config_path("scalar_decay")), "--t", "0", "--state", "1"]) == 1
    assert "block system" in capsys.readouterr().err


def test_conjugate_linear_block_is_identity(config_path, tmp_path):
    out = tmp_path / "image.csv"
    assert main(["conjugate", str(config_path("block_linear")), "--t", "0", "--state", "0.5, -1",
                 "--out", str(out)]) == 0
    values = [float(v) for v in out.read_text().strip().split(",")]
    assert values == pytest.approx([0.5, -1.0], abs=1e-8)


@pytest.mark.parametrize("argv", [
    ["verify", "no/such/config.json"],
    ["verify"],
    ["simulate", "configs/scalar_decay.json", "--from", "0"],
    ["nonsense"],
])
def test_usage_errors_exit_with_one(argv):
    assert main(argv) == 1


def test_parse_state():
    assert parse_state("[1, 2.5]").tolist() == [1.0, 2.5]
    assert parse_state("3").tolist() == [3.0]
    with pytest.raises(DepcagError):
        parse_state("1, x")
