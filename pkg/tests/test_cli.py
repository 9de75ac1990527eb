import json

import pytest

from gofar.cli import main


def test_collect_and_solve_and_evaluate_roundtrip(tmp_path, capsys):
    data = tmp_path / "data.jsonl"
    assert main(["collect", "--env", "grid:3x3", "--n", "200",
                 "--horizon", "20", "--seed", "0",
                 "--out", str(data)]) == 0
    policy = tmp_path / "policy.json"
    assert main(["solve-tabular", "--env", "grid:3x3",
                 "--data", str(data), "--out", str(policy)]) == 0
    doc = json.loads(policy.read_text())
    assert "probs" in doc
    out = tmp_path / "metrics.csv"
    assert main(["evaluate", "--env", "grid:3x3", "--policy", str(policy),
                 "--episodes", "10", "--horizon", "20",
                 "--out", str(out)]) == 0
    captured = capsys.readouterr().out
    assert "return" in captured
    assert out.read_text().startswith("discounted_return,")


def test_collect_pointreach(tmp_path):
    out = tmp_path / "trajs.npz"
    assert main(["collect", "--env", "pointreach", "--n", "5",
                 "--horizon", "10", "--out", str(out)]) == 0
    assert out.exists()


def test_plan_transfer_command(tmp_path, capsys):
    out = tmp_path / "transfer.csv"
    assert main(["plan-transfer", "--out", str(out),
                 "--n-goals", "20"]) == 0
    assert "hierarchical" in capsys.readouterr().out
    assert out.exists()


def test_unknown_env_rejected(tmp_path):
    with pytest.raises(SystemExit):
        main(["collect", "--env", "mujoco", "--out",
              str(tmp_path / "x.jsonl")])


def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL " not in out
