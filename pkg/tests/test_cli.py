import json
import subprocess
import sys

import pytest

from herdrl import model
from herdrl.cli import main
from herdrl.core import Ablation, RngStream
from herdrl.sim.env import read_trajectory


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = {"scenario": {"n_humans": 2, "n_other_robots": 1},
           "train": {"episodes": 3, "warmup": 30, "batch_size": 8, "checkpoint_every": 10}}
    (root / "cfg.json").write_text(json.dumps(cfg))
    (root / "scn.json").write_text(json.dumps({"n_humans": 2, "n_other_robots": 1}))
    assert main(["train", "--config", str(root / "cfg.json"), "--out", str(root / "run")]) == 0
    return root


def test_train_outputs(trained):
    assert (trained / "run" / "ckpt_3.bin").is_file()
    assert len((trained / "run" / "train_log.jsonl").read_text().splitlines()) == 3


def test_eval_writes_report(trained, capsys):
    report = trained / "report.json"
    code = main(["eval", "--ckpt", str(trained / "run" / "ckpt_3.bin"), "--scenario", str(trained / "scn.json"),
                 "--episodes", "3", "--seed", "1", "--report", str(report)])
    assert code == 0
    data = json.loads(report.read_text(encoding="utf-8"))
    assert set(data) == {"SR", "CR", "AT", "DR", "MD", "n_episodes"} and data["n_episodes"] == 3


def test_rollout_round_trip(trained, capsys):
    traj = trained / "traj.jsonl"
    code = main(["rollout", "--ckpt", str(trained / "run" / "ckpt_3.bin"), "--scenario", str(trained / "scn.json"),
                 "--seed", "2", "--traj", str(traj)])
    assert code == 0
    recs = read_trajectory(traj)
    assert recs[-1]["event"] != "None"
    assert len(recs) * 0.25 == pytest.approx(recs[-1]["t"], abs=1e-12)
    assert f"{len(recs)} steps" in capsys.readouterr().out


def test_missing_checkpoint_exit_2(tmp_path, capsys):
    missing = tmp_path / "nope.bin"
    code = main(["eval", "--ckpt", str(missing), "--scenario", "x.json", "--report", str(tmp_path / "r.json")])
    assert code == 2
    assert str(missing) in capsys.readouterr().err


def test_ablation_mismatch_exit_2(tmp_path, capsys):
    ckpt = tmp_path / "hor.bin"
    model.save_checkpoint(ckpt, model.init_params(RngStream(0, "init"), Ablation.HoR), Ablation.HoR)
    (tmp_path / "s.json").write_text(json.dumps({"ablation": "HeR"}))
    code = main(["eval", "--ckpt", str(ckpt), "--scenario", str(tmp_path / "s.json"), "--report",
                 str(tmp_path / "r.json")])
    assert code == 2
    assert "ablation" in capsys.readouterr().err


def test_corrupt_checkpoint_exit_2(tmp_path):
    ckpt = tmp_path / "bad.bin"
    ckpt.write_bytes(b"garbage")
    (tmp_path / "s.json").write_text("{}")
    assert main(["rollout", "--ckpt", str(ckpt), "--scenario", str(tmp_path / "s.json"), "--traj",
                 str(tmp_path / "t.jsonl")]) == 2


@pytest.mark.parametrize("argv", [[], ["fly"], ["eval", "--bogus"], ["selfcheck", "--nope"],
                                  ["eval", "--ckpt", "a", "--scenario", "b", "--report", "c", "--episodes", "x"]])
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == 1
    assert "usage" in capsys.readouterr().err


def test_bad_config_exit_2(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"scenario": {"n_humanz": 1}}))
    assert main(["train", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == 2


def test_selfcheck(capsys):
    assert main(["selfcheck"]) == 0
    out = capsys.readouterr().out
    assert "4/4 checks passed" in out


def test_console_module_entry():
    res = subprocess.run([sys.executable, "-m", "herdrl.cli", "selfcheck", "--quick"], capture_output=True, text=True)
    assert res.returncode == 0 and "checks passed" in res.stdout
