import json

import numpy as np
import pytest

from lidtwist import encoder as enc
from lidtwist.cli import main
from lidtwist.env import read_trace

TINY = [
    "--num-envs", "4",
    "--total-steps", "96",
    "--set", "ppo.hidden=16",
    "--set", "ppo.horizon=8",
    "--set", "encoder.mode=passthrough",
]


def train(tmp_path, name, *extra):
    out = tmp_path / name
    assert main(["train", *TINY, *extra, "--out", str(out)]) == 0
    return out


def test_train_writes_run_directory(tmp_path, capsys):
    out = train(tmp_path, "a", "--reward-set", "baseline", "--seed", "7")
    names = {p.name for p in out.iterdir()}
    assert {"config.ini", "run.json", "training.csv", "checkpoint_final.pt"} <= names
    ini = (out / "config.ini").read_text()
    assert "set = baseline" in ini and "lambda_rr = 850.0" in ini
    meta = json.loads((out / "run.json").read_text())
    assert meta["seed"] == 7 and meta["command"] == "train" and meta["build"]
    rows = (out / "training.csv").read_text().splitlines()
    assert rows[0].startswith("update,step,mean_return,rs") and len(rows) == 4
    assert "trained 96 steps" in capsys.readouterr().out


def test_training_csv_is_reproducible(tmp_path):
    a = train(tmp_path, "a", "--seed", "3")
    b = train(tmp_path, "b", "--seed", "3")
    c = train(tmp_path, "c", "--seed", "4")
    assert (a / "training.csv").read_bytes() == (b / "training.csv").read_bytes()
    assert (a / "training.csv").read_bytes() != (c / "training.csv").read_bytes()


def test_rerun_from_effective_config(tmp_path):
    a = train(tmp_path, "a", "--seed", "5")
    b = tmp_path / "b"
    assert main(["train", "--config", str(a / "config.ini"), "--out", str(b)]) == 0
    assert (a / "training.csv").read_bytes() == (b / "training.csv").read_bytes()


def test_eval_checkpoint_and_export(tmp_path, capsys):
    run = train(tmp_path, "a")
    ev = tmp_path / "ev"
    args = ["eval", *TINY, "--checkpoint", str(run / "checkpoint_final.pt"), "--episodes", "2", "--out", str(ev)]
    assert main(args + ["--set", "run.max_episode_length=30"]) == 0
    table = capsys.readouterr().out
    assert "checkpoint" in table and "RS [rad/step]" in table
    traces = sorted((ev / "traces").glob("*.jsonl"))
    assert len(traces) == 2
    assert read_trace(traces[0])["header"]["method"] == "checkpoint"
    assert main(["export", str(ev), "--out", str(tmp_path / "x")]) == 0
    assert (tmp_path / "x" / "export_metrics.csv").read_text() == (ev / "metrics.csv").read_text()


def test_eval_single_scripted_episode(tmp_path):
    ev = tmp_path / "ev"
    assert main(["eval", "--policy", "scripted", "--episodes", "1", "--set", "encoder.mode=passthrough", "--out", str(ev)]) == 0
    assert len(list((ev / "traces").glob("*.jsonl"))) == 1
    assert (ev / "metrics.txt").read_text().count("scripted") == 1


def test_missing_checkpoint(tmp_path, capsys):
    code = main(["eval", "--checkpoint", str(tmp_path / "nope.pt"), "--set", "encoder.mode=passthrough", "--out", str(tmp_path)])
    assert code == 1 and "nope.pt" in capsys.readouterr().err


@pytest.mark.parametrize("bad", ["lid.colour=red", "rewards.lambda_cpr=-1", "ppo.epochs=lots"])
def test_config_errors_exit_2(tmp_path, capsys, bad):
    assert main(["train", "--set", bad, "--out", str(tmp_path)]) == 2
    assert bad.split("=")[0] in capsys.readouterr().err


def test_export_without_traces(tmp_path):
    assert main(["export", str(tmp_path)]) == 1


def test_ablate_table(tmp_path, capsys):
    out = tmp_path / "ab"
    args = ["ablate", *TINY, "--episodes", "1", "--set", "run.max_episode_length=20", "--out", str(out)]
    assert main(args) == 0
    body = capsys.readouterr().out.splitlines()[2:]
    assert [line.split()[0] for line in body] == ["tac2motion", "cpr_rr", "crr_rr", "baseline"]
    first = (out / "ablation.txt").read_bytes()
    assert main(args) == 0
    assert (out / "ablation.txt").read_bytes() == first


def test_pretrain_encoder_file(tmp_path, capsys):
    path = tmp_path / "enc.bin"
    args = [
        "pretrain-encoder",
        "--set", "encoder.pretrain_episodes=4",
        "--set", "encoder.pretrain_steps=30",
        "--set", "encoder.pretrain_epochs=2",
        "--set", "encoder.hidden=8",
        "--set", "encoder.d_z=4",
        "--out", str(path),
    ]
    assert main(args) == 0
    raw = path.read_bytes()
    params = enc.from_bytes(raw)
    assert enc.to_bytes(params) == raw
    assert (params.window, params.k, params.d_z, params.frozen) == (10, 9, 4, True)
    assert params.checksum()[:16] in capsys.readouterr().out
    # a train run picks the file up and records its checksum
    run = train(tmp_path, "t", "--set", "encoder.mode=pretrained", "--set", f"encoder.path={path}")
    import torch

    ck = torch.load(run / "checkpoint_final.pt", weights_only=False)
    assert ck["extra"]["encoder"] == params.checksum()
    assert (run / "encoder.bin").read_bytes() == raw
