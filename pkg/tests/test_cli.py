import json
import subprocess
import sys

import numpy as np
import pytest

from mtml_reid.association import read_dump
from mtml_reid.cli import RunConfig, main
from mtml_reid.datagen import CameraView, ICSDataset, load_dataset, save_dataset
from mtml_reid.evaluation import association_dynamics_report
from mtml_reid.model import ModelParams, load_checkpoint, save_checkpoint
from mtml_reid.trainer import read_metrics

FAST = {
    "synth": {"num_global_identities": 6, "num_cameras": 2, "feature_dim": 4,
              "images_per_identity_per_camera": 3, "camera_presence_probability": 1.0},
    "model": {"hidden_dims": [8], "feature_dim": 4},
    "train": {"pretrain_epochs": 3, "pretrain_decay_every": 2, "ml_iterations": 8,
              "epochs_per_iteration": 2, "ml_decay_after_epoch": 1},
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(FAST))
    return str(path)


@pytest.fixture
def run(tmp_path, config_file):
    """Generate a train/test pair and train on it; returns the paths involved."""
    data = tmp_path / "data"
    data.mkdir()
    assert main(["generate", "--config", config_file, "--out", str(data / "train.csv"),
                 "--test-out", str(data / "test.csv")]) == 0
    run_dir = tmp_path / "run"
    run_dir.mkdir()
    assert main(["train", "--config", config_file, "--dataset", str(data / "train.csv"),
                 "--out-dir", str(run_dir)]) == 0
    return data, run_dir


def test_generate_writes_valid_dataset(tmp_path, config_file, capsys):
    out = tmp_path / "ds.csv"
    assert main(["generate", "--config", config_file, "--out", str(out)]) == 0
    ds = load_dataset(out)
    assert ds.num_cameras == 2 and ds.feature_dim == 4 and ds.ground_truth is not None
    assert "camera 1: N=6" in capsys.readouterr().out
    assert json.loads((tmp_path / "effective_config.json").read_text())["synth"]["num_global_identities"] == 6


def test_generate_is_seed_deterministic(tmp_path, config_file):
    a, b, c = (tmp_path / n for n in ("a.csv", "b.csv", "c.csv"))
    for path, seed in ((a, "7"), (b, "7"), (c, "8")):
        assert main(["generate", "--config", config_file, "--seed", seed, "--out", str(path)]) == 0
    assert a.read_bytes() == b.read_bytes() != c.read_bytes()


def test_missing_output_dir_is_runtime_error(tmp_path, config_file, capsys):
    assert main(["generate", "--config", config_file, "--out", str(tmp_path / "nope" / "ds.csv")]) == 2
    assert "does not exist" in capsys.readouterr().err


def test_usage_errors_exit_one(config_file):
    with pytest.raises(SystemExit) as exc:
        main(["generate"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    assert main(["generate", "--config", config_file, "--set", "synth.bogus=1", "--out", "x.csv"]) == 1


def test_flags_override_file(tmp_path, config_file):
    out = tmp_path / "ds.csv"
    assert main(["generate", "--config", config_file, "--set", "synth.num_cameras=3",
                 "--out", str(out)]) == 0
    assert load_dataset(out).num_cameras == 3
    cfg = json.loads((tmp_path / "effective_config.json").read_text())
    assert cfg["synth"]["num_cameras"] == 3
    assert RunConfig.from_dict(cfg).to_json() == (tmp_path / "effective_config.json").read_text()


def test_train_outputs(run):
    _, run_dir = run
    names = sorted(p.name for p in (run_dir / "checkpoints").iterdir())
    assert names == ["final.ckpt", *[f"iter_{i:02d}.ckpt" for i in range(1, 9)], "pretrain.ckpt"]
    dumps = sorted((run_dir / "associations").glob("round_*.csv"))
    assert len(dumps) == 8
    rows = read_metrics(run_dir / "metrics.csv")
    assert len(rows) == 3 + 8 * 2
    assert (run_dir / "effective_config.json").exists()
    assert load_checkpoint(run_dir / "checkpoints" / "final.ckpt") == load_checkpoint(
        run_dir / "checkpoints" / "iter_08.ckpt")


def test_train_is_deterministic(tmp_path, run, config_file):
    data, run_dir = run
    again = tmp_path / "again"
    again.mkdir()
    assert main(["train", "--config", config_file, "--dataset", str(data / "train.csv"),
                 "--out-dir", str(again)]) == 0
    for rel in ("metrics.csv", "checkpoints/final.ckpt", "associations/round_08.csv"):
        assert (run_dir / rel).read_bytes() == (again / rel).read_bytes()


def test_mt_only_has_zero_ml_column(tmp_path, run, config_file):
    data, _ = run
    out = tmp_path / "mt"
    out.mkdir()
    assert main(["train", "--config", config_file, "--mt-only", "--dataset", str(data / "train.csv"),
                 "--out-dir", str(out)]) == 0
    assert {r["ml_loss"] for r in read_metrics(out / "metrics.csv")} == {"0.0"}


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_failure_reports_last_checkpoint(tmp_path, run, config_file, capsys):
    data, _ = run
    out = tmp_path / "boom"
    out.mkdir()
    code = main(["train", "--config", config_file, "--set", "train.ml_base_lr=1e300",
                 "--dataset", str(data / "train.csv"), "--out-dir", str(out)])
    assert code == 2
    assert "pretrain.ckpt" in capsys.readouterr().err
    assert (out / "metrics.csv").exists()


def test_eval_writes_reports(tmp_path, run, config_file):
    data, run_dir = run
    out = tmp_path / "eval"
    out.mkdir()
    reports = []
    for name in ("pretrain", "final"):
        assert main(["eval", "--config", config_file, "--checkpoint", str(run_dir / "checkpoints" / f"{name}.ckpt"),
                     "--dataset", str(data / "test.csv"), "--out-dir", str(out)]) == 0
        reports.append((out / "eval.csv").read_text().splitlines())
    assert [l.split(",")[0] for l in reports[0]] == [l.split(",")[0] for l in reports[1]]
    assert reports[0][:2] == ["# mtml-eval v1", "metric,value"]


def test_eval_mismatched_feature_dim(tmp_path, run, config_file, capsys):
    data, run_dir = run
    args = ["eval", "--config", config_file, "--checkpoint", str(run_dir / "checkpoints" / "final.ckpt"),
            "--out-dir", str(tmp_path)]
    assert main(args + ["--dataset", str(data / "test.csv"), "--feature-dim", "5"]) == 2
    assert "incompatible artifacts" in capsys.readouterr().err
    other = tmp_path / "wide.csv"
    save_dataset(ICSDataset(1, 3, [CameraView(1, 1, np.zeros((2, 3)), [0, 0], [0, 0])]), other)
    assert main(args + ["--dataset", str(other)]) == 2
    assert "incompatible artifacts" in capsys.readouterr().err


def test_eval_perfect_embedding(tmp_path):
    centers = np.eye(3) * 5.0
    gids = np.repeat(np.arange(3), 4)
    cams = [CameraView(c, 3, centers[gids], np.repeat(np.arange(3), 4), gids) for c in (1, 2)]
    save_dataset(ICSDataset(2, 3, cams), tmp_path / "ds.csv")
    identity = ModelParams([(np.eye(3), np.zeros(3))], [(np.eye(3), np.zeros(3))] * 2)
    save_checkpoint(identity, tmp_path / "id.ckpt")
    assert main(["eval", "--checkpoint", str(tmp_path / "id.ckpt"), "--dataset", str(tmp_path / "ds.csv"),
                 "--out-dir", str(tmp_path)]) == 0
    rows = dict(line.split(",") for line in (tmp_path / "eval.csv").read_text().splitlines()[2:])
    assert rows["R1"] == "1.0" and rows["mAP"] == "1.0"


def test_dynamics(run, capsys):
    _, run_dir = run
    assert main(["dynamics", "--run-dir", str(run_dir)]) == 0
    lines = (run_dir / "dynamics.csv").read_text().splitlines()
    assert lines[:2] == ["# mtml-dynamics v1", "round,pairs,precision"]
    assert len(lines) == 2 + 8
    raw = [row for p in sorted((run_dir / "associations").glob("*.csv")) for row in read_dump(p)]
    counts = {r.round: r.count for r in association_dynamics_report(raw, range(1, 9))}
    assert [int(l.split(",")[1]) for l in lines[2:]] == [counts[r] for r in range(1, 9)]
    assert "round" in capsys.readouterr().out


def test_dynamics_without_ground_truth(tmp_path, config_file):
    ds = load_dataset_no_gt(tmp_path, config_file)
    run_dir = tmp_path / "nogt"
    run_dir.mkdir()
    assert main(["train", "--config", config_file, "--dataset", str(ds), "--out-dir", str(run_dir)]) == 0
    assert main(["dynamics", "--run-dir", str(run_dir)]) == 0
    body = (run_dir / "dynamics.csv").read_text().splitlines()[2:]
    assert len(body) == 8 and all(line.endswith(",-") for line in body)


def load_dataset_no_gt(tmp_path, config_file):
    src = tmp_path / "gt.csv"
    assert main(["generate", "--config", config_file, "--out", str(src)]) == 0
    ds = load_dataset(src)
    stripped = ICSDataset(ds.num_cameras, ds.feature_dim,
                          [CameraView(c.camera_id, c.num_identities, c.features, c.labels) for c in ds.cameras])
    save_dataset(stripped, tmp_path / "nogt.csv")
    return tmp_path / "nogt.csv"


def test_dynamics_missing_dumps(tmp_path):
    assert main(["dynamics", "--run-dir", str(tmp_path)]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mtml_reid", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "generate" in proc.stdout
