"""
The whole pipeline from the command line
========================================

Same steps as the shell commands::

    mtml-reid generate --config run.json --out data/train.csv --test-out data/test.csv
    mtml-reid train --config run.json --dataset data/train.csv --out-dir run
    mtml-reid eval --config run.json --checkpoint run/checkpoints/final.ckpt --dataset data/test.csv --out-dir run
    mtml-reid dynamics --run-dir run
"""

import json
import tempfile
from pathlib import Path

from mtml_reid.cli import main

root = Path(tempfile.mkdtemp())
(root / "data").mkdir()
(root / "run").mkdir()
config = {
    "synth": {"num_global_identities": 16, "num_cameras": 2, "feature_dim": 8},
    "model": {"hidden_dims": [32], "feature_dim": 16},
    "train": {"pretrain_epochs": 30, "ml_iterations": 3, "epochs_per_iteration": 5},
}
(root / "run.json").write_text(json.dumps(config))
cfg = str(root / "run.json")

main(["generate", "--config", cfg, "--out", str(root / "data/train.csv"), "--test-out", str(root / "data/test.csv")])
main(["train", "--config", cfg, "--dataset", str(root / "data/train.csv"), "--out-dir", str(root / "run")])
main(["eval", "--config", cfg, "--checkpoint", str(root / "run/checkpoints/final.ckpt"),
      "--dataset", str(root / "data/test.csv"), "--out-dir", str(root / "run")])
main(["dynamics", "--run-dir", str(root / "run")])
print("outputs in", root)
