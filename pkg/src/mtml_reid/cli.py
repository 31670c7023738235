"""Command-line entry point: ``generate``, ``train``, ``eval`` and ``dynamics``.

Settings come from a JSON config file with ``synth``, ``model``, ``train``
and ``eval`` sections; command-line flags override it. Every command writes
the effective config next to its outputs.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .association import read_dump, write_dump
from .datagen import SynthConfig, generate_synthetic, load_dataset, save_dataset, split_identities
from .errors import IncompatibleArtifacts, MTMLError
from .evaluation import association_dynamics_report, build_problem, dynamics_csv, dynamics_table, evaluate
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, pretrain_mt, train_mtml, write_metrics

log = logging.getLogger("mtml_reid")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
CONFIG_NAME = "effective_config.json"


@dataclass
class ModelSection:
    hidden_dims: list[int] = field(default_factory=lambda: [64])
    feature_dim: int = 64
    init_scale: float = 1.0
    seed: int = 0


@dataclass
class EvalSection:
    probe_fraction: float = 0.25
    test_fraction: float = 0.5
    seed: int = 0


@dataclass
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = cls()
        for name, value in data.items():
            section = getattr(cfg, name, None)
            if section is None or not isinstance(value, dict):
                raise ValueError(f"unknown config section {name!r}")
            known = {f.name for f in fields(section)}
            for key, v in value.items():
                if key not in known:
                    raise ValueError(f"unknown config key {name}.{key}")
                setattr(section, key, v)
        return cfg

    def set(self, dotted: str, raw: str) -> None:
        """Override one ``section.key`` from a string, parsed as JSON when possible."""
        section_name, _, key = dotted.partition(".")
        section = getattr(self, section_name, None)
        if section is None or key not in {f.name for f in fields(section)}:
            raise ValueError(f"unknown config key {dotted!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        setattr(section, key, value)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = RunConfig.from_dict(json.loads(Path(args.config).read_text()))
    for item in args.set or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects section.key=value, got {item!r}")
        cfg.set(key, value)
    if getattr(args, "seed", None) is not None:
        cfg.synth.seed = cfg.model.seed = cfg.train.seed = args.seed
    return cfg


def _require_dir(path: Path) -> Path:
    if not path.is_dir():
        raise FileNotFoundError(f"output directory {path} does not exist")
    return path


def cmd_generate(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    _require_dir(out.parent)
    dataset = generate_synthetic(cfg.synth)
    if args.test_out:
        _require_dir(Path(args.test_out).parent)
        train, test = split_identities(dataset, cfg.eval.test_fraction, cfg.synth.seed)
        save_dataset(train, out)
        save_dataset(test, args.test_out)
        parts = [("train", train, out), ("test", test, Path(args.test_out))]
    else:
        save_dataset(dataset, out)
        parts = [("dataset", dataset, out)]
    (out.parent / CONFIG_NAME).write_text(cfg.to_json())
    for name, ds, path in parts:
        print(f"{name}: {path} M={ds.num_cameras} F={ds.feature_dim}")
        for c in ds.cameras:
            print(f"  camera {c.camera_id}: N={c.num_identities} samples={len(c)}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    if args.mt_only:
        cfg.train.mt_only = True
    run_dir = _require_dir(Path(args.out_dir))
    ckpt_dir = run_dir / "checkpoints"
    dump_dir = run_dir / "associations"
    ckpt_dir.mkdir(exist_ok=True)
    dump_dir.mkdir(exist_ok=True)
    (run_dir / CONFIG_NAME).write_text(cfg.to_json())

    dataset = load_dataset(args.dataset)
    model_config = ModelConfig(input_dim=dataset.feature_dim, heads=dataset.num_identities,
                               **asdict(cfg.model))
    last_good, state = None, None
    try:
        state = pretrain_mt(dataset, cfg.train, model_config)
        last_good = ckpt_dir / "pretrain.ckpt"
        save_checkpoint(state.params, last_good, model_config)

        def on_iteration(st):
            nonlocal last_good
            last_good = ckpt_dir / f"iter_{st.iteration:02d}.ckpt"
            save_checkpoint(st.params, last_good, model_config)
            rnd = st.rounds[-1]
            write_dump(dump_dir / f"round_{rnd.round:02d}.csv", rnd.rows)

        train_mtml(dataset, state, cfg.train, on_iteration)
        save_checkpoint(state.params, ckpt_dir / "final.ckpt", model_config)
    except MTMLError as exc:
        where = f"; last good checkpoint: {last_good}" if last_good else "; no checkpoint written"
        print(f"training failed: {exc}{where}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        if state is not None:
            write_metrics(state.history, run_dir / "metrics.csv")
    print(f"wrote {run_dir / 'metrics.csv'} and {len(state.rounds)} association dumps")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    params, model_config = load_checkpoint(args.checkpoint, with_config=True)
    dataset = load_dataset(args.dataset)
    if model_config.input_dim != dataset.feature_dim:
        raise IncompatibleArtifacts(
            f"incompatible artifacts: checkpoint expects F={model_config.input_dim}, dataset has F={dataset.feature_dim}"
        )
    if args.feature_dim is not None and args.feature_dim != model_config.feature_dim:
        raise IncompatibleArtifacts(
            f"incompatible artifacts: expected d={args.feature_dim}, checkpoint has d={model_config.feature_dim}"
        )
    out = _require_dir(Path(args.out_dir))
    report = evaluate(build_problem(params, dataset, cfg.eval.probe_fraction, cfg.eval.seed))
    (out / "eval.csv").write_text(report.to_csv())
    (out / "eval.txt").write_text(report.table() + "\n")
    (out / CONFIG_NAME).write_text(cfg.to_json())
    print(report.table())
    return EXIT_OK


def cmd_dynamics(args, cfg: RunConfig) -> int:
    dumps = sorted((Path(args.run_dir) / "associations").glob("round_*.csv"))
    if not dumps:
        raise FileNotFoundError(f"no association dumps under {args.run_dir}")
    rows, rounds = [], []
    for path in dumps:
        rounds.append(int(path.stem.split("_")[1]))
        rows += read_dump(path)
    report = association_dynamics_report(rows, rounds)
    out = Path(args.out) if args.out else Path(args.run_dir) / "dynamics.csv"
    out.write_text(dynamics_csv(report))
    print(dynamics_table(report))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mtml-reid", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable)")
        p.add_argument("--seed", type=int, help="seed for data, model and training")

    p = sub.add_parser("generate", help="write a synthetic ICS dataset")
    common(p)
    p.add_argument("--out", required=True, help="dataset file to write")
    p.add_argument("--test-out", help="also split off held-out identities into this file")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="MT pretraining followed by MTML iterations")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--mt-only", action="store_true", help="ablation arm: no multi-label loss")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="CMC/mAP of a checkpoint on a held-out dataset")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--feature-dim", type=int, help="expected feature dimension d")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dynamics", help="per-round association counts and precision")
    common(p)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out", help="CSV path (default: RUN_DIR/dynamics.csv)")
    p.set_defaults(func=cmd_dynamics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
    except (OSError, ValueError) as exc:
        print(f"mtml-reid: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args, cfg)
    except (MTMLError, OSError, ValueError) as exc:
        print(f"mtml-reid {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
