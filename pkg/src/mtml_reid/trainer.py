"""Two-phase training: multi-task pretraining, then rounds of joint training and re-association."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .association import MultiLabelSet, association_precision, discover_all, dump_rows
from .datagen import ICSDataset, sample_batch
from .errors import NumericFailure
from .model import ModelConfig, ModelParams, encode, head_logits, init_params, loss_and_grad
from .objective import LossReport, LossSpec

log = logging.getLogger(__name__)

PRETRAIN = "pretrain"
ML_ITERATION = "ml_iteration"
METRICS_VERSION = 1
METRICS_HEADER = ["phase", "iteration", "epoch", "lr", "mt_loss", "ml_loss", "total",
                  "pairs_discovered", "association_precision"]


@dataclass
class TrainConfig:
    lambda_ml: float = 0.5
    initial_lr: float = 0.05
    pretrain_epochs: int = 100
    pretrain_decay_every: int = 40
    decay_factor: float = 0.1
    ml_iterations: int = 8
    epochs_per_iteration: int = 15
    ml_decay_after_epoch: int = 8
    # starting lr of every ML iteration
    ml_base_lr: float = 0.005
    persons_per_camera: int = 2
    images_per_person: int = 4
    # associate once right after pretraining so round 1 already has labels
    initial_association: bool = True
    mt_only: bool = False
    seed: int = 0

    def validate(self):
        if self.lambda_ml < 0:
            raise ValueError("lambda_ml must be non-negative")
        if min(self.initial_lr, self.ml_base_lr) <= 0:
            raise ValueError("learning rates must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must be in (0, 1]")
        ints = (self.pretrain_decay_every, self.persons_per_camera, self.images_per_person)
        if min(ints) < 1 or min(self.pretrain_epochs, self.ml_iterations, self.epochs_per_iteration) < 0:
            raise ValueError("epoch counts and batch shape must be positive")


@dataclass
class EpochRecord:
    phase: str
    iteration: int
    epoch: int
    lr: float
    report: LossReport
    pairs_discovered: int = 0
    association_precision: float | None = None


@dataclass
class AssociationRound:
    round: int
    count: int
    precision: float | None
    rows: list[list]


@dataclass
class TrainState:
    params: ModelParams
    rng: np.random.Generator
    current_lr: float = 0.0
    epoch: int = 0
    iteration: int = 0
    multilabels: MultiLabelSet = field(default_factory=MultiLabelSet)
    history: list[EpochRecord] = field(default_factory=list)
    rounds: list[AssociationRound] = field(default_factory=list)
    model_config: ModelConfig | None = None


def sgd_step(params: ModelParams, grads: ModelParams, lr: float) -> ModelParams:
    """Plain SGD: ``w <- w - lr * g`` on every array; returns new params."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    for name, g in zip(grads.array_names(), grads.arrays()):
        if not np.all(np.isfinite(g)):
            raise NumericFailure(f"numeric failure: non-finite gradient for {name}")
    return ModelParams(
        [(w - lr * gw, b - lr * gb) for (w, b), (gw, gb) in zip(params.encoder, grads.encoder)],
        [(w - lr * gw, b - lr * gb) for (w, b), (gw, gb) in zip(params.heads, grads.heads)],
    )


def lr_schedule(config: TrainConfig, phase: str, epoch: int) -> float:
    """Step schedule. ``epoch`` counts from 0 within the phase (or within one ML iteration)."""
    inv = 1.0 / config.decay_factor
    if phase == PRETRAIN:
        return config.initial_lr / inv ** (epoch // config.pretrain_decay_every)
    if phase == ML_ITERATION:
        if epoch >= config.ml_decay_after_epoch:
            return config.ml_base_lr / inv
        return config.ml_base_lr
    raise ValueError(f"unknown phase {phase!r}")


def batches_per_epoch(dataset: ICSDataset, config: TrainConfig) -> int:
    B = dataset.num_cameras * config.persons_per_camera * config.images_per_person
    return math.ceil(dataset.num_samples / B)


def _mean_report(reports: list[LossReport]) -> LossReport:
    n = len(reports)
    out = LossReport(lambda_ml=reports[0].lambda_ml)
    out.mt_loss = sum(r.mt_loss for r in reports) / n
    out.ml_loss = sum(r.ml_loss for r in reports) / n
    out.total = out.mt_loss + out.lambda_ml * out.ml_loss
    for r in reports:
        for p, v in r.per_camera_mt.items():
            out.per_camera_mt[p] = out.per_camera_mt.get(p, 0.0) + v / n
        for q, (v, b) in r.per_camera_ml.items():
            acc, cnt = out.per_camera_ml.get(q, (0.0, 0))
            out.per_camera_ml[q] = (acc + v / n, cnt + b)
    return out


def run_epoch(state: TrainState, dataset: ICSDataset, config: TrainConfig, lr: float,
              spec: LossSpec) -> LossReport:
    extra = state.multilabels.extra_labels() if spec.use_ml else None
    reports = []
    for _ in range(batches_per_epoch(dataset, config)):
        batch = sample_batch(dataset, state.rng, config.persons_per_camera, config.images_per_person)
        report, grads = loss_and_grad(state.params, batch, spec, extra)
        state.params = sgd_step(state.params, grads, lr)
        reports.append(report)
    state.current_lr = lr
    return _mean_report(reports)


def pretrain_mt(dataset: ICSDataset, config: TrainConfig,
                model_config: ModelConfig | None = None) -> TrainState:
    """Fresh model trained on the multi-task loss only."""
    config.validate()
    if model_config is None:
        model_config = ModelConfig(input_dim=dataset.feature_dim, heads=dataset.num_identities,
                                   seed=config.seed)
    if model_config.heads != dataset.num_identities or model_config.input_dim != dataset.feature_dim:
        raise ValueError("model config does not fit the dataset")
    state = TrainState(init_params(model_config), np.random.default_rng(config.seed),
                       model_config=model_config)
    spec = LossSpec(lambda_ml=0.0, use_ml=False)
    for e in range(config.pretrain_epochs):
        lr = lr_schedule(config, PRETRAIN, e)
        report = run_epoch(state, dataset, config, lr, spec)
        state.history.append(EpochRecord(PRETRAIN, 0, e, lr, report))
        state.epoch += 1
        log.debug("pretrain epoch %d lr %g mt %.4f", e, lr, report.mt_loss)
    return state


def per_camera_accuracy(params: ModelParams, dataset: ICSDataset) -> dict[int, float]:
    """Training accuracy of each camera's own head on its native labels."""
    out = {}
    for view in dataset.cameras:
        pred = np.argmax(head_logits(params, encode(params, view.features), view.camera_id), axis=1)
        out[view.camera_id] = float(np.mean(pred == view.labels))
    return out


def associate(state: TrainState, dataset: ICSDataset, round_index: int) -> AssociationRound:
    """Recompute the multi-label set from scratch under the current params."""
    gt = dataset.ground_truth
    state.multilabels = discover_all(state.params, dataset)
    rnd = AssociationRound(round_index, len(state.multilabels),
                           association_precision(state.multilabels, gt),
                           dump_rows(state.multilabels, round_index, gt))
    state.rounds.append(rnd)
    log.info("association round %d: %d pairs, precision %s", round_index, rnd.count, rnd.precision)
    return rnd


def train_mtml(dataset: ICSDataset, state: TrainState, config: TrainConfig,
               on_iteration: Callable[[TrainState], None] | None = None) -> TrainState:
    """Alternate joint MT+ML training and association for ``ml_iterations`` rounds.

    Each iteration trains ``epochs_per_iteration`` epochs with the current
    multi-label set and associates once. With ``initial_association`` the
    association runs before the epochs (round 1 uses the pretrained model),
    otherwise after them (iteration 1 trains with an empty set). Either way
    association round ``r`` belongs to iteration ``r``. ``mt_only`` keeps
    associating for the record but trains on the MT loss alone.
    """
    config.validate()
    spec = LossSpec(lambda_ml=config.lambda_ml, use_ml=not config.mt_only)
    gt = dataset.ground_truth
    for it in range(1, config.ml_iterations + 1):
        state.iteration = it
        if config.initial_association:
            associate(state, dataset, it)
        pairs = len(state.multilabels)
        precision = association_precision(state.multilabels, gt)
        for e in range(config.epochs_per_iteration):
            lr = lr_schedule(config, ML_ITERATION, e)
            report = run_epoch(state, dataset, config, lr, spec)
            state.history.append(EpochRecord(ML_ITERATION, it, e, lr, report, pairs, precision))
            state.epoch += 1
        if not config.initial_association:
            associate(state, dataset, it)
        if on_iteration is not None:
            on_iteration(state)
    return state


def _fmt(x: float | None) -> str:
    return "-" if x is None else repr(float(x))


def metrics_csv(history: list[EpochRecord]) -> str:
    buf = io.StringIO()
    buf.write(f"# mtml-metrics v{METRICS_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in history:
        w.writerow([r.phase, r.iteration, r.epoch, _fmt(r.lr), _fmt(r.report.mt_loss),
                    _fmt(r.report.ml_loss), _fmt(r.report.total), r.pairs_discovered,
                    _fmt(r.association_precision)])
    return buf.getvalue()


def write_metrics(history: list[EpochRecord], path) -> None:
    Path(path).write_text(metrics_csv(history))


def read_metrics(path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# mtml-metrics"):
        raise ValueError(f"{path} is not a metrics file")
    return list(csv.DictReader(lines[1:]))
