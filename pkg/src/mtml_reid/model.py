"""Shared encoder, FC-d feature layer and one classifier head per camera, with hand-written backprop."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    EmptyBatch,
    IncompatibleCheckpoint,
    LabelOutOfRange,
    NoSuchHeadError,
    NumericFailure,
    ShapeError,
)
from .objective import LossReport, LossSpec, logsumexp

CHECKPOINT_VERSION = 1
_MAGIC = "mtml-checkpoint"


@dataclass
class ModelConfig:
    input_dim: int
    feature_dim: int = 64
    heads: list[int] = field(default_factory=list)
    hidden_dims: list[int] = field(default_factory=list)
    init_scale: float = 1.0
    seed: int = 0

    def validate(self):
        dims = [self.input_dim, self.feature_dim, *self.hidden_dims, *self.heads]
        if not self.heads or min(dims) < 1:
            raise ShapeError("shape error: all model dimensions must be >= 1 and heads non-empty")


@dataclass(eq=False)
class ModelParams:
    """Weights are stored input-major: a layer maps ``h -> h @ W + b``.

    The same container doubles as a gradient set.
    """

    encoder: list[tuple[np.ndarray, np.ndarray]]
    heads: list[tuple[np.ndarray, np.ndarray]]

    @property
    def num_heads(self) -> int:
        return len(self.heads)

    @property
    def input_dim(self) -> int:
        return self.encoder[0][0].shape[0]

    @property
    def feature_dim(self) -> int:
        return self.encoder[-1][0].shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [a for layer in (*self.encoder, *self.heads) for a in layer]

    def array_names(self) -> list[str]:
        names = []
        for i in range(len(self.encoder)):
            names += [f"encoder.{i}.weight", f"encoder.{i}.bias"]
        for q in range(1, len(self.heads) + 1):
            names += [f"head.{q}.weight", f"head.{q}.bias"]
        return names

    def num_parameters(self) -> int:
        return sum(a.size for a in self.arrays())

    def zeros_like(self) -> "ModelParams":
        return ModelParams([(np.zeros_like(w), np.zeros_like(b)) for w, b in self.encoder],
                           [(np.zeros_like(w), np.zeros_like(b)) for w, b in self.heads])

    def copy(self) -> "ModelParams":
        return ModelParams([(w.copy(), b.copy()) for w, b in self.encoder],
                           [(w.copy(), b.copy()) for w, b in self.heads])

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        a, b = self.arrays(), other.arrays()
        return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))

    def config(self, init_scale: float = 1.0, seed: int = 0) -> ModelConfig:
        return ModelConfig(
            input_dim=self.input_dim,
            feature_dim=self.feature_dim,
            heads=[w.shape[1] for w, _ in self.heads],
            hidden_dims=[w.shape[1] for w, _ in self.encoder[:-1]],
            init_scale=init_scale,
            seed=seed,
        )


GradientSet = ModelParams


def init_params(config: ModelConfig) -> ModelParams:
    """Zero-mean normal weights scaled by ``init_scale / sqrt(fan_in)``, zero biases."""
    config.validate()
    rng = np.random.default_rng(config.seed)

    def layer(fan_in, fan_out):
        w = rng.normal(size=(fan_in, fan_out)) * (config.init_scale / np.sqrt(fan_in))
        return w, np.zeros(fan_out)

    widths = [config.input_dim, *config.hidden_dims, config.feature_dim]
    encoder = [layer(a, b) for a, b in zip(widths[:-1], widths[1:])]
    heads = [layer(config.feature_dim, n) for n in config.heads]
    return ModelParams(encoder, heads)


def _check_finite(x: np.ndarray, where: str):
    if not np.all(np.isfinite(x)):
        raise NumericFailure(f"numeric failure in {where}")


def _encode(params: ModelParams, x: np.ndarray, keep: bool = False):
    """Forward a (n, F) matrix through the encoder; optionally keep pre-activations."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ShapeError(f"shape error: expected features of width {params.input_dim}, got {x.shape}")
    inputs, pre = [], []
    h = x
    last = len(params.encoder) - 1
    for i, (w, b) in enumerate(params.encoder):
        inputs.append(h)
        z = h @ w + b
        _check_finite(z, f"encoder.{i}")
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
    if keep:
        return h, inputs, pre
    return h


def encode(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Camera-shared features for a (n, F) matrix of inputs, one row each."""
    return _encode(params, features)


def forward_shared(params: ModelParams, features) -> np.ndarray:
    """Camera-shared feature vector ``v`` (length d) of one input vector."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 1:
        raise ShapeError(f"shape error: expected a feature vector, got shape {features.shape}")
    if not np.all(np.isfinite(features)):
        raise ShapeError("shape error: features must be finite")
    return _encode(params, features[None, :])[0]


def _head(params: ModelParams, camera_id: int):
    if not 1 <= camera_id <= params.num_heads:
        raise NoSuchHeadError(f"no such head: camera {camera_id} (model has {params.num_heads})")
    return params.heads[camera_id - 1]


def head_logits(params: ModelParams, v, camera_id: int) -> np.ndarray:
    """Logits of camera ``camera_id``'s classifier; accepts a vector or a row matrix."""
    w, b = _head(params, camera_id)
    return np.asarray(v, dtype=np.float64) @ w + b


def softmax(logits, axis: int = -1) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    e = np.exp(logits - np.max(logits, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def ml_targets(camera_ids: np.ndarray, labels: np.ndarray,
               extra_labels: Mapping[tuple[int, int], Sequence[tuple[int, int]]] | None):
    """Flatten assigned foreign labels of a batch into (row, target camera, target label) arrays."""
    rows, cams, targets = [], [], []
    if extra_labels:
        for i, (p, y) in enumerate(zip(camera_ids.tolist(), labels.tolist())):
            for label, q in extra_labels.get((p, y), ()):
                rows.append(i)
                cams.append(q)
                targets.append(label)
    return (np.array(rows, dtype=np.int64), np.array(cams, dtype=np.int64),
            np.array(targets, dtype=np.int64))


def loss_and_grad(params: ModelParams, batch, spec: LossSpec = LossSpec(),
                  extra_labels=None, need_grad: bool = True) -> tuple[LossReport, GradientSet | None]:
    """Evaluate the objective on a batch and its exact gradient.

    ``batch`` needs ``features``, ``camera_ids`` and ``labels`` arrays.
    ``extra_labels`` maps ``(camera, label)`` to the assigned
    ``(foreign_label, foreign_camera)`` pairs; it only matters when
    ``spec.use_ml`` is set.
    """
    x = np.asarray(batch.features, dtype=np.float64)
    cams = np.asarray(batch.camera_ids, dtype=np.int64)
    labels = np.asarray(batch.labels, dtype=np.int64)
    B, M = len(labels), params.num_heads
    if B == 0:
        raise EmptyBatch("empty batch")
    v, inputs, pre = _encode(params, x, keep=True)
    grads = params.zeros_like() if need_grad else None
    dv = np.zeros_like(v)

    def head_term(rows, q, targets, scale):
        w, b = _head(params, q)
        logits = v[rows] @ w + b
        _check_finite(logits, f"head.{q}")
        if targets.min() < 0 or targets.max() >= w.shape[1]:
            raise LabelOutOfRange(f"label out of range for head {q}")
        lse = logsumexp(logits)
        losses = lse - logits[np.arange(len(rows)), targets]
        if need_grad and scale != 0.0:
            d = np.exp(logits - lse[:, None])
            d[np.arange(len(rows)), targets] -= 1.0
            d *= scale
            gw, gb = grads.heads[q - 1]
            gw += v[rows].T @ d
            gb += d.sum(axis=0)
            np.add.at(dv, rows, d @ w.T)
        return losses

    report = LossReport(lambda_ml=spec.lambda_ml if spec.use_ml else 0.0)
    mt_sum = 0.0
    for q in np.unique(cams).tolist():
        rows = np.flatnonzero(cams == q)
        losses = head_term(rows, q, labels[rows], 1.0 / B)
        report.per_camera_mt[q] = float(losses.sum())
        mt_sum += report.per_camera_mt[q]
    report.mt_loss = mt_sum / B

    if spec.use_ml:
        rows_all, qs, targets = ml_targets(cams, labels, extra_labels)
        ml_sum = 0.0
        for q in range(1, M + 1):
            sel = qs == q
            b_q = int(sel.sum())
            if b_q == 0:
                report.per_camera_ml[q] = (0.0, 0)
                continue
            losses = head_term(rows_all[sel], q, targets[sel], spec.lambda_ml / (M * b_q))
            report.per_camera_ml[q] = (float(losses.mean()), b_q)
            ml_sum += report.per_camera_ml[q][0]
        report.ml_loss = ml_sum / M
    report.total = report.mt_loss + report.lambda_ml * report.ml_loss

    if need_grad:
        d = dv
        for i in range(len(params.encoder) - 1, -1, -1):
            w, _ = params.encoder[i]
            if i != len(params.encoder) - 1:
                d = d * (pre[i] > 0)
            gw, gb = grads.encoder[i]
            gw += inputs[i].T @ d
            gb += d.sum(axis=0)
            if i > 0:
                d = d @ w.T
        for name, g in zip(grads.array_names(), grads.arrays()):
            _check_finite(g, f"gradient {name}")
    return report, grads


def backward(params: ModelParams, batch, loss_spec: LossSpec = LossSpec(), extra_labels=None) -> GradientSet:
    """Gradient of the specified batch loss with respect to every parameter."""
    return loss_and_grad(params, batch, loss_spec, extra_labels)[1]


def save_checkpoint(params: ModelParams, path, config: ModelConfig | None = None) -> None:
    """Plain-text checkpoint: magic + version, config as JSON, then one array per two lines.

    Each array is written as ``name rows cols`` followed by its row-major values
    in ``%.17g`` so reloading is bit-exact.
    """
    config = config or params.config()
    lines = [f"{_MAGIC} {CHECKPOINT_VERSION}", json.dumps(asdict(config), sort_keys=True)]
    for name, a in zip(params.array_names(), params.arrays()):
        shape = a.shape if a.ndim == 2 else (1, a.shape[0])
        lines.append(f"{name} {shape[0]} {shape[1]}")
        lines.append(" ".join("%.17g" % x for x in a.ravel()))
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path, with_config: bool = False):
    try:
        lines = Path(path).read_text().splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise IncompatibleCheckpoint(f"incompatible checkpoint: {exc}") from None
    if len(lines) < 2 or lines[0] != f"{_MAGIC} {CHECKPOINT_VERSION}":
        raise IncompatibleCheckpoint(f"incompatible checkpoint: bad header in {path}")
    try:
        config = ModelConfig(**json.loads(lines[1]))
        config.validate()
        expected = init_params(ModelConfig(**{**asdict(config), "init_scale": 0.0}))
    except (TypeError, ValueError, ShapeError) as exc:
        raise IncompatibleCheckpoint(f"incompatible checkpoint: bad config ({exc})") from None
    names, templates = expected.array_names(), expected.arrays()
    if len(lines) != 2 + 2 * len(names) + 1 or lines[-1] != "end":
        raise IncompatibleCheckpoint(f"incompatible checkpoint: {path} is truncated or has extra records")
    arrays = []
    for i, (name, tmpl) in enumerate(zip(names, templates)):
        head, body = lines[2 + 2 * i].split(), lines[3 + 2 * i]
        shape = tmpl.shape if tmpl.ndim == 2 else (1, tmpl.shape[0])
        if head != [name, str(shape[0]), str(shape[1])]:
            raise IncompatibleCheckpoint(f"incompatible checkpoint: expected {name} {shape}, found {head}")
        try:
            vals = np.array([float(t) for t in body.split()], dtype=np.float64)
        except ValueError:
            raise IncompatibleCheckpoint(f"incompatible checkpoint: bad values for {name}") from None
        if vals.size != tmpl.size or not np.all(np.isfinite(vals)):
            raise IncompatibleCheckpoint(f"incompatible checkpoint: wrong value count for {name}")
        arrays.append(vals.reshape(tmpl.shape))
    n_enc = len(expected.encoder)
    pairs = list(zip(arrays[0::2], arrays[1::2]))
    params = ModelParams(pairs[:n_enc], pairs[n_enc:])
    return (params, config) if with_config else params
