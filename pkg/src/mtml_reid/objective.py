"""Loss functions: per-camera multi-task cross-entropy, multi-label cross-entropy, and their sum."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyBatch, LabelOutOfRange

DEFAULT_LAMBDA = 0.5


def logsumexp(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    m = np.max(logits, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(logits - m), axis=axis))


def cross_entropy(logits, target: int) -> float:
    """``-log softmax(logits)[target]`` evaluated as ``logsumexp(logits) - logits[target]``."""
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    if not 0 <= target < len(logits):
        raise LabelOutOfRange(f"label out of range: {target} not in [0, {len(logits)})")
    return float(logsumexp(logits) - logits[target])


def mt_loss_sample(logits, true_label: int) -> float:
    """Cross-entropy of one image against its own camera's label, from head logits."""
    return cross_entropy(logits, true_label)


def ml_loss_sample(logits, assigned_label: int) -> float:
    """Cross-entropy of one image against an associated label of a foreign camera."""
    return cross_entropy(logits, assigned_label)


def mt_loss_batch(losses_by_camera: Mapping[int, Sequence[float]], batch_size: int) -> float:
    """Sum the per-camera accumulated losses and divide by the batch size."""
    if batch_size <= 0:
        raise EmptyBatch("empty batch")
    n = sum(len(v) for v in losses_by_camera.values())
    if n != batch_size:
        raise ValueError(f"batch_size {batch_size} does not match {n} grouped losses")
    return sum(float(np.sum(v)) for v in losses_by_camera.values()) / batch_size


def ml_loss_per_camera(losses_by_camera: Mapping[int, Sequence[float]]) -> dict[int, tuple[float, int]]:
    """Per target camera ``q``: (mean loss over its ``b_q`` multi-labelled images, ``b_q``)."""
    out = {}
    for q, losses in losses_by_camera.items():
        b = len(losses)
        out[q] = (float(np.mean(losses)) if b else 0.0, b)
    return out


def ml_loss_batch(losses_by_camera: Mapping[int, Sequence[float]], num_cameras: int) -> float:
    """Average of per-camera means over all ``num_cameras`` cameras.

    A camera without multi-labelled images adds zero but still counts in the
    divisor, so this is not the flat mean over multi-labelled images.
    """
    if num_cameras < 1:
        raise ValueError("num_cameras must be >= 1")
    per_cam = ml_loss_per_camera(losses_by_camera)
    return sum(mean for mean, _ in per_cam.values()) / num_cameras


def total_loss(mt: float, ml: float, lam: float = DEFAULT_LAMBDA) -> float:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return mt + lam * ml


@dataclass(frozen=True)
class LossSpec:
    """Which terms of the objective are active.

    ``use_ml=False`` gives the multi-task-only loss regardless of ``lambda_ml``.
    """

    lambda_ml: float = DEFAULT_LAMBDA
    use_ml: bool = True


@dataclass
class LossReport:
    mt_loss: float = 0.0
    ml_loss: float = 0.0
    total: float = 0.0
    lambda_ml: float = DEFAULT_LAMBDA
    per_camera_mt: dict[int, float] = field(default_factory=dict)
    per_camera_ml: dict[int, tuple[float, int]] = field(default_factory=dict)
