"""Intra-camera supervised datasets: synthesis, relabelling, P x K batch sampling and file I/O.

Every camera view owns an independent, dense label space ``0 .. N_p - 1``.
The same label in two cameras almost always refers to two different people;
the hidden ``global_id`` of each sample is kept for evaluation only and is
never read by the learner.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateCameraError,
    FormatVersionError,
    InsufficientIdentitiesError,
    InvalidSampleError,
    ParseError,
)

FORMAT_VERSION = 1
UNKNOWN_ID = -1


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    person_label: int
    camera_id: int
    global_id: int | None = None


@dataclass(eq=False)
class CameraView:
    """All annotated images of one camera, stored column-wise.

    ``global_ids`` uses ``-1`` for samples without hidden ground truth.
    """

    camera_id: int
    num_identities: int
    features: np.ndarray
    labels: np.ndarray
    global_ids: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.array(self.features, dtype=np.float64, ndmin=2)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        n = len(self.labels)
        if self.global_ids is None:
            self.global_ids = np.full(n, UNKNOWN_ID, dtype=np.int64)
        self.global_ids = np.asarray(self.global_ids, dtype=np.int64).reshape(-1)
        if self.features.shape[0] != n or len(self.global_ids) != n:
            raise InvalidSampleError(
                f"invalid sample: camera {self.camera_id} has mismatched column lengths"
            )
        if self.num_identities < 1 or n == 0:
            raise DegenerateCameraError(f"degenerate camera: camera {self.camera_id} is empty")
        if not np.all(np.isfinite(self.features)):
            raise InvalidSampleError(f"invalid sample: non-finite features in camera {self.camera_id}")
        if self.labels.min() < 0 or self.labels.max() >= self.num_identities:
            raise InvalidSampleError(
                f"invalid sample: label outside [0, {self.num_identities}) in camera {self.camera_id}"
            )
        if len(np.unique(self.labels)) != self.num_identities:
            raise InvalidSampleError(
                f"invalid sample: camera {self.camera_id} does not use every label in [0, {self.num_identities})"
            )
        known = self.global_ids != UNKNOWN_ID
        if known.any():
            if not known.all():
                raise InvalidSampleError(
                    f"invalid sample: camera {self.camera_id} mixes known and unknown global ids"
                )
            pairs = np.unique(np.stack([self.labels, self.global_ids]), axis=1)
            if len(np.unique(pairs[0])) != pairs.shape[1] or len(np.unique(pairs[1])) != pairs.shape[1]:
                raise InvalidSampleError(
                    f"invalid sample: labels and global ids disagree in camera {self.camera_id}"
                )
        for arr in (self.features, self.labels, self.global_ids):
            arr.setflags(write=False)

    def __len__(self):
        return len(self.labels)

    def __eq__(self, other):
        if not isinstance(other, CameraView):
            return NotImplemented
        return (
            self.camera_id == other.camera_id
            and self.num_identities == other.num_identities
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.global_ids, other.global_ids)
        )

    @property
    def has_ground_truth(self) -> bool:
        return bool(np.all(self.global_ids != UNKNOWN_ID))

    @cached_property
    def identity_rows(self) -> list[np.ndarray]:
        """Row indices of every image, grouped by person label."""
        order = np.argsort(self.labels, kind="stable")
        bounds = np.searchsorted(self.labels[order], np.arange(self.num_identities + 1))
        return [order[bounds[k]:bounds[k + 1]] for k in range(self.num_identities)]

    @property
    def samples(self) -> list[Sample]:
        gt = self.has_ground_truth
        return [
            Sample(self.features[i], int(self.labels[i]), self.camera_id,
                   int(self.global_ids[i]) if gt else None)
            for i in range(len(self))
        ]


@dataclass(eq=False)
class ICSDataset:
    num_cameras: int
    feature_dim: int
    cameras: list[CameraView]

    def __post_init__(self):
        if len(self.cameras) != self.num_cameras:
            raise InvalidSampleError("invalid sample: camera count does not match num_cameras")
        ids = [c.camera_id for c in self.cameras]
        if ids != list(range(1, self.num_cameras + 1)):
            raise InvalidSampleError(f"invalid sample: camera ids must be 1..M in order, got {ids}")
        for c in self.cameras:
            if c.features.shape[1] != self.feature_dim:
                raise InvalidSampleError(
                    f"invalid sample: camera {c.camera_id} features have width {c.features.shape[1]}, "
                    f"expected {self.feature_dim}"
                )

    def __eq__(self, other):
        if not isinstance(other, ICSDataset):
            return NotImplemented
        return (
            self.num_cameras == other.num_cameras
            and self.feature_dim == other.feature_dim
            and all(a == b for a, b in zip(self.cameras, other.cameras))
            and self.ground_truth == other.ground_truth
        )

    def camera(self, camera_id: int) -> CameraView:
        return self.cameras[camera_id - 1]

    @property
    def num_identities(self) -> list[int]:
        return [c.num_identities for c in self.cameras]

    @property
    def num_samples(self) -> int:
        return sum(len(c) for c in self.cameras)

    @property
    def ground_truth(self) -> dict[tuple[int, int], int] | None:
        """Map ``(camera_id, person_label) -> global_id``, or None without ground truth."""
        if not all(c.has_ground_truth for c in self.cameras):
            return None
        gt = {}
        for c in self.cameras:
            for k, rows in enumerate(c.identity_rows):
                gt[(c.camera_id, k)] = int(c.global_ids[rows[0]])
        return gt

    def samples(self) -> list[Sample]:
        return [s for c in self.cameras for s in c.samples]


@dataclass
class SynthConfig:
    num_global_identities: int = 20
    num_cameras: int = 3
    feature_dim: int = 16
    images_per_identity_per_camera: int = 6
    camera_presence_probability: float = 0.8
    cluster_spread: float = 0.3
    camera_shift_scale: float = 0.5
    # angle scale of the per-camera rotation; 0 disables it
    camera_rotation: float = 0.0
    seed: int = 0

    def validate(self):
        counts = (self.num_global_identities, self.num_cameras, self.feature_dim,
                  self.images_per_identity_per_camera)
        if min(counts) < 1:
            raise ValueError("all counts must be positive")
        if not 0.0 < self.camera_presence_probability <= 1.0:
            raise ValueError("camera_presence_probability must be in (0, 1]")
        if not self.cluster_spread > 0:
            raise ValueError("cluster_spread must be positive")
        if self.camera_shift_scale < 0 or self.camera_rotation < 0:
            raise ValueError("camera_shift_scale and camera_rotation must be non-negative")


_PRESENCE_RETRIES = 100


def _cayley_rotation(rng: np.random.Generator, dim: int, scale: float) -> np.ndarray:
    a = rng.normal(scale=scale, size=(dim, dim))
    s = (a - a.T) / 2
    eye = np.eye(dim)
    return np.linalg.solve(eye - s, eye + s)


def generate_synthetic(config: SynthConfig) -> ICSDataset:
    """Draw a multi-camera dataset with Gaussian identity clusters.

    Each global identity gets a unit-normal center. Camera ``p`` applies an
    optional rotation and an additive offset of scale ``camera_shift_scale``;
    each present (identity, camera) pair then yields
    ``images_per_identity_per_camera`` noisy copies. Per-camera labels are a
    dense re-indexing of the present global identities in ascending order.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    G, M, F = config.num_global_identities, config.num_cameras, config.feature_dim
    centers = rng.normal(size=(G, F))
    offsets = rng.normal(scale=config.camera_shift_scale, size=(M, F))
    if config.camera_rotation > 0:
        rotations = [_cayley_rotation(rng, F, config.camera_rotation) for _ in range(M)]
    else:
        rotations = [np.eye(F)] * M

    for _ in range(_PRESENCE_RETRIES):
        presence = rng.random((M, G)) < config.camera_presence_probability
        if presence.any(axis=1).all():
            break
    else:
        raise DegenerateCameraError(
            f"degenerate camera: some camera received no identities after {_PRESENCE_RETRIES} draws"
        )

    K = config.images_per_identity_per_camera
    cameras = []
    for p in range(M):
        present = np.flatnonzero(presence[p])
        base = centers[present] @ rotations[p].T + offsets[p]
        feats = np.repeat(base, K, axis=0)
        feats = feats + rng.normal(scale=config.cluster_spread, size=feats.shape)
        cameras.append(CameraView(
            camera_id=p + 1,
            num_identities=len(present),
            features=feats,
            labels=np.repeat(np.arange(len(present)), K),
            global_ids=np.repeat(present, K),
        ))
    return ICSDataset(M, F, cameras)


def relabel_to_ics(annotations: Iterable[tuple[Sequence[float], int | None, int]]) -> ICSDataset:
    """Turn globally labelled ``(features, global_id, camera_id)`` records into ICS form.

    Labels inside each camera follow first-appearance order; the global ids
    are kept as hidden ground truth.
    """
    per_camera: dict[int, tuple[list, list]] = {}
    width = None
    for i, (feats, gid, cam) in enumerate(annotations):
        feats = np.asarray(feats, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(feats)):
            raise InvalidSampleError(f"invalid sample: record {i} has non-finite features")
        if width is None:
            width = len(feats)
        elif len(feats) != width:
            raise InvalidSampleError(f"invalid sample: record {i} has {len(feats)} features, expected {width}")
        if gid is None:
            raise InvalidSampleError(f"invalid sample: record {i} has no global id")
        rows, gids = per_camera.setdefault(int(cam), ([], []))
        rows.append(feats)
        gids.append(int(gid))
    if not per_camera:
        raise DegenerateCameraError("degenerate camera: no annotations")
    M = max(per_camera)
    missing = [p for p in range(1, M + 1) if p not in per_camera]
    if min(per_camera) < 1 or missing:
        raise DegenerateCameraError(f"degenerate camera: camera ids must cover 1..{M}, missing {missing}")

    cameras = []
    for p in range(1, M + 1):
        rows, gids = per_camera[p]
        local: dict[int, int] = {}
        labels = [local.setdefault(g, len(local)) for g in gids]
        cameras.append(CameraView(p, len(local), np.stack(rows), labels, gids))
    return ICSDataset(M, width, cameras)


def split_identities(dataset: ICSDataset, test_fraction: float, seed: int) -> tuple[ICSDataset, ICSDataset]:
    """Partition global identities into disjoint train and test datasets.

    Requires ground truth. Both halves are relabelled into fresh ICS label spaces.
    """
    if dataset.ground_truth is None:
        raise ValueError("identity split needs ground-truth global ids")
    gids = np.unique(np.concatenate([c.global_ids for c in dataset.cameras]))
    rng = np.random.default_rng(seed)
    n_test = max(1, int(round(test_fraction * len(gids))))
    test_ids = set(rng.choice(gids, n_test, replace=False).tolist())
    train, test = [], []
    for c in dataset.cameras:
        for f, g in zip(c.features, c.global_ids):
            (test if int(g) in test_ids else train).append((f, int(g), c.camera_id))
    return relabel_to_ics(train), relabel_to_ics(test)


@dataclass(eq=False)
class Batch:
    features: np.ndarray
    camera_ids: np.ndarray
    labels: np.ndarray
    global_ids: np.ndarray = field(default=None)

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def per_camera_counts(self) -> dict[int, int]:
        cams, counts = np.unique(self.camera_ids, return_counts=True)
        return {int(c): int(n) for c, n in zip(cams, counts)}

    @property
    def samples(self) -> list[Sample]:
        return [
            Sample(self.features[i], int(self.labels[i]), int(self.camera_ids[i]),
                   None if self.global_ids is None or self.global_ids[i] == UNKNOWN_ID
                   else int(self.global_ids[i]))
            for i in range(self.size)
        ]


def sample_batch(dataset: ICSDataset, rng: np.random.Generator,
                 persons_per_camera: int = 2, images_per_person: int = 4) -> Batch:
    """Draw ``P`` identities per camera and ``K`` images per identity.

    Identities with fewer than ``K`` images are filled by sampling with
    replacement.
    """
    P, K = persons_per_camera, images_per_person
    if P < 1 or K < 1:
        raise ValueError("persons_per_camera and images_per_person must be >= 1")
    for c in dataset.cameras:
        if c.num_identities < P:
            raise InsufficientIdentitiesError(
                f"insufficient identities: camera {c.camera_id} has {c.num_identities} < {P}"
            )
    feats, cams, labels, gids = [], [], [], []
    for c in dataset.cameras:
        for k in rng.choice(c.num_identities, size=P, replace=False):
            rows = c.identity_rows[k]
            picked = rng.choice(rows, size=K, replace=len(rows) < K)
            feats.append(c.features[picked])
            gids.append(c.global_ids[picked])
            cams.append(np.full(K, c.camera_id, dtype=np.int64))
            labels.append(np.full(K, k, dtype=np.int64))
    return Batch(np.concatenate(feats), np.concatenate(cams), np.concatenate(labels), np.concatenate(gids))


def full_batch(dataset: ICSDataset) -> Batch:
    """Every sample of the dataset as one batch, cameras in order."""
    return Batch(
        np.concatenate([c.features for c in dataset.cameras]),
        np.concatenate([np.full(len(c), c.camera_id, dtype=np.int64) for c in dataset.cameras]),
        np.concatenate([c.labels for c in dataset.cameras]),
        np.concatenate([c.global_ids for c in dataset.cameras]),
    )


def _fmt(x: float) -> str:
    return "%.17g" % x


def save_dataset(dataset: ICSDataset, path) -> None:
    """Write the line-oriented dataset file.

    Header: ``version,M,F,N_1,...,N_M``. One line per sample:
    ``camera_id,person_label,global_id|-,f_1,...,f_F``.
    """
    lines = [",".join(map(str, [FORMAT_VERSION, dataset.num_cameras, dataset.feature_dim,
                                *dataset.num_identities]))]
    for c in dataset.cameras:
        for f, y, g in zip(c.features, c.labels, c.global_ids):
            gid = "-" if g == UNKNOWN_ID else str(int(g))
            lines.append(",".join([str(c.camera_id), str(int(y)), gid, *map(_fmt, f)]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> ICSDataset:
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError(f"parse error: {path} is empty")
    try:
        header = [int(x) for x in lines[0].split(",")]
    except ValueError as exc:
        raise ParseError(f"parse error: line 1: bad header ({exc})") from None
    if not header:
        raise ParseError("parse error: line 1: empty header")
    if header[0] != FORMAT_VERSION:
        raise FormatVersionError(f"unsupported format version {header[0]} (expected {FORMAT_VERSION})")
    if len(header) < 3 or len(header) != 3 + header[1]:
        raise ParseError("parse error: line 1: header must be version,M,F,N_1..N_M")
    _, M, F, *sizes = header

    cols: dict[int, tuple[list, list, list]] = {p: ([], [], []) for p in range(1, M + 1)}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 3 + F:
            raise ParseError(f"parse error: line {lineno}: expected {3 + F} fields, got {len(parts)}")
        try:
            cam, label = int(parts[0]), int(parts[1])
            gid = UNKNOWN_ID if parts[2].strip() == "-" else int(parts[2])
            feats = [float(x) for x in parts[3:]]
        except ValueError as exc:
            raise ParseError(f"parse error: line {lineno}: {exc}") from None
        if cam not in cols:
            raise ParseError(f"parse error: line {lineno}: camera {cam} outside 1..{M}")
        if not 0 <= label < sizes[cam - 1]:
            raise ParseError(f"parse error: line {lineno}: label {label} outside [0, {sizes[cam - 1]})")
        cols[cam][0].append(feats)
        cols[cam][1].append(label)
        cols[cam][2].append(gid)

    cameras = []
    for p in range(1, M + 1):
        feats, labels, gids = cols[p]
        if not labels:
            raise ParseError(f"parse error: camera {p} has no samples")
        try:
            cameras.append(CameraView(p, sizes[p - 1], np.array(feats, dtype=np.float64).reshape(-1, F),
                                      labels, gids))
        except (InvalidSampleError, DegenerateCameraError) as exc:
            raise ParseError(f"parse error: {exc}") from None
    return ICSDataset(M, F, cameras)
