"""Inter-camera identity association by cyclic prediction consistency, and the multi-labels it induces.

For identity ``k`` of camera ``p`` the images are pushed through camera
``q``'s classifier and the softmax outputs averaged. The most likely
identity ``l`` of camera ``q`` is nominated, then ``l`` is mapped back into
camera ``p`` the same way. The pair ``(k@p, l@q)`` is accepted only when
the round trip lands on ``k`` again.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from itertools import permutations
from pathlib import Path
from typing import Iterable

import numpy as np

from .datagen import ICSDataset
from .errors import EmptyIdentity, ParseError, StaleAssignment
from .model import ModelParams, encode, head_logits, softmax

DUMP_VERSION = 1
DUMP_HEADER = ["round", "camera_a", "identity_a", "camera_b", "identity_b", "correct"]


@dataclass(frozen=True)
class AveragedPrediction:
    source_camera: int
    source_identity: int
    target_camera: int
    probs: np.ndarray


@dataclass(frozen=True)
class MatchPair:
    identity_a: int
    camera_a: int
    identity_b: int
    camera_b: int
    forward_argmax: int
    backward_argmax: int

    @property
    def verified(self) -> bool:
        return self.backward_argmax == self.identity_a


class MultiLabelSet:
    """Symmetric assignment of foreign labels to identities.

    Keys are ``(camera_id, person_label)``; each key holds at most one
    assigned ``(person_label, camera_id)`` per foreign camera.
    """

    def __init__(self, pairs: Iterable[tuple[tuple[int, int], tuple[int, int]]] = ()):
        self._slots: dict[tuple[int, int], dict[int, int]] = {}
        for a, b in pairs:
            self.add_pair(a, b)

    def add_pair(self, a: tuple[int, int], b: tuple[int, int]) -> None:
        """Associate identity ``a`` and identity ``b``, both given as ``(camera_id, person_label)``."""
        (pa, ka), (pb, kb) = a, b
        if pa == pb:
            raise ValueError(f"cannot associate two identities of camera {pa}")
        for (src, dst_cam, dst_label) in ((a, pb, kb), (b, pa, ka)):
            held = self._slots.get(src, {}).get(dst_cam)
            if held is not None and held != dst_label:
                raise ValueError(f"{src} already holds label {held} of camera {dst_cam}")
        self._slots.setdefault(a, {})[pb] = kb
        self._slots.setdefault(b, {})[pa] = ka

    def __getitem__(self, key: tuple[int, int]) -> set[tuple[int, int]]:
        return {(label, cam) for cam, label in self._slots.get(key, {}).items()}

    def __contains__(self, key) -> bool:
        return key in self._slots

    def keys(self):
        return sorted(self._slots)

    def pairs(self) -> list[tuple[tuple[int, int], tuple[int, int]]]:
        """Each association once, lower camera first, sorted."""
        out = []
        for (p, k), slots in self._slots.items():
            for q, l in slots.items():
                if p < q:
                    out.append(((p, k), (q, l)))
        return sorted(out)

    def __len__(self) -> int:
        return len(self.pairs())

    def __eq__(self, other) -> bool:
        if not isinstance(other, MultiLabelSet):
            return NotImplemented
        return self._slots == other._slots

    def __repr__(self) -> str:
        return f"MultiLabelSet({self.pairs()!r})"

    def extra_labels(self) -> dict[tuple[int, int], tuple[tuple[int, int], ...]]:
        """``(camera, label) -> ((foreign_label, foreign_camera), ...)`` ordered by foreign camera."""
        return {key: tuple((l, q) for q, l in sorted(slots.items())) for key, slots in sorted(self._slots.items())}


def _identity_images(dataset: ICSDataset, identity: int, camera_id: int) -> np.ndarray:
    view = dataset.camera(camera_id)
    if not 0 <= identity < view.num_identities:
        raise EmptyIdentity(f"empty identity: camera {camera_id} has no identity {identity}")
    rows = view.identity_rows[identity]
    if len(rows) == 0:
        raise EmptyIdentity(f"empty identity: identity {identity} of camera {camera_id} has no images")
    return view.features[rows]


def average_prediction(params: ModelParams, dataset: ICSDataset, identity: int,
                       source: int, target: int) -> AveragedPrediction:
    """Mean softmax output of camera ``target``'s head over every image of ``identity@source``."""
    if source == target:
        raise ValueError("source and target camera must differ")
    v = encode(params, _identity_images(dataset, identity, source))
    probs = softmax(head_logits(params, v, target)).mean(axis=0)
    return AveragedPrediction(source, identity, target, probs)


def nominate(avg: AveragedPrediction | np.ndarray) -> int:
    """Index of the most probable identity; ties go to the lowest index."""
    probs = avg.probs if isinstance(avg, AveragedPrediction) else np.asarray(avg)
    return int(np.argmax(probs))


def cyclic_match(params: ModelParams, dataset: ICSDataset, identity: int,
                 source: int, target: int) -> MatchPair:
    l_star = nominate(average_prediction(params, dataset, identity, source, target))
    t_star = nominate(average_prediction(params, dataset, l_star, target, source))
    return MatchPair(identity, source, l_star, target, l_star, t_star)


def prediction_tables(params: ModelParams, dataset: ICSDataset) -> dict[tuple[int, int], np.ndarray]:
    """All averaged predictions at once: ``(p, q) -> (N_p, N_q)`` matrix whose row ``k`` is P^{p->q}_k."""
    tables = {}
    M = dataset.num_cameras
    for view in dataset.cameras:
        p = view.camera_id
        v = encode(params, view.features)
        for q in range(1, M + 1):
            if q == p:
                continue
            probs = softmax(head_logits(params, v, q))
            table = np.zeros((view.num_identities, probs.shape[1]))
            np.add.at(table, view.labels, probs)
            counts = np.bincount(view.labels, minlength=view.num_identities)
            if np.any(counts == 0):
                raise EmptyIdentity(f"empty identity in camera {p}")
            tables[(p, q)] = table / counts[:, None]
    return tables


def match_all(params: ModelParams, dataset: ICSDataset,
              camera_pairs: Iterable[tuple[int, int]] | None = None) -> list[MatchPair]:
    """Cyclic check for every identity over the given ordered camera pairs (default: all)."""
    tables = prediction_tables(params, dataset)
    if camera_pairs is None:
        camera_pairs = permutations(range(1, dataset.num_cameras + 1), 2)
    out = []
    for p, q in camera_pairs:
        forward = np.argmax(tables[(p, q)], axis=1)
        backward = np.argmax(tables[(q, p)], axis=1)
        for k, l in enumerate(forward.tolist()):
            out.append(MatchPair(k, p, l, q, l, int(backward[l])))
    return out


def discover_all(params: ModelParams, dataset: ICSDataset,
                 camera_pairs: Iterable[tuple[int, int]] | None = None) -> MultiLabelSet:
    """Fresh multi-label set from every cyclically verified pair under the current model."""
    ml = MultiLabelSet()
    for m in match_all(params, dataset, camera_pairs):
        if m.verified:
            ml.add_pair((m.camera_a, m.identity_a), (m.camera_b, m.identity_b))
    return ml


@dataclass(frozen=True)
class AugmentedLabels:
    """Native labels plus the foreign labels each identity carries."""

    dataset: ICSDataset
    extra: dict[tuple[int, int], tuple[tuple[int, int], ...]]

    def labels_of(self, camera_id: int, row: int) -> list[tuple[int, int]]:
        """All labels of one image as ``(label, camera)``: native first, then assigned ones."""
        y = int(self.dataset.camera(camera_id).labels[row])
        return [(y, camera_id), *self.extra.get((camera_id, y), ())]

    def target_counts(self) -> dict[int, int]:
        """Per camera ``q``: how many images carry an assigned label of camera ``q``."""
        counts = {q: 0 for q in range(1, self.dataset.num_cameras + 1)}
        for (p, k), assigned in self.extra.items():
            n = len(self.dataset.camera(p).identity_rows[k])
            for _, q in assigned:
                counts[q] += n
        return counts


def apply_multilabels(dataset: ICSDataset, ml_set: MultiLabelSet) -> AugmentedLabels:
    for (p, k) in ml_set.keys():
        for (l, q) in ml_set[(p, k)] | {(k, p)}:
            if not 1 <= q <= dataset.num_cameras or not 0 <= l < dataset.camera(q).num_identities:
                raise StaleAssignment(f"stale assignment: identity {l} of camera {q} does not exist")
    return AugmentedLabels(dataset, ml_set.extra_labels())


def association_precision(ml_set: MultiLabelSet, ground_truth: dict | None) -> float | None:
    """Fraction of associated pairs whose hidden global ids agree; None without ground truth or pairs."""
    pairs = ml_set.pairs()
    if ground_truth is None or not pairs:
        return None
    return sum(ground_truth[a] == ground_truth[b] for a, b in pairs) / len(pairs)


def dump_rows(ml_set: MultiLabelSet, round_index: int, ground_truth: dict | None) -> list[list]:
    rows = []
    for (pa, ka), (pb, kb) in ml_set.pairs():
        if ground_truth is None:
            flag = "unknown"
        else:
            flag = "1" if ground_truth[(pa, ka)] == ground_truth[(pb, kb)] else "0"
        rows.append([round_index, pa, ka, pb, kb, flag])
    return rows


def write_dump(path, rows: list[list]) -> None:
    buf = io.StringIO()
    buf.write(f"# mtml-association v{DUMP_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DUMP_HEADER)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


def read_dump(path) -> list[list]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != f"# mtml-association v{DUMP_VERSION}":
        raise ParseError(f"parse error: {path} is not an association dump")
    reader = csv.reader(lines[1:])
    if next(reader, None) != DUMP_HEADER:
        raise ParseError(f"parse error: {path}: bad header")
    rows = []
    for lineno, rec in enumerate(reader, start=3):
        if len(rec) != len(DUMP_HEADER) or rec[5] not in ("0", "1", "unknown"):
            raise ParseError(f"parse error: {path}:{lineno}: malformed row")
        rows.append([*map(int, rec[:5]), rec[5]])
    return rows
