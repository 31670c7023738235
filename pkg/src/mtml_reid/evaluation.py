"""Retrieval evaluation on camera-shared features (CMC, mAP) and association dynamics reports."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .datagen import ICSDataset
from .model import ModelParams, forward_shared

RANKS = (1, 5, 10, 20)
REPORT_VERSION = 1


def extract_features(params: ModelParams, samples) -> np.ndarray:
    """Camera-shared features, one row per sample. Heads are not evaluated.

    ``samples`` may be a (n, F) array or a sequence of objects with ``features``.
    Rows go through the encoder one at a time so each feature is bit-identical
    to a single ``forward_shared`` call, whatever BLAS does with batches.
    """
    rows = samples if isinstance(samples, np.ndarray) else [s.features for s in samples]
    if len(rows) == 0:
        return np.empty((0, params.feature_dim))
    return np.stack([forward_shared(params, x) for x in rows])


def distance_matrix(probe: np.ndarray, gallery: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Euclidean distances, computed from explicit differences so equal rows give exactly 0."""
    probe = np.atleast_2d(np.asarray(probe, dtype=np.float64))
    gallery = np.atleast_2d(np.asarray(gallery, dtype=np.float64))
    if probe.shape[1] != gallery.shape[1]:
        raise ValueError(f"feature widths differ: {probe.shape[1]} vs {gallery.shape[1]}")
    out = np.empty((len(probe), len(gallery)))
    for s in range(0, len(probe), chunk):
        diff = probe[s:s + chunk, None, :] - gallery[None, :, :]
        out[s:s + chunk] = np.sqrt(np.sum(diff * diff, axis=-1))
    return out


@dataclass
class _Ranking:
    first_hit: np.ndarray   # 1-based rank of first correct match per evaluated probe
    ap: np.ndarray
    excluded: int


def _rank_probes(dist, probe_ids, probe_cams, gallery_ids, gallery_cams) -> _Ranking:
    dist = np.asarray(dist, dtype=np.float64)
    probe_ids, probe_cams = np.asarray(probe_ids), np.asarray(probe_cams)
    gallery_ids, gallery_cams = np.asarray(gallery_ids), np.asarray(gallery_cams)
    first, aps, excluded = [], [], 0
    for i in range(len(probe_ids)):
        keep = ~((gallery_ids == probe_ids[i]) & (gallery_cams == probe_cams[i]))
        cand = np.flatnonzero(keep)
        order = cand[np.argsort(dist[i, cand], kind="stable")]
        hits = gallery_ids[order] == probe_ids[i]
        if not hits.any():
            excluded += 1
            continue
        positions = np.flatnonzero(hits) + 1
        first.append(positions[0])
        aps.append(np.mean(np.arange(1, len(positions) + 1) / positions))
    return _Ranking(np.array(first, dtype=np.int64), np.array(aps), excluded)


def cmc(dist, probe_ids, probe_cams, gallery_ids, gallery_cams,
        ranks: Sequence[int] = RANKS) -> dict[int, float]:
    """Fraction of probes whose first cross-camera match sits within each rank.

    Gallery items with the probe's identity *and* camera are ignored; probes
    left without any match are skipped.
    """
    r = _rank_probes(dist, probe_ids, probe_cams, gallery_ids, gallery_cams)
    if len(r.first_hit) == 0:
        raise ValueError("no probe has a valid gallery match")
    return {k: float(np.mean(r.first_hit <= k)) for k in ranks}


def mean_average_precision(dist, probe_ids, probe_cams, gallery_ids, gallery_cams) -> float:
    r = _rank_probes(dist, probe_ids, probe_cams, gallery_ids, gallery_cams)
    if len(r.ap) == 0:
        raise ValueError("no probe has a valid gallery match")
    return float(np.mean(r.ap))


@dataclass
class RetrievalProblem:
    probe_features: np.ndarray
    probe_ids: np.ndarray
    probe_cams: np.ndarray
    gallery_features: np.ndarray
    gallery_ids: np.ndarray
    gallery_cams: np.ndarray


@dataclass
class EvalReport:
    cmc: dict[int, float]
    map_score: float
    num_probes_evaluated: int
    num_probes_excluded: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# mtml-eval v{REPORT_VERSION}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in self.cmc.items():
            w.writerow([f"R{k}", repr(v)])
        w.writerow(["mAP", repr(self.map_score)])
        w.writerow(["probes_evaluated", self.num_probes_evaluated])
        w.writerow(["probes_excluded", self.num_probes_excluded])
        return buf.getvalue()

    def table(self) -> str:
        head = "".join(f"{'R' + str(k):>8}" for k in self.cmc) + f"{'mAP':>8}"
        vals = "".join(f"{100 * v:8.1f}" for v in self.cmc.values()) + f"{100 * self.map_score:8.1f}"
        return f"{head}\n{vals}\n({self.num_probes_evaluated} probes, {self.num_probes_excluded} excluded)"


def evaluate(problem: RetrievalProblem, ranks: Sequence[int] = RANKS) -> EvalReport:
    dist = distance_matrix(problem.probe_features, problem.gallery_features)
    r = _rank_probes(dist, problem.probe_ids, problem.probe_cams, problem.gallery_ids, problem.gallery_cams)
    if len(r.first_hit) == 0:
        raise ValueError("no probe has a valid gallery match")
    return EvalReport({k: float(np.mean(r.first_hit <= k)) for k in ranks},
                      float(np.mean(r.ap)), len(r.first_hit), r.excluded)


def split_probe_gallery(dataset: ICSDataset, probe_fraction: float = 0.25, seed: int = 0):
    """Per camera and identity, hold out a fraction of images as probes; the rest form the gallery.

    Returns ``(probe_rows, gallery_rows)``, each a list of ``(camera_id, row)``.
    An identity with a single image goes to the gallery.
    """
    if not 0 < probe_fraction < 1:
        raise ValueError("probe_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    probe, gallery = [], []
    for view in dataset.cameras:
        for rows in view.identity_rows:
            rows = rng.permutation(rows)
            n_probe = 0 if len(rows) < 2 else min(len(rows) - 1, max(1, int(round(probe_fraction * len(rows)))))
            probe += [(view.camera_id, int(r)) for r in rows[:n_probe]]
            gallery += [(view.camera_id, int(r)) for r in rows[n_probe:]]
    return sorted(probe), sorted(gallery)


def build_problem(params: ModelParams, dataset: ICSDataset, probe_fraction: float = 0.25,
                  seed: int = 0) -> RetrievalProblem:
    """Retrieval problem over a ground-truth dataset using the model's camera-shared features."""
    if dataset.ground_truth is None:
        raise ValueError("evaluation needs ground-truth global ids")
    probe_rows, gallery_rows = split_probe_gallery(dataset, probe_fraction, seed)

    def gather(rows):
        x = np.stack([dataset.camera(p).features[i] for p, i in rows])
        ids = np.array([dataset.camera(p).global_ids[i] for p, i in rows])
        cams = np.array([p for p, _ in rows])
        return extract_features(params, x), ids, cams

    return RetrievalProblem(*gather(probe_rows), *gather(gallery_rows))


@dataclass
class DynamicsRow:
    round: int
    count: int
    correct: int | None
    precision: float | None = field(default=None)


def association_dynamics_report(rows: Iterable[Sequence], rounds: Iterable[int] = ()) -> list[DynamicsRow]:
    """Per round: number of associated pairs and the fraction that are correct.

    ``rows`` are association dump rows ``(round, cam_a, id_a, cam_b, id_b, flag)``.
    ``rounds`` lists rounds to report even when they have no pairs.
    """
    count: dict[int, int] = {r: 0 for r in rounds}
    correct: dict[int, int | None] = {r: 0 for r in rounds}
    for row in rows:
        r, flag = int(row[0]), str(row[5])
        count[r] = count.get(r, 0) + 1
        if flag == "unknown" or correct.get(r, 0) is None:
            correct[r] = None
        else:
            correct[r] = correct.get(r, 0) + (flag == "1")
    out = []
    for r in sorted(count):
        c = correct[r]
        prec = None if c is None or count[r] == 0 else c / count[r]
        out.append(DynamicsRow(r, count[r], c, prec))
    return out


def dynamics_csv(report: list[DynamicsRow]) -> str:
    buf = io.StringIO()
    buf.write(f"# mtml-dynamics v{REPORT_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["round", "pairs", "precision"])
    for d in report:
        w.writerow([d.round, d.count, "-" if d.precision is None else repr(d.precision)])
    return buf.getvalue()


def dynamics_table(report: list[DynamicsRow]) -> str:
    lines = [f"{'round':>5} {'pairs':>6} {'precision':>9}"]
    for d in report:
        prec = "-" if d.precision is None else f"{d.precision:.4f}"
        lines.append(f"{d.round:>5} {d.count:>6} {prec:>9}")
    return "\n".join(lines)
