"""Landmark propagation and Mean Average Corner Error.

Homographies are estimated at 320x180 and rescaled by 4 on both axes to the
1280x720 annotation frame before chaining. MACE averages the per-interval mean
landmark error over all annotated intervals of all videos.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol

import numpy as np
import torch

from skyreg import geometry
from skyreg.errors import DataError, MissingPrediction
from skyreg.ingest import (CHILD_SIZE, PARENT_SIZE, EpisodeBatch, FrameSequence,
                           PatchSpec, parent_bounds)

log = logging.getLogger(__name__)

ANNOTATION_STRIDE = 30
FULL_SCALE = 4.0
ANNOTATION_HEADER = ["video_id", "frame_index", "landmark_id", "u", "v"]

Points = dict  # landmark_id -> (u, v)


@dataclass
class LandmarkAnnotation:
    video_id: str
    entries: list[tuple[int, Points]]

    def validate(self) -> None:
        idx = [t for t, _ in self.entries]
        if any(b - a != ANNOTATION_STRIDE for a, b in zip(idx, idx[1:])):
            raise DataError(f"{self.video_id}: annotated frames must be {ANNOTATION_STRIDE} apart, got {idx}")
        for t0, t1, ids, _, _ in self.intervals():
            if not ids:
                raise DataError(f"{self.video_id}: interval {t0}->{t1} shares no landmarks")

    def intervals(self):
        """Yield ``(t_prev, t, ids, points_prev (K, 2), points_t (K, 2))``."""
        for (t0, p0), (t1, p1) in zip(self.entries[:-1], self.entries[1:]):
            ids = sorted(set(p0) & set(p1))
            yield (t0, t1, ids,
                   np.array([p0[i] for i in ids], np.float64).reshape(-1, 2),
                   np.array([p1[i] for i in ids], np.float64).reshape(-1, 2))


@dataclass
class MaceResult:
    per_video: list[tuple[str, float]]
    overall: float
    counts: dict[str, int]  # video_id -> number of annotated frames N_i


def read_annotations(path) -> dict[str, LandmarkAnnotation]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"annotation file {path} not found")
    grouped: dict[str, dict[int, Points]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames[:5]) != ANNOTATION_HEADER:
            raise DataError(f"{path}: expected header {','.join(ANNOTATION_HEADER)}")
        for row in reader:
            frames = grouped.setdefault(row["video_id"], {})
            frames.setdefault(int(row["frame_index"]), {})[int(row["landmark_id"])] = (
                float(row["u"]), float(row["v"]))
    out = {}
    for vid, frames in grouped.items():
        ann = LandmarkAnnotation(vid, sorted(frames.items()))
        ann.validate()
        out[vid] = ann
    return out


def write_annotations(path, annotations) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ANNOTATION_HEADER)
        for ann in annotations:
            for t, pts in ann.entries:
                for lid, (u, v) in sorted(pts.items()):
                    writer.writerow([ann.video_id, t, lid, repr(u), repr(v)])


def propagate_landmarks(points, homographies, scale: float = FULL_SCALE,
                        stride: int = ANNOTATION_STRIDE) -> np.ndarray:
    """Carry full-resolution landmarks through ``stride`` estimation-scale
    homographies (in time order)."""
    hs = np.asarray(homographies, np.float64)
    if len(hs) != stride:
        raise ValueError(f"need exactly {stride} homographies, got {len(hs)}")
    full = [geometry.rescale_homography(h, scale, scale) for h in hs]
    chain = geometry.compose(full)
    return geometry.warp_point(chain, np.asarray(points, np.float64)).numpy()


def predict_annotation(annotation: LandmarkAnnotation, homographies) -> dict[int, Points]:
    """Predicted landmark positions for every interval end frame of one video."""
    hs = np.asarray(homographies)
    preds: dict[int, Points] = {}
    for t0, t1, ids, src, _ in annotation.intervals():
        if t1 > len(hs):
            raise MissingPrediction(f"{annotation.video_id}: no homographies up to frame {t1}")
        moved = propagate_landmarks(src, hs[t0:t1], stride=t1 - t0)
        preds[t1] = {i: tuple(p) for i, p in zip(ids, moved)}
    return preds


def compute_mace(predictions: Mapping[str, Mapping[int, Points]],
                 annotations: Mapping[str, LandmarkAnnotation]) -> MaceResult:
    """Aggregate landmark error: sum of interval means over sum of (N_i - 1)."""
    per_video = []
    counts = {}
    grand = []
    n_intervals = 0
    for vid, ann in annotations.items():
        if vid not in predictions:
            raise MissingPrediction(f"no predictions for video {vid}")
        interval_means = []
        for _, t1, ids, _, truth in ann.intervals():
            got = predictions[vid].get(t1)
            if got is None or any(i not in got for i in ids):
                raise MissingPrediction(f"{vid}: missing prediction at frame {t1}")
            pred = np.array([got[i] for i in ids], np.float64)
            interval_means.append(float(np.linalg.norm(pred - truth, axis=1).mean()))
        counts[vid] = len(ann.entries)
        n_intervals += len(ann.entries) - 1
        grand.extend(interval_means)
        per_video.append((vid, math.fsum(interval_means) / len(interval_means)
                          if interval_means else 0.0))
    overall = math.fsum(grand) / n_intervals if n_intervals else 0.0
    return MaceResult(per_video, overall, counts)


def write_mace_csv(result: MaceResult, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "mace", "annotated_frames"])
        for vid, value in result.per_video:
            writer.writerow([vid, repr(value), result.counts[vid]])
        writer.writerow(["OVERALL", repr(result.overall), sum(result.counts.values())])


class Estimator(Protocol):
    def estimate_sequence(self, seq: FrameSequence) -> np.ndarray:
        """``(N-1, 3, 3)`` homographies between consecutive frames."""


def evaluate(estimator: Estimator, sequences, annotations) -> MaceResult:
    seqs = {s.video_id: s for s in sequences}
    preds = {}
    for vid, ann in annotations.items():
        if vid not in seqs:
            raise MissingPrediction(f"annotated video {vid} not in the dataset")
        preds[vid] = predict_annotation(ann, estimator.estimate_sequence(seqs[vid]))
    return compute_mace(preds, annotations)


def evaluation_streams(frame_size, n_parents: int = 3) -> list[PatchSpec]:
    """Fixed parent patches spread across the admissible range, plus children."""
    (u_lo, u_hi), (v_lo, v_hi) = parent_bounds(frame_size)
    us = np.linspace(u_lo, u_hi, n_parents).round().astype(int) if n_parents > 1 else [(u_lo + u_hi) // 2]
    v = (v_lo + v_hi) // 2
    parents = [PatchSpec(0, (int(u), v), PARENT_SIZE, "parent", i) for i, u in enumerate(us)]
    streams = list(parents)
    for p in parents:
        for dv in (0, CHILD_SIZE):
            for du in (0, CHILD_SIZE):
                streams.append(PatchSpec(0, (p.top_left[0] + du, p.top_left[1] + dv), CHILD_SIZE,
                                         "child", len(streams), p.stream_id))
    return streams


class ModelEstimator:
    """Apply a trained network to a whole sequence.

    Stateless models see each frame pair independently; recurrent ones run
    consecutive episodes of ``episode_len`` frames that share their boundary
    frame, resetting state at each episode. The frame-level estimate is the
    entrywise mean of the normalised parent-stream homographies.
    """

    def __init__(self, model, episode_len: int = 16, n_parents: int = 3):
        self.model = model
        self.episode_len = episode_len
        self.n_parents = n_parents

    @torch.no_grad()
    def estimate_sequence(self, seq: FrameSequence) -> np.ndarray:
        from skyreg.network import forward_episode

        self.model.eval()
        streams = evaluation_streams(seq.size, self.n_parents)
        parent_rows = [i for i, s in enumerate(streams) if s.scale_level == "parent"]
        n = len(seq)
        # Stateless models give identical results for any chunking.
        k = self.episode_len
        out = np.zeros((n - 1, 3, 3))
        start = 0
        while start < n - 1:
            stop = min(start + k, n)
            batch = EpisodeBatch(seq.frames[start:stop], streams, 0, seq.video_id, start)
            hs = forward_episode(self.model, batch).homographies[parent_rows]
            out[start:stop - 1] = geometry.normalize(hs.mean(dim=0)).numpy()
            start = stop - 1
        return out
