"""Classical comparison estimators: identity and ORB features with RANSAC."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import cv2
import numpy as np
import torch

from skyreg import geometry
from skyreg.errors import (DegenerateCorrespondence, InsufficientFeatures,
                           NoConsensus)
from skyreg.ingest import FrameSequence

log = logging.getLogger(__name__)

RATIO = 0.8


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 1000
    inlier_threshold_px: float = 3.0
    min_matches: int = 8
    seed: int = 0
    n_features: int = 2000

    def __post_init__(self):
        if min(self.max_iterations, self.min_matches, self.n_features) <= 0 \
                or self.inlier_threshold_px <= 0:
            raise ValueError("RansacConfig fields must be positive")
        if self.min_matches < 4:
            raise ValueError("min_matches must be >= 4")


def identity_estimate(frame_a=None, frame_b=None) -> np.ndarray:
    return np.eye(3)


def _to_u8(frame) -> np.ndarray:
    f = np.asarray(frame, np.float64)
    return np.clip(np.round(f * 255.0), 0, 255).astype(np.uint8)


def match_features(frame_a, frame_b, config: RansacConfig = RansacConfig()):
    """Ratio-tested ORB matches as ``(pts_a, pts_b)`` arrays of shape ``(M, 2)``."""
    orb = cv2.ORB_create(nfeatures=config.n_features, edgeThreshold=15, patchSize=15,
                         fastThreshold=5)
    ka, da = orb.detectAndCompute(_to_u8(frame_a), None)
    kb, db = orb.detectAndCompute(_to_u8(frame_b), None)
    if da is None or db is None or len(ka) < 2 or len(kb) < 2:
        raise InsufficientFeatures("too few keypoints")
    knn = cv2.BFMatcher(cv2.NORM_HAMMING).knnMatch(da, db, k=2)
    good = [m[0] for m in knn if len(m) == 2 and m[0].distance < RATIO * m[1].distance]
    if len(good) < config.min_matches:
        raise InsufficientFeatures(f"{len(good)} matches after ratio test, need {config.min_matches}")
    pa = np.array([ka[m.queryIdx].pt for m in good], np.float64)
    pb = np.array([kb[m.trainIdx].pt for m in good], np.float64)
    return pa, pb


def fit_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Least-squares DLT (h22 fixed to 1) on Hartley-normalised points."""
    def hartley(p):
        c = p.mean(axis=0)
        d = np.sqrt(((p - c) ** 2).sum(axis=1)).mean()
        s = np.sqrt(2.0) / max(d, 1e-12)
        return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])

    ts, td = hartley(src), hartley(dst)
    a = np.c_[src, np.ones(len(src))] @ ts.T
    b = np.c_[dst, np.ones(len(dst))] @ td.T
    x, y, u, v = a[:, 0], a[:, 1], b[:, 0], b[:, 1]
    one, zero = np.ones_like(x), np.zeros_like(x)
    rows = np.concatenate([
        np.stack([x, y, one, zero, zero, zero, -u * x, -u * y], 1),
        np.stack([zero, zero, zero, x, y, one, -v * x, -v * y], 1)])
    rhs = np.concatenate([u, v])
    sol, _, rank, sv = np.linalg.lstsq(rows, rhs, rcond=None)
    if rank < 8 or sv[-1] / sv[0] < 1e-10:
        raise DegenerateCorrespondence("degenerate point configuration")
    hn = np.append(sol, 1.0).reshape(3, 3)
    h = np.linalg.inv(td) @ hn @ ts
    if abs(h[2, 2]) < 1e-12:
        raise DegenerateCorrespondence("h22 vanished")
    return h / h[2, 2]


def _project(h, pts):
    hom = np.c_[pts, np.ones(len(pts))] @ h.T
    w = hom[:, 2:]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = hom[:, :2] / w
    out[~np.isfinite(out).all(axis=1)] = np.inf
    return out


def ransac_homography(src, dst, config: RansacConfig = RansacConfig()):
    """Seeded 4-point RANSAC followed by a refit on all inliers.

    Returns ``(h, inlier_mask)``.
    """
    rng = np.random.default_rng(config.seed)
    n = len(src)
    best = np.zeros(n, bool)
    for _ in range(config.max_iterations):
        idx = rng.choice(n, 4, replace=False)
        try:
            h = fit_homography(src[idx], dst[idx])
        except DegenerateCorrespondence:
            continue
        inl = np.linalg.norm(_project(h, src) - dst, axis=1) < config.inlier_threshold_px
        if inl.sum() > best.sum():
            best = inl
            if best.all():
                break
    if best.sum() < config.min_matches:
        raise NoConsensus(f"best consensus {int(best.sum())} < {config.min_matches}")
    h = fit_homography(src[best], dst[best])
    # One re-selection pass with the refined model, keeping it only if it holds.
    inl = np.linalg.norm(_project(h, src) - dst, axis=1) < config.inlier_threshold_px
    if inl.sum() >= best.sum():
        best = inl
        h = fit_homography(src[best], dst[best])
    return h, best


def orb_ransac_estimate(frame_a, frame_b, config: RansacConfig = RansacConfig()) -> np.ndarray:
    """Homography mapping ``frame_a`` pixels to ``frame_b`` pixels."""
    if np.shape(frame_a) != np.shape(frame_b):
        raise ValueError("frames must have the same size")
    pa, pb = match_features(frame_a, frame_b, config)
    h, _ = ransac_homography(pa, pb, config)
    return geometry.normalize(torch.as_tensor(h)).numpy()


class IdentityEstimator:
    def estimate_sequence(self, seq: FrameSequence) -> np.ndarray:
        return np.tile(np.eye(3), (len(seq) - 1, 1, 1))


class OrbRansacEstimator:
    """Per-pair ORB+RANSAC; pairs where estimation fails fall back to identity."""

    def __init__(self, config: RansacConfig = RansacConfig()):
        self.config = config
        self.failures = 0

    def estimate_sequence(self, seq: FrameSequence) -> np.ndarray:
        out = np.tile(np.eye(3), (len(seq) - 1, 1, 1))
        for t in range(len(seq) - 1):
            try:
                out[t] = orb_ransac_estimate(seq.frames[t], seq.frames[t + 1], self.config)
            except (InsufficientFeatures, NoConsensus, DegenerateCorrespondence) as exc:
                self.failures += 1
                log.warning("%s pair %d: %s; using identity", seq.video_id, t, exc)
        return out
