"""Ground-truth sequences rendered from a planar texture.

Every frame is a homographic view of one texture, so the per-pair
homographies, and the landmark tracks derived from them, are exact.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import cv2
import numpy as np

from skyreg import kernels
from skyreg.errors import FootprintOverflow
from skyreg.evaluation import ANNOTATION_STRIDE, LandmarkAnnotation, write_annotations
from skyreg.ingest import ESTIMATION_SIZE, FrameSequence

FULL_SCALE = 4
DETAIL_WEIGHT = 0.3


@dataclass(frozen=True)
class MotionStep:
    """Frame-to-frame motion: image content moves by (tx, ty) px and rotates /
    scales about the frame centre."""
    tx: float = 0.0
    ty: float = 0.0
    rotation_deg: float = 0.0
    scale: float = 1.0


@dataclass
class SyntheticSpec:
    motion: Sequence[MotionStep] = (MotionStep(1.0, 0.0),)
    length: int = 64
    noise_sigma: float = 0.0
    seed: int = 0
    texture: Optional[np.ndarray] = None
    frame_size: tuple[int, int] = ESTIMATION_SIZE
    landmarks_per_interval: int = 8
    video_id: str = "synthetic"


@dataclass
class SyntheticClip:
    sequence: FrameSequence
    homographies: np.ndarray  # (N-1, 3, 3), estimation resolution
    annotation: LandmarkAnnotation
    frame_to_texture: np.ndarray = field(repr=False)  # (N, 3, 3)


def make_texture(width: int, height: int, seed: int = 0) -> np.ndarray:
    """Feature-rich aerial-looking texture in [0.05, 0.95].

    Smooth multi-octave terrain, blurred rectangular "buildings", a few
    straight "roads" and pixel-scale clutter. The rectangles give the corner
    features ORB needs; the clutter keeps the mean absolute gradient near
    0.08 per pixel, comparable to downsampled aerial footage.
    """
    rng = np.random.default_rng(seed)
    acc = np.zeros((height, width), np.float64)
    for cell, weight in ((96, 1.0), (48, 0.6), (24, 0.4), (12, 0.25), (6, 0.15)):
        g = rng.normal(size=(height // cell + 3, width // cell + 3))
        up = cv2.resize(g, ((g.shape[1]) * cell, (g.shape[0]) * cell),
                        interpolation=cv2.INTER_CUBIC)
        acc += weight * up[:height, :width]
    acc = (acc - acc.min()) / (np.ptp(acc) + 1e-12)
    overlay = acc.copy()
    n_rect = max(4, width * height // 1500)
    for _ in range(n_rect):
        w, h = rng.integers(6, 28, size=2)
        x, y = rng.integers(0, width - w), rng.integers(0, height - h)
        overlay[y:y + h, x:x + w] = rng.uniform(0.0, 1.0)
    for _ in range(max(2, width // 200)):
        p0 = tuple(int(v) for v in rng.integers(0, [width, height]))
        p1 = tuple(int(v) for v in rng.integers(0, [width, height]))
        cv2.line(overlay, p0, p1, float(rng.uniform(0.0, 1.0)), int(rng.integers(2, 5)))
    tex = 0.35 * acc + 0.65 * cv2.GaussianBlur(overlay, (0, 0), 0.8)
    # Pixel-scale detail (ground clutter). Without it the photometric loss
    # under moderate noise prefers half-pixel offsets, where bilinear
    # interpolation averages the noise away.
    detail = cv2.GaussianBlur(rng.random((height, width)), (0, 0), 0.7)
    tex = tex + DETAIL_WEIGHT * (detail - detail.mean()) / (detail.std() + 1e-12)
    tex = (tex - tex.min()) / (np.ptp(tex) + 1e-12)
    return 0.05 + 0.9 * tex


def step_homography(step: MotionStep, frame_size) -> np.ndarray:
    """Homography mapping frame ``t`` pixels to frame ``t+1`` pixels."""
    cu, cv = (frame_size[0] - 1) / 2.0, (frame_size[1] - 1) / 2.0
    a = np.deg2rad(step.rotation_deg)
    rs = step.scale * np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    h = np.eye(3)
    h[:2, :2] = rs
    h[:2, 2] = np.array([cu, cv]) - rs @ np.array([cu, cv]) + np.array([step.tx, step.ty])
    return h


def _motion_list(spec: SyntheticSpec) -> list[MotionStep]:
    motion = list(spec.motion)
    n = spec.length - 1
    if len(motion) == 1:
        return motion * n
    if len(motion) != n:
        raise ValueError(f"motion program needs 1 or {n} steps, got {len(motion)}")
    return motion


def _frame_corners(frame_size) -> np.ndarray:
    w, h = frame_size
    return np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], np.float64)


def _map(h, pts):
    hom = np.c_[pts, np.ones(len(pts))] @ h.T
    return hom[:, :2] / hom[:, 2:]


def generate(spec: SyntheticSpec) -> SyntheticClip:
    """Render ``spec.length`` frames with exact per-pair homographies and
    landmark annotations every 30 frames at 4x resolution.

    Gaussian noise of ``noise_sigma`` is added after warping and the result is
    clipped to [0, 1].
    """
    if spec.length < 2:
        raise ValueError("length must be >= 2")
    rng = np.random.default_rng(spec.seed)
    size = spec.frame_size
    steps = [step_homography(m, size) for m in _motion_list(spec)]

    # frame t -> texture, with frame 0 as the texture frame before padding
    chain = [np.eye(3)]
    for h in steps:
        chain.append(chain[-1] @ np.linalg.inv(h))
    corners = _frame_corners(size)
    foot = np.concatenate([_map(g, corners) for g in chain])
    lo, hi = foot.min(axis=0), foot.max(axis=0)

    pad = 8.0
    if spec.texture is None:
        tex_w = int(np.ceil(hi[0] - lo[0] + 2 * pad)) + 1
        tex_h = int(np.ceil(hi[1] - lo[1] + 2 * pad)) + 1
        texture = make_texture(tex_w, tex_h, spec.seed)
        shift = pad - lo
    else:
        texture = np.asarray(spec.texture, np.float64)
        th, tw = texture.shape
        span = hi - lo
        if span[0] > tw - 1 or span[1] > th - 1:
            raise FootprintOverflow(f"footprint {span} exceeds texture {tw}x{th}")
        shift = (np.array([tw - 1, th - 1]) - span) / 2.0 - lo
    place = np.array([[1, 0, shift[0]], [0, 1, shift[1]], [0, 0, 1.0]])
    chain = np.stack([place @ g for g in chain])

    frames = np.empty((spec.length, size[1], size[0]), np.float32)
    for t, g in enumerate(chain):
        img, mask = kernels.warp_bilinear(texture, g, (size[1], size[0]))
        if not mask.all():
            raise FootprintOverflow(f"frame {t} leaves the texture")
        if spec.noise_sigma > 0:
            img = img + rng.normal(0.0, spec.noise_sigma, img.shape)
        frames[t] = np.clip(img, 0.0, 1.0)

    annotation = _annotate(spec, chain, rng)
    seq = FrameSequence(frames, (size[0] * FULL_SCALE, size[1] * FULL_SCALE), spec.video_id)
    return SyntheticClip(seq, np.stack(steps) if steps else np.zeros((0, 3, 3)),
                         annotation, chain)


def _annotate(spec: SyntheticSpec, chain: np.ndarray, rng) -> LandmarkAnnotation:
    w, h = spec.frame_size
    annotated = list(range(0, spec.length, ANNOTATION_STRIDE))
    rows: dict[int, dict[int, tuple[float, float]]] = {t: {} for t in annotated}
    next_id = 0
    for t0, t1 in zip(annotated[:-1], annotated[1:]):
        to_t1 = np.linalg.inv(chain[t1]) @ chain[t0]
        found = 0
        for _ in range(1000):
            if found == spec.landmarks_per_interval:
                break
            p = rng.uniform([4, 4], [w - 5, h - 5])
            q = _map(to_t1, p[None])[0]
            if not (0 <= q[0] <= w - 1 and 0 <= q[1] <= h - 1):
                continue
            rows[t0][next_id] = tuple(float(c) for c in FULL_SCALE * p)
            rows[t1][next_id] = tuple(float(c) for c in FULL_SCALE * q)
            next_id += 1
            found += 1
    return LandmarkAnnotation(spec.video_id, [(t, rows[t]) for t in annotated])


def write_dataset(root, splits: dict[str, list[SyntheticClip]]) -> Path:
    """Write clips in the dataset layout.

    ``root/<split>/<video_id>/frame_NNNNN.png`` (16-bit grayscale),
    ``root/truth.csv`` with per-pair homography entries and
    ``root/annotations.csv`` with landmark rows.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    annotations = []
    with open(root / "truth.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["split", "video_id", "pair_index"] +
                        [f"h{i}{j}" for i in range(3) for j in range(3)])
        for split, clips in splits.items():
            for clip in clips:
                vdir = root / split / clip.sequence.video_id
                vdir.mkdir(parents=True, exist_ok=True)
                for t, frame in enumerate(clip.sequence.frames):
                    img = np.round(frame.astype(np.float64) * 65535.0).astype(np.uint16)
                    cv2.imwrite(str(vdir / f"frame_{t:05d}.png"), img)
                for k, h in enumerate(clip.homographies):
                    writer.writerow([split, clip.sequence.video_id, k] +
                                    [repr(float(x)) for x in h.reshape(-1)])
                annotations.append(clip.annotation)
    write_annotations(root / "annotations.csv", annotations)
    return root


def read_truth(path) -> dict[str, np.ndarray]:
    """Per-video ``(N-1, 3, 3)`` ground-truth arrays from ``truth.csv``."""
    out: dict[str, list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            vals = [float(row[f"h{i}{j}"]) for i in range(3) for j in range(3)]
            out.setdefault(row["video_id"], []).append((int(row["pair_index"]), vals))
    return {k: np.array([v for _, v in sorted(rows)]).reshape(-1, 3, 3) for k, rows in out.items()}


def split_clip(clip: SyntheticClip, start: int) -> tuple[SyntheticClip, SyntheticClip]:
    """Split at frame ``start`` (a multiple of 30) into head and held-out tail.

    The head keeps frames ``[0, start)``; the tail keeps ``[start, N)`` with
    its annotations re-indexed from 0.
    """
    n = len(clip.sequence)
    if start % ANNOTATION_STRIDE or not 2 <= start <= n - 2:
        raise ValueError(f"split point {start} must be a multiple of {ANNOTATION_STRIDE} inside the clip")
    seq = clip.sequence
    ann = clip.annotation

    def part(lo, hi, suffix):
        entries = [(t - lo, pts) for t, pts in ann.entries if lo <= t < hi]
        vid = f"{seq.video_id}_{suffix}"
        return SyntheticClip(FrameSequence(seq.frames[lo:hi], seq.source_size, vid),
                             clip.homographies[lo:hi - 1], LandmarkAnnotation(vid, entries),
                             clip.frame_to_texture[lo:hi])

    return part(0, start, "head"), part(start, n, "tail")
