"""Panorama compositing from a chain of per-pair homographies."""
from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

from skyreg import kernels
from skyreg.errors import CanvasTooLarge

MAX_AREA_FACTOR = 20


def to_reference(hs, reference_index: int = 0) -> np.ndarray:
    """Maps from every frame into the reference frame's pixel plane.

    ``hs[t]`` maps frame ``t`` to ``t+1``; the result has ``len(hs) + 1`` entries.
    """
    hs = np.asarray(hs, np.float64).reshape(-1, 3, 3)
    n = len(hs) + 1
    if not 0 <= reference_index < n:
        raise ValueError(f"reference_index {reference_index} outside [0, {n})")
    out = np.empty((n, 3, 3))
    out[reference_index] = np.eye(3)
    for t in range(reference_index + 1, n):
        out[t] = out[t - 1] @ np.linalg.inv(hs[t - 1])
    for t in range(reference_index - 1, -1, -1):
        out[t] = out[t + 1] @ hs[t]
    return out / out[:, 2:3, 2:3]


def _corners(w, h):
    return np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], np.float64)


def stitch(frames, hs, reference_index: int = 0):
    """Composite ``frames`` (N, H, W) into the reference plane.

    Returns ``(canvas, offset)``; ``offset`` is the (u, v) canvas position of
    the reference frame origin. Later frames overwrite earlier ones.
    """
    frames = np.asarray(frames)
    if frames.ndim == 2:
        frames = frames[None]
    n, height, width = frames.shape
    if len(hs) != n - 1:
        raise ValueError(f"need {n - 1} homographies, got {len(hs)}")
    maps = to_reference(hs, reference_index)
    quads = []
    for g in maps:
        hom = np.c_[_corners(width, height), np.ones(4)] @ g.T
        if np.any(hom[:, 2] <= 1e-9):
            raise CanvasTooLarge("a frame maps across the horizon")
        quads.append(hom[:, :2] / hom[:, 2:])
    pts = np.concatenate(quads)
    lo = np.floor(pts.min(axis=0) + 1e-9)
    hi = np.ceil(pts.max(axis=0) - 1e-9)
    cw, ch = int(hi[0] - lo[0]) + 1, int(hi[1] - lo[1]) + 1
    if cw * ch > MAX_AREA_FACTOR * width * height:
        raise CanvasTooLarge(f"canvas {cw}x{ch} exceeds {MAX_AREA_FACTOR}x the frame area")
    canvas = np.zeros((ch, cw), np.float64)
    for frame, g in zip(frames, maps):
        # canvas pixel x sits at x + lo in the reference plane
        inv = np.linalg.inv(g)
        img, mask = kernels.warp_bilinear(frame.astype(np.float64), inv, (ch, cw),
                                          origin=(lo[0], lo[1]))
        canvas[mask] = img[mask]
    return canvas, (float(-lo[0]), float(-lo[1]))


def save_png(canvas, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img = np.clip(np.round(np.asarray(canvas) * 255.0), 0, 255).astype(np.uint8)
    cv2.imwrite(str(path), img)
    return path
