"""Video decoding and deterministic multi-scale patch sampling."""
from __future__ import annotations

import logging
import re
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import cv2
import numpy as np
import torch
import torch.nn.functional as F

from skyreg.errors import (DecodeFailure, EmptyVideo, FrameRangeError,
                           OutOfBounds)

log = logging.getLogger(__name__)

ESTIMATION_SIZE = (320, 180)  # (width, height)
PARENT_SIZE = 128
CHILD_SIZE = 64
DEFAULT_EPISODE_LEN = 16
DEFAULT_MARGIN = 32
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}
VIDEO_SUFFIXES = {".mp4", ".avi", ".mov", ".mkv", ".m4v", ".mpg", ".mpeg", ".webm"}


@dataclass
class FrameSequence:
    frames: np.ndarray  # (N, H, W) float32 in [0, 1]
    source_size: tuple[int, int]
    video_id: str

    def __post_init__(self):
        if self.frames.ndim != 3:
            raise ValueError("frames must be (N, H, W)")
        if len(self.frames) < 2:
            raise EmptyVideo(f"{self.video_id}: need at least 2 frames, got {len(self.frames)}")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def size(self) -> tuple[int, int]:
        return self.frames.shape[2], self.frames.shape[1]


@dataclass(frozen=True)
class PatchSpec:
    frame_index: int
    top_left: tuple[int, int]
    size: int
    scale_level: str  # "parent" | "child"
    stream_id: int
    parent_id: Optional[int] = None


@dataclass
class EpisodeBatch:
    frames: np.ndarray  # (K, H, W)
    streams: list[PatchSpec]
    rng_seed: int
    video_id: str = ""
    episode_start: int = 0

    @property
    def episode_len(self) -> int:
        return len(self.frames)

    @property
    def parents(self) -> list[PatchSpec]:
        return [s for s in self.streams if s.scale_level == "parent"]

    def children_of(self, parent: PatchSpec) -> list[PatchSpec]:
        return [s for s in self.streams if s.parent_id == parent.stream_id]


def _frame_key(p: Path):
    nums = re.findall(r"\d+", p.stem)
    return (int(nums[-1]) if nums else -1, p.name)


def _to_gray_unit(img: np.ndarray) -> np.ndarray:
    if img.ndim == 3:
        code = cv2.COLOR_BGRA2GRAY if img.shape[2] == 4 else cv2.COLOR_BGR2GRAY
        img = cv2.cvtColor(img, code)
    scale = 65535.0 if img.dtype == np.uint16 else 255.0
    return img.astype(np.float32) / scale


def _read_frames(path: Path):
    if path.is_dir():
        files = sorted((p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES),
                       key=_frame_key)
        for f in files:
            img = cv2.imread(str(f), cv2.IMREAD_UNCHANGED)
            if img is None:
                raise DecodeFailure(f"cannot decode image {f}")
            yield img
        return
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise DecodeFailure(f"cannot open video {path}")
    try:
        while True:
            ok, img = cap.read()
            if not ok:
                break
            yield img
    finally:
        cap.release()


def load_video(path, target_size: tuple[int, int] = ESTIMATION_SIZE) -> FrameSequence:
    """Decode a video file or a directory of numbered frames.

    Frames become single-channel luminance, area-resized to ``target_size``
    (width, height) and scaled to [0, 1].
    """
    path = Path(path)
    if not path.exists():
        raise DecodeFailure(f"{path} does not exist")
    frames = []
    source_size = None
    for img in _read_frames(path):
        gray = _to_gray_unit(img)
        if source_size is None:
            source_size = (gray.shape[1], gray.shape[0])
        if (gray.shape[1], gray.shape[0]) != tuple(target_size):
            gray = cv2.resize(gray, tuple(target_size), interpolation=cv2.INTER_AREA)
        frames.append(gray)
    if len(frames) < 2:
        raise EmptyVideo(f"{path}: need at least 2 frames, got {len(frames)}")
    w, h = source_size
    if abs(w * 9 - h * 16) > 16:
        log.warning("%s: source aspect %dx%d is not 16:9", path, w, h)
    video_id = path.stem if path.is_file() else path.name
    return FrameSequence(np.clip(np.stack(frames), 0.0, 1.0), (w, h), video_id)


def list_videos(root, split: str) -> list[Path]:
    """Videos under ``root/split``; ``root/manifest.txt`` restricts the ids if present."""
    base = Path(root) / split
    if not base.is_dir():
        return []
    entries = sorted(p for p in base.iterdir()
                     if p.is_dir() or p.suffix.lower() in VIDEO_SUFFIXES)
    manifest = Path(root) / "manifest.txt"
    if manifest.is_file():
        ids = {line.strip() for line in manifest.read_text().splitlines() if line.strip()}
        entries = [p for p in entries if (p.stem if p.is_file() else p.name) in ids]
    return entries


def load_split(root, split: str, target_size=ESTIMATION_SIZE) -> list[FrameSequence]:
    return [load_video(p, target_size) for p in list_videos(root, split)]


def parent_bounds(frame_size, margin: int = DEFAULT_MARGIN,
                  size: int = PARENT_SIZE) -> tuple[tuple[int, int], tuple[int, int]]:
    """Inclusive ranges of admissible parent top-left (u, v) coordinates."""
    width, height = frame_size
    mu = min(margin, (width - size) // 2)
    mv = min(margin, (height - size) // 2)
    if mu < 0 or mv < 0:
        raise OutOfBounds(f"frame {frame_size} cannot hold a {size} patch")
    return (mu, width - size - mu), (mv, height - size - mv)


def episode_rng(video_id: str, episode_start: int, rng_seed: int) -> np.random.Generator:
    return np.random.default_rng([zlib.crc32(video_id.encode()), episode_start, rng_seed])


def sample_patch_streams(seq: FrameSequence, episode_start: int, n_parents: int,
                         rng_seed: int, episode_len: int = DEFAULT_EPISODE_LEN,
                         margin: int = DEFAULT_MARGIN) -> EpisodeBatch:
    """Draw ``n_parents`` parent patches, each with its four child tiles.

    Locations are a pure function of ``(video_id, episode_start, rng_seed)``
    and are shared by every frame of the episode.
    """
    if n_parents < 1:
        raise ValueError("n_parents must be >= 1")
    if episode_start < 0 or episode_start + episode_len > len(seq):
        raise FrameRangeError(
            f"episode [{episode_start}, {episode_start + episode_len}) outside "
            f"{len(seq)} frames")
    (u_lo, u_hi), (v_lo, v_hi) = parent_bounds(seq.size, margin)
    rng = episode_rng(seq.video_id, episode_start, rng_seed)
    streams: list[PatchSpec] = []
    parents = []
    for _ in range(n_parents):
        u = int(rng.integers(u_lo, u_hi + 1))
        v = int(rng.integers(v_lo, v_hi + 1))
        p = PatchSpec(episode_start, (u, v), PARENT_SIZE, "parent", len(parents))
        parents.append(p)
    streams.extend(parents)
    sid = len(parents)
    for p in parents:
        u, v = p.top_left
        for dv in (0, CHILD_SIZE):
            for du in (0, CHILD_SIZE):
                streams.append(PatchSpec(episode_start, (u + du, v + dv), CHILD_SIZE,
                                         "child", sid, p.stream_id))
                sid += 1
    frames = seq.frames[episode_start:episode_start + episode_len]
    return EpisodeBatch(frames, streams, rng_seed, seq.video_id, episode_start)


def crop(frame, top_left, size: int):
    u, v = top_left
    h, w = frame.shape[-2:]
    if u < 0 or v < 0 or u + size > w or v + size > h:
        raise OutOfBounds(f"patch at {top_left} size {size} exceeds frame {w}x{h}")
    return frame[..., v:v + size, u:u + size]


def upsample(patches: torch.Tensor, out_size: int = PARENT_SIZE) -> torch.Tensor:
    """Bilinear resize of ``(..., S, S)`` patches with corner pixels aligned."""
    lead = patches.shape[:-2]
    flat = patches.reshape((-1, 1) + patches.shape[-2:])
    out = F.interpolate(flat, size=(out_size, out_size), mode="bilinear", align_corners=True)
    return out.reshape(lead + (out_size, out_size))


def extract_patch(frame, spec: PatchSpec, out_size: int = PARENT_SIZE) -> np.ndarray:
    """Crop ``spec`` from ``frame``; child crops are upsampled to ``out_size``."""
    region = crop(np.asarray(frame), spec.top_left, spec.size)
    if spec.size == out_size:
        return np.array(region)
    t = torch.as_tensor(np.ascontiguousarray(region, dtype=np.float64))
    return upsample(t, out_size).numpy().astype(np.asarray(frame).dtype)
