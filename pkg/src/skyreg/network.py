"""Patch-pair homography regressor with an optional recurrent core.

The layer plan follows the fixed eight-convolution VGG-style stack: two 3x3
convolutions per stage, 2x2 max pooling between stages, a 1024-unit fully
connected layer, an optional LSTM cell, and an 8-unit offset head.
"""
from __future__ import annotations

import io
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from skyreg import geometry
from skyreg.errors import (CheckpointIncompatible, CorruptCheckpoint,
                           ShapeMismatch, StateVariantMismatch)
from skyreg.ingest import PARENT_SIZE, EpisodeBatch, crop, upsample

VARIANTS = ("BASE", "LSTM")
FORMAT_VERSION = 1

# (kind, channels) at width_divisor=1
TABLE1_PLAN = (
    ("conv", 64), ("conv", 64), ("pool", None),
    ("conv", 64), ("conv", 64), ("pool", None),
    ("conv", 128), ("conv", 128), ("pool", None),
    ("conv", 128), ("conv", 128),
)


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "BASE"
    input_size: int = 128
    hidden_dim: int = 1024
    offset_dim: int = 8
    # Divides every conv width; 1 reproduces the published widths exactly.
    width_divisor: int = 1
    max_offset: float = 32.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.offset_dim != 8:
            raise ValueError("offset_dim is fixed at 8")

    @property
    def conv_plan(self) -> list[tuple[str, Optional[int]]]:
        return [(k, None if c is None else c // self.width_divisor) for k, c in TABLE1_PLAN]

    @property
    def feature_map(self) -> tuple[int, int, int]:
        n_pool = sum(k == "pool" for k, _ in TABLE1_PLAN)
        side = self.input_size // 2 ** n_pool
        return (self.conv_plan[-1][1], side, side)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


class HomographyNet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        layers = []
        in_ch = 2
        n_conv = 0
        for kind, ch in config.conv_plan:
            if kind == "conv":
                n_conv += 1
                conv = nn.Conv2d(in_ch, ch, 3, padding=1)
                layers.append((f"conv{n_conv}", conv))
                layers.append((f"relu{n_conv}", nn.ReLU()))
                in_ch = ch
            else:
                layers.append((f"pool{n_conv // 2}", nn.MaxPool2d(2)))
        self.features = nn.Sequential(OrderedDict(layers))
        c, s, _ = config.feature_map
        self.fc = nn.Linear(c * s * s, config.hidden_dim)
        self.lstm = nn.LSTMCell(config.hidden_dim, config.hidden_dim) if config.variant == "LSTM" else None
        self.head = nn.Linear(config.hidden_dim, config.offset_dim)

    @property
    def conv_names(self) -> list[str]:
        return [n for n, m in self.features.named_children() if isinstance(m, nn.Conv2d)]


def init_params(config: ModelConfig, seed: int = 0) -> HomographyNet:
    """Build the network with He (fan-in, ReLU gain) weights and zero biases."""
    model = HomographyNet(config)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.rsplit(".", 1)[-1].startswith("bias"):
                p.zero_()
            elif name.startswith("lstm"):
                fan_in = p.shape[1]
                p.normal_(0.0, 1.0 / math.sqrt(fan_in), generator=gen)
            else:
                fan_in = p[0].numel()
                p.normal_(0.0, math.sqrt(2.0 / fan_in), generator=gen)
    return model


def _center(p: torch.Tensor) -> torch.Tensor:
    return p - p.mean(dim=(-2, -1), keepdim=True)


def extract_features(model: HomographyNet, patch_ref, patch_tgt,
                     return_activations: bool = False):
    """Map ``(B, 128, 128)`` patch pairs to ``(B, hidden_dim)`` features."""
    dtype = model.head.weight.dtype
    ref = torch.as_tensor(patch_ref).to(dtype)
    tgt = torch.as_tensor(patch_tgt).to(dtype)
    if ref.dim() == 2:
        ref, tgt = ref[None], tgt[None]
    size = model.config.input_size
    if ref.shape[-2:] != (size, size) or tgt.shape != ref.shape:
        raise ShapeMismatch(f"expected two (B, {size}, {size}) inputs, got "
                            f"{tuple(ref.shape)} and {tuple(tgt.shape)}")
    x = torch.stack([_center(ref), _center(tgt)], dim=1)
    acts = {}
    for name, layer in model.features.named_children():
        x = layer(x)
        if return_activations and name.startswith("relu"):
            acts["conv" + name[4:]] = x
    feats = F.relu(model.fc(x.flatten(1)))
    if return_activations:
        return feats, acts
    return feats


def zero_state(model: HomographyNet, batch: int):
    dtype = model.head.weight.dtype
    h = torch.zeros(batch, model.config.hidden_dim, dtype=dtype)
    return (h, h.clone())


def step(model: HomographyNet, features: torch.Tensor, state=None):
    """One regression step. Returns ``(offsets (B, 2, 4), new_state)``."""
    is_lstm = model.config.variant == "LSTM"
    if is_lstm != (state is not None):
        raise StateVariantMismatch(
            f"{model.config.variant} model {'needs' if is_lstm else 'takes no'} recurrent state")
    if is_lstm:
        h, c = model.lstm(features, state)
        out = model.head(h)
        state = (h, c)
    else:
        out = model.head(features)
    return out.reshape(-1, 2, 4), state


@dataclass
class EpisodeOutput:
    homographies: torch.Tensor  # (S, K-1, 3, 3) float64, frame coordinates
    offsets: torch.Tensor  # (S, K-1, 2, 4) frame pixels (children already halved)
    corners: torch.Tensor  # (S, 4, 2)
    stream_ids: list[int] = field(default_factory=list)

    def as_dict(self) -> dict[tuple[int, int], torch.Tensor]:
        return {(sid, t): self.homographies[i, t]
                for i, sid in enumerate(self.stream_ids)
                for t in range(self.homographies.shape[1])}


def episode_patches(batch: EpisodeBatch, dtype=torch.float32):
    """Network-resolution patches, shape ``(S, K, 128, 128)``."""
    frames = torch.as_tensor(batch.frames)
    out = []
    for spec in batch.streams:
        region = crop(frames, spec.top_left, spec.size)
        if spec.size != PARENT_SIZE:
            region = upsample(region.to(torch.float64), PARENT_SIZE)
        out.append(region.to(dtype))
    return torch.stack(out)


def predict_offsets(model: HomographyNet, patches: torch.Tensor) -> torch.Tensor:
    """Raw network offsets for ``(S, K, 128, 128)`` patches, shape ``(S, K-1, 2, 4)``."""
    n_streams, k = patches.shape[:2]
    ref = patches[:, :-1].reshape(-1, *patches.shape[2:])
    tgt = patches[:, 1:].reshape(-1, *patches.shape[2:])
    feats = extract_features(model, ref, tgt).reshape(n_streams, k - 1, -1)
    if model.config.variant == "BASE":
        off, _ = step(model, feats.reshape(n_streams * (k - 1), -1))
        return off.reshape(n_streams, k - 1, 2, 4)
    state = zero_state(model, n_streams)
    outs = []
    for t in range(k - 1):
        off, state = step(model, feats[:, t], state)
        outs.append(off)
    return torch.stack(outs, dim=1)


def offsets_to_homographies(batch: EpisodeBatch, raw: torch.Tensor,
                            max_offset: float = 32.0):
    """DLT on frame-coordinate corners; child offsets are halved first."""
    scale = torch.tensor([s.size / PARENT_SIZE for s in batch.streams], dtype=geometry.DTYPE)
    off = raw.to(geometry.DTYPE).clamp(-max_offset, max_offset) * scale[:, None, None, None]
    corners = torch.stack([geometry.patch_corners(s.top_left, s.size) for s in batch.streams])
    hs = geometry.solve_dlt(corners[:, None], off)
    return hs, off, corners


def forward_episode(model: HomographyNet, batch: EpisodeBatch) -> EpisodeOutput:
    """Homographies between consecutive frames for every stream of the episode."""
    if batch.episode_len < 2:
        raise ValueError("episode needs at least 2 frames")
    patches = episode_patches(batch, model.head.weight.dtype)
    raw = predict_offsets(model, patches)
    hs, off, corners = offsets_to_homographies(batch, raw, model.config.max_offset)
    return EpisodeOutput(hs, off, corners, [s.stream_id for s in batch.streams])


def count_flops(config: ModelConfig) -> int:
    """Forward cost of one patch-pair inference, one FLOP per multiply-add.

    Counts conv, fully connected and LSTM gate products; pooling, activations
    and bias additions are ignored.
    """
    total = 0
    side = config.input_size
    in_ch = 2
    for kind, ch in config.conv_plan:
        if kind == "conv":
            total += side * side * in_ch * ch * 9
            in_ch = ch
        else:
            side //= 2
    total += in_ch * side * side * config.hidden_dim
    if config.variant == "LSTM":
        total += 4 * config.hidden_dim * (config.hidden_dim + config.hidden_dim)
    total += config.hidden_dim * config.offset_dim
    return total


def layer_shapes(model: HomographyNet, batch: int = 1) -> list[tuple[str, tuple[int, ...]]]:
    """Output shape after each named layer for a zero input."""
    size = model.config.input_size
    x = torch.zeros(batch, 2, size, size, dtype=model.head.weight.dtype)
    shapes = []
    with torch.no_grad():
        for name, layer in model.features.named_children():
            x = layer(x)
            if not name.startswith("relu"):
                shapes.append((name, tuple(x.shape[1:])))
        f = F.relu(model.fc(x.flatten(1)))
        shapes.append(("fc", tuple(f.shape[1:])))
        if model.lstm is not None:
            f, _ = model.lstm(f, zero_state(model, batch))
            shapes.append(("lstm", tuple(f.shape[1:])))
        shapes.append(("head", tuple(model.head(f).shape[1:])))
    return shapes


# -- checkpoint container ----------------------------------------------------

def save_checkpoint(path, model: HomographyNet, step_counter: int = 0,
                    extra: Optional[dict] = None) -> Path:
    """Write one file holding format version, config, tensors and step counter."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "model_config": asdict(model.config),
        "params": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "step_counter": int(step_counter),
        "extra": extra or {},
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)
    return path


def read_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise CorruptCheckpoint(f"{path}: no such checkpoint")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:  # torch raises several types for damaged archives
        raise CorruptCheckpoint(f"{path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CorruptCheckpoint(f"{path}: not a skyreg checkpoint")
    if payload["format_version"] > FORMAT_VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported format {payload['format_version']}")
    return payload


def load_checkpoint(path, expect: Optional[ModelConfig] = None):
    """Return ``(model, step_counter, extra)`` from a checkpoint file."""
    payload = read_checkpoint(path)
    config = ModelConfig.from_dict(payload["model_config"])
    if expect is not None and expect != config:
        raise CheckpointIncompatible(f"checkpoint config {config} != expected {expect}")
    model = HomographyNet(config)
    model.load_state_dict(payload["params"])
    return model, payload["step_counter"], payload["extra"]


def transfer_params(src: HomographyNet, dst: HomographyNet) -> None:
    """Copy every tensor that exists in both models with equal shape.

    Used to fine-tune an LSTM model from a stateless one; the feature stack
    and head must agree or :class:`CheckpointIncompatible` is raised.
    """
    s, d = src.state_dict(), dst.state_dict()
    for name, tensor in d.items():
        if name.startswith("lstm"):
            continue
        if name not in s or s[name].shape != tensor.shape:
            raise CheckpointIncompatible(f"parameter {name} missing or mis-shaped in source")
    with torch.no_grad():
        for name, tensor in d.items():
            if name in s and not name.startswith("lstm"):
                tensor.copy_(s[name])
