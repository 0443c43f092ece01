"""Gradient-weighted activation maps and photometric-loss histograms."""
from __future__ import annotations

import csv
from pathlib import Path

import cv2
import numpy as np
import torch
import torch.nn.functional as F

from skyreg import geometry, network
from skyreg.errors import UnknownLayer
from skyreg.ingest import PARENT_SIZE, PatchSpec, EpisodeBatch, parent_bounds
from skyreg.losses import photometric_loss

DEFAULT_BINS = 50


def _pair_loss(model, frame_a, frame_b, top_left, layer=None):
    """Photometric loss of one parent patch pair, optionally with activations."""
    spec = PatchSpec(0, tuple(int(c) for c in top_left), PARENT_SIZE, "parent", 0)
    frames = np.stack([np.asarray(frame_a), np.asarray(frame_b)])
    batch = EpisodeBatch(frames, [spec], 0)
    patches = network.episode_patches(batch, model.head.weight.dtype)
    feats, acts = network.extract_features(model, patches[:, 0], patches[:, 1],
                                           return_activations=True)
    if layer is not None:
        if layer not in acts:
            raise UnknownLayer(f"unknown layer {layer!r}; choose from {sorted(acts)}")
        acts[layer].retain_grad()
    state = network.zero_state(model, 1) if model.config.variant == "LSTM" else None
    raw, _ = network.step(model, feats, state)
    hs, _, corners = network.offsets_to_homographies(batch, raw[:, None], model.config.max_offset)
    loss, _ = photometric_loss(patches[0, 0].to(geometry.DTYPE), frames[1], hs[0, 0], corners[0])
    return loss, (acts[layer] if layer is not None else None)


def activation_map(model, frame_a, frame_b, top_left, layer: str = "conv2") -> np.ndarray:
    """Gradient-weighted activation heat map over the 128x128 reference patch.

    Each channel of ``layer`` is weighted by its spatially averaged gradient of
    the photometric loss; the weighted sum is rectified, scaled to [0, 1] and
    bilinearly resized to the patch size.
    """
    model.eval()
    model.zero_grad(set_to_none=True)
    loss, act = _pair_loss(model, frame_a, frame_b, top_left, layer)
    if loss.requires_grad:
        loss.backward()
    grad = act.grad if act.grad is not None else torch.zeros_like(act)
    weights = grad.mean(dim=(-2, -1), keepdim=True)
    cam = F.relu((weights * act).sum(dim=1, keepdim=True)).detach().to(torch.float64)
    cam = F.interpolate(cam, size=(PARENT_SIZE, PARENT_SIZE), mode="bilinear",
                        align_corners=False)[0, 0]
    peak = float(cam.max())
    if peak <= 0.0:
        return np.zeros((PARENT_SIZE, PARENT_SIZE))
    return (cam / peak).clamp(0.0, 1.0).numpy()


def overlay_png(patch, heat, path, alpha: float = 0.5) -> Path:
    """Jet-coloured ``heat`` blended over the grey ``patch``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grey = np.clip(np.round(np.asarray(patch) * 255), 0, 255).astype(np.uint8)
    colour = cv2.applyColorMap(np.round(np.asarray(heat) * 255).astype(np.uint8), cv2.COLORMAP_JET)
    blended = cv2.addWeighted(colour, alpha, cv2.cvtColor(grey, cv2.COLOR_GRAY2BGR), 1 - alpha, 0)
    cv2.imwrite(str(path), blended)
    return path


def sample_locations(frame_size, n_samples: int, seed: int):
    (u_lo, u_hi), (v_lo, v_hi) = parent_bounds(frame_size)
    rng = np.random.default_rng(seed)
    return np.stack([rng.integers(u_lo, u_hi + 1, n_samples),
                     rng.integers(v_lo, v_hi + 1, n_samples)], axis=1)


@torch.no_grad()
def patch_losses(model, frame_a, frame_b, n_samples: int, seed: int = 0) -> np.ndarray:
    """Photometric loss for ``n_samples`` random parent patch pairs."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    model.eval()
    size = (np.shape(frame_a)[1], np.shape(frame_a)[0])
    return np.array([float(_pair_loss(model, frame_a, frame_b, tl)[0])
                     for tl in sample_locations(size, n_samples, seed)])


def histogram(values, bins: int = DEFAULT_BINS):
    """Counts and edges over ``[0, max(values)]``."""
    values = np.asarray(values, np.float64)
    top = float(values.max()) if values.size else 0.0
    counts, edges = np.histogram(values, bins=bins, range=(0.0, top if top > 0 else 1.0))
    return counts, edges


def loss_histogram(model, frame_a, frame_b, n_samples: int = 1000,
                   bins: int = DEFAULT_BINS, seed: int = 0):
    return histogram(patch_losses(model, frame_a, frame_b, n_samples, seed), bins)


def write_histogram_csv(counts, edges, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            writer.writerow([repr(float(lo)), repr(float(hi)), int(c)])
    return path
