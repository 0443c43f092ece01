"""Photometric objective and the consistency regularizers.

Regularizer distances are elementwise L1 on ``h[2, 2] = 1`` normalised
matrices. Photometric terms are mean absolute differences over valid
(in-frame) pixels. Weights follow ``1 / (element_count * N)`` for the three
matrix regularizers and ``1 / N`` for the episode term, where ``N`` counts the
summands actually present in the batch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import torch

from skyreg import geometry
from skyreg.ingest import EpisodeBatch

ELEMENT_COUNT = 9  # entries of a 3x3 homography
MIN_VALID_FRACTION = 0.25
REGULARIZERS = ("p", "s", "t1", "t2")


def photometric_terms(patch_ref, frame_tgt, h, corners):
    """Batched photometric residuals.

    ``patch_ref`` is ``(B, S, S)``, ``frame_tgt`` ``(B, H, W)``, ``h``
    ``(B, 3, 3)``, ``corners`` ``(B, 4, 2)``. Returns per-item mean absolute
    differences ``(B,)`` (zeroed where fewer than a quarter of the pixels are
    valid) and the valid fractions ``(B,)``.
    """
    warped, mask = geometry.warp_image(frame_tgt, h, corners)
    ref = geometry.as_tensor(patch_ref)
    n_valid = mask.sum(dim=(-2, -1))
    frac = n_valid / mask[0].numel()
    total = ((ref - warped).abs() * mask).sum(dim=(-2, -1))
    loss = torch.where(frac >= MIN_VALID_FRACTION, total / n_valid.clamp(min=1.0),
                       torch.zeros_like(total))
    return loss, frac


def photometric_loss(patch_ref, frame_tgt, h, corners):
    """Mean absolute intensity difference between a reference patch and the
    target frame sampled at ``h @ x``.

    Returns ``(loss, valid_fraction)``; the loss is 0 when
    ``valid_fraction < 0.25`` and callers treat that as a coverage warning.
    """
    loss, frac = photometric_terms(geometry.as_tensor(patch_ref)[None],
                                   geometry.as_tensor(frame_tgt)[None],
                                   geometry.as_tensor(h).reshape(1, 3, 3),
                                   geometry.as_tensor(corners).reshape(1, 4, 2))
    return loss[0], float(frac[0])


def _l1(a, b) -> torch.Tensor:
    return (geometry.normalize(a) - geometry.normalize(b)).abs().sum(dim=(-2, -1))


def reg_spatial(hs) -> torch.Tensor:
    """Sum of L1 distances over unordered pairs of same-frame-pair homographies.

    ``hs`` is ``(..., P, 3, 3)``; leading dimensions are summed as well.
    """
    hs = geometry.as_tensor(hs)
    n = hs.shape[-3]
    if n < 2:
        return hs.new_zeros(())
    i, j = torch.triu_indices(n, n, offset=1)
    return _l1(hs[..., i, :, :], hs[..., j, :, :]).sum()


def reg_scale(parent_h, child_hs) -> torch.Tensor:
    """Sum of L1 distances from a parent homography to each of its children.

    ``parent_h`` is ``(..., 3, 3)`` and ``child_hs`` ``(..., 4, 3, 3)``.
    """
    parent = geometry.as_tensor(parent_h)
    children = geometry.as_tensor(child_hs)
    return _l1(parent.unsqueeze(-3), children).sum()


def reg_temporal_smooth(h_t, h_t1) -> torch.Tensor:
    """L1 distance between consecutive frame-pair homographies of one stream."""
    return _l1(h_t, h_t1).sum()


def temporal_pairs(episode_len: int) -> list[tuple[int, int]]:
    """(t, s) index pairs compared by the episode consistency term."""
    # s runs over [t + 2, t + K - 1] clipped to the episode.
    return [(t, s) for t in range(episode_len) for s in range(t + 2, episode_len)]


def _ref_patches(frames: torch.Tensor, corners: torch.Tensor, t_idx, size: int):
    grid = geometry.sample_grid(size, corners[:, 0]).round().long()
    u = grid[..., 0].reshape(-1, size, size)
    v = grid[..., 1].reshape(-1, size, size)
    return frames[t_idx[:, None, None], v, u]


def reg_temporal_episode(frames, hs, corners) -> torch.Tensor:
    """Photometric consistency of composed chains across an episode.

    ``frames`` is ``(K, H, W)``. With ``hs`` ``(K-1, 3, 3)`` and ``corners``
    ``(4, 2)`` one stream is evaluated; ``(S, K-1, 3, 3)`` and ``(S, 4, 2)``
    evaluate ``S`` equally sized streams and sum them. For every ``t`` and
    ``s >= t + 2`` the patch of frame ``t`` is compared with frame ``s``
    sampled through the composed chain ``H[t, s]``.
    """
    frames = geometry.as_tensor(frames)
    hs = geometry.as_tensor(hs)
    corners = geometry.as_tensor(corners)
    if hs.dim() == 3:
        hs, corners = hs[None], corners[None]
    k = frames.shape[0]
    pairs = temporal_pairs(k)
    if not pairs:
        return hs.new_zeros(())
    n_streams = hs.shape[0]
    size = int(round(float(corners[0, 1, 0] - corners[0, 0, 0])))

    # chains[t][s] = H[t, s], built incrementally so each product is reused.
    chained, src_t, tgt_s = [], [], []
    for t in range(k):
        acc = None
        for s in range(t + 1, k):
            acc = hs[:, s - 1] if acc is None else hs[:, s - 1] @ acc
            if s >= t + 2:
                chained.append(geometry.normalize(acc))
                src_t.append(t)
                tgt_s.append(s)
    chain = torch.stack(chained, dim=1).reshape(-1, 3, 3)  # (S*P, 3, 3) stream-major
    n_pairs = len(src_t)
    t_idx = torch.tensor(src_t).repeat(n_streams)
    s_idx = torch.tensor(tgt_s).repeat(n_streams)
    crn = corners.repeat_interleave(n_pairs, dim=0)

    refs = _ref_patches(frames, crn, t_idx, size)
    loss, _ = photometric_terms(refs, frames[s_idx], chain, crn)
    return loss.sum()


@dataclass(frozen=True)
class LossWeights:
    lambda_p: float = 0.0
    lambda_s: float = 0.0
    lambda_t1: float = 0.0
    lambda_t2: float = 0.0

    @classmethod
    def from_counts(cls, n_p: int, n_s: int, n_t1: int, n_t2: int) -> "LossWeights":
        def inv(n, k=1):
            return 1.0 / (k * n) if n > 0 else 0.0
        return cls(inv(n_p, ELEMENT_COUNT), inv(n_s, ELEMENT_COUNT),
                   inv(n_t1, ELEMENT_COUNT), inv(n_t2))


@dataclass
class LossReport:
    photometric: float
    reg_p: float
    reg_s: float
    reg_t1: float
    reg_t2: float
    total: float
    valid_pixel_fraction: float

    CSV_HEADER = ("step", "photometric", "reg_p", "reg_s", "reg_t1", "reg_t2",
                  "total", "valid_pixel_fraction")

    def as_row(self, step: int) -> list:
        return [step] + [repr(float(getattr(self, f.name))) for f in fields(self)]

    @classmethod
    def mean(cls, reports: list["LossReport"]) -> "LossReport":
        return cls(*(math.fsum(getattr(r, f.name) for r in reports) / len(reports)
                     for f in fields(cls)))


def _scalar(x) -> float:
    return float(x.detach()) if isinstance(x, torch.Tensor) else float(x)


def total_loss(photometric, reg_p, reg_s, reg_t1, reg_t2, weights: LossWeights,
               valid_pixel_fraction: float = 1.0):
    """Weighted sum of the components. Returns ``(total, LossReport)``.

    ``total`` keeps the autograd graph of tensor inputs.
    """
    total = (photometric + weights.lambda_p * reg_p + weights.lambda_s * reg_s
             + weights.lambda_t1 * reg_t1 + weights.lambda_t2 * reg_t2)
    report = LossReport(*(_scalar(x) for x in (photometric, reg_p, reg_s, reg_t1, reg_t2, total)),
                        float(valid_pixel_fraction))
    return total, report


def episode_loss(hs: torch.Tensor, batch: EpisodeBatch, enabled=(), frames=None):
    """Full objective for one episode given its ``(S, K-1, 3, 3)`` homographies.

    ``enabled`` selects regularizers from ``{"p", "s", "t1", "t2"}``.
    Returns ``(total, LossReport)``.
    """
    enabled = set(enabled)
    unknown = enabled - set(REGULARIZERS)
    if unknown:
        raise ValueError(f"unknown regularizers {sorted(unknown)}")
    frames = geometry.as_tensor(batch.frames if frames is None else frames)
    n_streams, n_pairs = hs.shape[:2]
    streams = batch.streams
    zero = hs.new_zeros(())

    # Photometric term over every (stream, t) pair, grouped by patch size.
    losses, fracs = [], []
    for size in sorted({s.size for s in streams}):
        idx = [i for i, s in enumerate(streams) if s.size == size]
        corners = torch.stack([geometry.patch_corners(streams[i].top_left, size) for i in idx])
        crn = corners.repeat_interleave(n_pairs, dim=0)
        t_idx = torch.arange(n_pairs).repeat(len(idx))
        refs = _ref_patches(frames, crn, t_idx, size)
        loss, frac = photometric_terms(refs, frames[t_idx + 1], hs[idx].reshape(-1, 3, 3), crn)
        losses.append(loss)
        fracs.append(frac)
    photometric = torch.cat(losses).mean()
    valid = float(torch.cat(fracs).mean())

    parents = batch.parents
    p_idx = [streams.index(p) for p in parents]

    r_p, n_p = zero, 0
    if "p" in enabled and len(parents) >= 2:
        ph = hs[p_idx].transpose(0, 1)  # (K-1, P, 3, 3)
        r_p = reg_spatial(ph)
        n_p = n_pairs * len(parents) * (len(parents) - 1) // 2

    r_s, n_s = zero, 0
    if "s" in enabled:
        for i, p in zip(p_idx, parents):
            c_idx = [streams.index(c) for c in batch.children_of(p)]
            if c_idx:
                r_s = r_s + reg_scale(hs[i], hs[c_idx].transpose(0, 1))
                n_s += n_pairs * len(c_idx)

    r_t1, n_t1 = zero, 0
    if "t1" in enabled and n_pairs >= 2:
        r_t1 = reg_temporal_smooth(hs[:, :-1], hs[:, 1:])
        n_t1 = n_streams * (n_pairs - 1)

    r_t2, n_t2 = zero, 0
    if "t2" in enabled:
        n_terms = len(temporal_pairs(batch.episode_len))
        if n_terms:
            for size in sorted({s.size for s in streams}):
                idx = [i for i, s in enumerate(streams) if s.size == size]
                corners = torch.stack([geometry.patch_corners(streams[i].top_left, size)
                                       for i in idx])
                r_t2 = r_t2 + reg_temporal_episode(frames, hs[idx], corners)
            n_t2 = n_streams * n_terms

    weights = LossWeights.from_counts(n_p, n_s, n_t1, n_t2)
    return total_loss(photometric, r_p, r_s, r_t1, r_t2, weights, valid)
