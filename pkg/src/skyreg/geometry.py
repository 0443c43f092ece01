"""Projective geometry core.

Conventions used throughout the package:

* A homography is a ``(..., 3, 3)`` float64 tensor mapping homogeneous pixel
  coordinates ``[u, v, 1]`` of a source frame to a target frame. The canonical
  representative has ``h[2, 2] == 1``.
* Pixel centres sit on integer coordinates; ``u`` is the column, ``v`` the row.
* Patch corners are ordered top-left, top-right, bottom-right, bottom-left and
  span a square of side ``size`` (so the top-right corner of a 128 patch at
  ``(u0, v0)`` is ``(u0 + 128, v0)``).
* Corner offsets are ``(..., 2, 4)``: row 0 holds the ``du`` of each corner,
  row 1 the ``dv``.

Everything here is differentiable through torch autograd.
"""
from __future__ import annotations

from typing import Sequence

import torch

from skyreg.errors import DegenerateCorrespondence, DivergentPoint

DTYPE = torch.float64
RCOND_TOL = 1e-10
W_EPS = 1e-9


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if x.dtype == DTYPE else x.to(DTYPE)
    return torch.as_tensor(x, dtype=DTYPE)


def normalize(h) -> torch.Tensor:
    h = as_tensor(h)
    return h / h[..., 2:3, 2:3]


def identity(*batch: int) -> torch.Tensor:
    return torch.eye(3, dtype=DTYPE).expand(*batch, 3, 3).clone()


def translation(tu: float, tv: float) -> torch.Tensor:
    h = torch.eye(3, dtype=DTYPE)
    h[0, 2] = tu
    h[1, 2] = tv
    return h


def patch_corners(top_left, size: int) -> torch.Tensor:
    """Corners of the axis-aligned square patch(es) with the given top-left."""
    tl = as_tensor(top_left)
    unit = torch.tensor([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=DTYPE)
    return tl.unsqueeze(-2) + size * unit


def offsets_from_homography(h, corners) -> torch.Tensor:
    """Corner displacements induced by ``h``; inverse of :func:`solve_dlt`."""
    corners = as_tensor(corners)
    moved = warp_point(h, corners)
    return (moved - corners).transpose(-1, -2)


def _hartley(points: torch.Tensor) -> torch.Tensor:
    centre = points.mean(dim=-2, keepdim=True)
    spread = (points - centre).norm(dim=-1).mean(dim=-1)
    s = (2.0 ** 0.5) / spread
    t = torch.zeros(points.shape[:-2] + (3, 3), dtype=DTYPE)
    t[..., 0, 0] = s
    t[..., 1, 1] = s
    t[..., 0, 2] = -s * centre[..., 0, 0]
    t[..., 1, 2] = -s * centre[..., 0, 1]
    t[..., 2, 2] = 1.0
    return t


def _apply(t: torch.Tensor, pts: torch.Tensor) -> torch.Tensor:
    return pts @ t[..., :2, :2].transpose(-1, -2) + t[..., :2, 2].unsqueeze(-2)


def solve_dlt(corners, offsets, check: bool = True) -> torch.Tensor:
    """Homography taking each corner to ``corner + offset``.

    Solves the 8-unknown linear system (``h33 = 1``) on Hartley-normalised
    coordinates. Batched over leading dimensions and differentiable in
    ``offsets``.
    """
    src = as_tensor(corners)
    offsets = as_tensor(offsets)
    src = src.expand(offsets.shape[:-2] + (4, 2))
    dst = src + offsets.transpose(-1, -2)

    # Normalising with the source transform for both sides keeps the
    # conditioner independent of the prediction.
    t = _hartley(src.detach())
    s = _apply(t, src)
    d = _apply(t, dst)

    x, y = s[..., 0], s[..., 1]
    xp, yp = d[..., 0], d[..., 1]
    one = torch.ones_like(x)
    zero = torch.zeros_like(x)
    rows_u = torch.stack([x, y, one, zero, zero, zero, -x * xp, -y * xp], dim=-1)
    rows_v = torch.stack([zero, zero, zero, x, y, one, -x * yp, -y * yp], dim=-1)
    a = torch.stack([rows_u, rows_v], dim=-2).reshape(src.shape[:-2] + (8, 8))
    b = torch.stack([xp, yp], dim=-1).reshape(src.shape[:-2] + (8,))

    if check:
        sv = torch.linalg.svdvals(a.detach())
        rcond = sv[..., -1] / sv[..., 0]
        if bool((rcond < RCOND_TOL).any()):
            raise DegenerateCorrespondence(
                f"DLT system singular (min rcond {float(rcond.min()):.3e})")

    sol = torch.linalg.solve(a, b.unsqueeze(-1)).squeeze(-1)
    hn = torch.cat([sol, torch.ones_like(sol[..., :1])], dim=-1)
    hn = hn.reshape(src.shape[:-2] + (3, 3))
    if check:
        det = torch.linalg.det(hn.detach())
        if bool((det.abs() < 1e-12).any()):
            raise DegenerateCorrespondence("DLT solution is rank deficient")
    h = torch.linalg.inv(t) @ hn @ t
    return normalize(h)


def compose(hs: Sequence[torch.Tensor] | torch.Tensor) -> torch.Tensor:
    """Chain homographies in time order: ``hs[0]`` is applied first."""
    if isinstance(hs, torch.Tensor):
        seq = list(hs.unbind(0))
    else:
        seq = [as_tensor(h) for h in hs]
    if not seq:
        raise ValueError("compose needs at least one homography")
    out = seq[0]
    for h in seq[1:]:
        out = h @ out
    return normalize(out)


def warp_point(h, x) -> torch.Tensor:
    """Map ``(..., 2)`` pixel coordinates through ``h`` with perspective divide."""
    h = as_tensor(h)
    x = as_tensor(x)
    hom = torch.cat([x, torch.ones_like(x[..., :1])], dim=-1)
    p = hom @ h.transpose(-1, -2) if h.dim() > 2 else hom @ h.T
    w = p[..., 2:3]
    if bool((w.abs() < W_EPS).any()):
        raise DivergentPoint("point maps to the line at infinity")
    return p[..., :2] / w


def rescale_homography(h, sx: float, sy: float) -> torch.Tensor:
    """Express ``h`` in a coordinate system scaled by ``diag(sx, sy)``."""
    if sx <= 0 or sy <= 0:
        raise ValueError("scale factors must be positive")
    h = as_tensor(h)
    s = torch.diag(torch.tensor([sx, sy, 1.0], dtype=DTYPE))
    s_inv = torch.diag(torch.tensor([1.0 / sx, 1.0 / sy, 1.0], dtype=DTYPE))
    return normalize(s @ h @ s_inv)


def sample_grid(size: int, top_left) -> torch.Tensor:
    """Integer pixel positions of a ``size`` x ``size`` region, shape (..., size*size, 2)."""
    tl = as_tensor(top_left)
    r = torch.arange(size, dtype=DTYPE)
    vv, uu = torch.meshgrid(r, r, indexing="ij")
    grid = torch.stack([uu.reshape(-1), vv.reshape(-1)], dim=-1)
    return grid + tl.unsqueeze(-2)


def warp_image(img, h, out_corners) -> tuple[torch.Tensor, torch.Tensor]:
    """Sample ``img`` at ``h @ x`` for every pixel ``x`` of the output square.

    ``img`` is ``(H, W)`` or ``(B, H, W)``; ``h`` and ``out_corners`` carry the
    matching batch dimension. Returns ``(values, mask)`` of shape
    ``(B, S, S)`` (batch dim dropped for unbatched input); out-of-bounds
    samples are zero with mask 0.
    """
    img = as_tensor(img)
    h = as_tensor(h)
    corners = as_tensor(out_corners)
    unbatched = img.dim() == 2
    if unbatched:
        img, h, corners = img[None], h.reshape(1, 3, 3), corners.reshape(1, 4, 2)
    bsz, height, width = img.shape
    h = h.expand(bsz, 3, 3)
    corners = corners.expand(bsz, 4, 2)
    size = int(round(float(corners[0, 1, 0] - corners[0, 0, 0])))

    x = sample_grid(size, corners[:, 0].detach())
    hom = torch.cat([x, torch.ones_like(x[..., :1])], dim=-1)
    p = hom @ h.transpose(-1, -2)
    w = p[..., 2]
    bad = w.abs() < W_EPS
    w = torch.where(bad, torch.full_like(w, W_EPS), w)
    pu = p[..., 0] / w
    pv = p[..., 1] / w

    with torch.no_grad():
        mask = (~bad) & (pu >= 0) & (pu <= width - 1) & (pv >= 0) & (pv <= height - 1)
        mask = mask.to(DTYPE)
    # Direct bilinear gather: exact at integer positions, differentiable in
    # the sample coordinates. Masked-out coordinates are parked at 0.
    pu = torch.where(mask > 0, pu, torch.zeros_like(pu))
    pv = torch.where(mask > 0, pv, torch.zeros_like(pv))
    with torch.no_grad():
        j0 = pu.floor().clamp(max=max(width - 2, 0)).long()
        i0 = pv.floor().clamp(max=max(height - 2, 0)).long()
    fu = pu - j0
    fv = pv - i0
    j1 = j0 + (1 if width > 1 else 0)
    i1 = i0 + (1 if height > 1 else 0)
    flat = img.reshape(bsz, -1)

    def at(i, j):
        return flat.gather(1, i * width + j)

    out = ((1.0 - fv) * ((1.0 - fu) * at(i0, j0) + fu * at(i0, j1))
           + fv * ((1.0 - fu) * at(i1, j0) + fu * at(i1, j1)))
    out = out.reshape(bsz, size, size)
    mask = mask.reshape(bsz, size, size)
    out = out * mask
    if unbatched:
        return out[0], mask[0]
    return out, mask
