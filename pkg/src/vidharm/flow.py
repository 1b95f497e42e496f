"""Backward bilinear warping and Middlebury ``.flo`` I/O.

Flows follow the backward convention: ``warped(p) = source(p + flow(p))``
with ``flow[..., 0]`` the horizontal (x) and ``flow[..., 1]`` the vertical
(y) displacement in pixels.
"""
from __future__ import annotations

import os
from typing import Union

import numpy as np
import torch

FLO_MAGIC = 202021.25

ArrayOrTensor = Union[np.ndarray, torch.Tensor]


class FlowFormatError(ValueError):
    """Raised for malformed or truncated flow files."""


def _warp_tensor(frame: torch.Tensor, flow: torch.Tensor):
    # frame (B,C,H,W), flow (B,2,H,W)
    b, c, h, w = frame.shape
    if flow.shape[0] != b or flow.shape[1] != 2 or flow.shape[2:] != frame.shape[2:]:
        raise ValueError(
            f"flow shape {tuple(flow.shape)} does not match frame {tuple(frame.shape)}")
    ys, xs = torch.meshgrid(
        torch.arange(h, dtype=flow.dtype, device=flow.device),
        torch.arange(w, dtype=flow.dtype, device=flow.device),
        indexing="ij")
    sx = xs + flow[:, 0]
    sy = ys + flow[:, 1]

    x0f = torch.floor(sx)
    y0f = torch.floor(sy)
    wx = sx - x0f
    wy = sy - y0f
    x0 = x0f.long()
    y0 = y0f.long()

    flat = frame.reshape(b, c, h * w)
    out = torch.zeros_like(frame)
    for dx, dy, weight in ((0, 0, (1 - wx) * (1 - wy)),
                           (1, 0, wx * (1 - wy)),
                           (0, 1, (1 - wx) * wy),
                           (1, 1, wx * wy)):
        xi = x0 + dx
        yi = y0 + dy
        inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        idx = (yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)).reshape(b, 1, h * w)
        vals = torch.gather(flat, 2, idx.expand(b, c, h * w)).reshape(b, c, h, w)
        weight = (weight * inside.to(weight.dtype)).unsqueeze(1)
        out = out + weight.to(frame.dtype) * vals

    in_bounds = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    return out, in_bounds.to(frame.dtype).unsqueeze(1)


def warp(frame: ArrayOrTensor, flow: ArrayOrTensor):
    """Bilinearly sample ``frame`` at ``p + flow(p)``.

    Accepts either torch tensors shaped ``(B, C, H, W)`` / ``(B, 2, H, W)``
    (differentiable in both arguments) or numpy arrays shaped ``(H, W[, C])``
    / ``(H, W, 2)``. Returns ``(warped, in_bounds)`` in the same flavour as
    the input; ``in_bounds`` is 1 where the sample location lies inside the
    image and 0 elsewhere. Neighbours outside the image contribute zero.
    """
    if isinstance(frame, torch.Tensor):
        if not isinstance(flow, torch.Tensor):
            flow = torch.as_tensor(flow, dtype=frame.dtype, device=frame.device)
        if frame.dim() != 4 or flow.dim() != 4:
            raise ValueError("tensor warp expects (B,C,H,W) frame and (B,2,H,W) flow")
        return _warp_tensor(frame, flow)

    frame = np.asarray(frame)
    flow = np.asarray(flow)
    squeeze = frame.ndim == 2
    img = frame[..., None] if squeeze else frame
    if flow.shape != img.shape[:2] + (2,):
        raise ValueError(f"flow shape {flow.shape} does not match frame {frame.shape}")
    t_img = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float64)).permute(2, 0, 1)[None]
    t_flow = torch.from_numpy(np.ascontiguousarray(flow, dtype=np.float64)).permute(2, 0, 1)[None]
    with torch.no_grad():
        out, inb = _warp_tensor(t_img, t_flow)
    out = out[0].permute(1, 2, 0).numpy()
    if squeeze:
        out = out[..., 0]
    return out, inb[0, 0].numpy()


def write_flow(path: Union[str, os.PathLike], flow: np.ndarray) -> None:
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow must be (H, W, 2), got {flow.shape}")
    h, w = flow.shape[:2]
    if h == 0 or w == 0:
        raise ValueError("refusing to write an empty flow field")
    if not np.all(np.isfinite(flow)):
        raise ValueError("flow contains non-finite values")
    with open(path, "wb") as f:
        np.array([FLO_MAGIC], dtype="<f4").tofile(f)
        np.array([w, h], dtype="<i4").tofile(f)
        flow.astype("<f4").tofile(f)


def read_flow(path: Union[str, os.PathLike]) -> np.ndarray:
    """Read a Middlebury flow file into an ``(H, W, 2)`` float32 array."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12:
        raise FlowFormatError(f"{path}: truncated header")
    magic = np.frombuffer(raw, dtype="<f4", count=1)[0]
    if magic != np.float32(FLO_MAGIC):
        raise FlowFormatError(f"{path}: bad magic number {magic!r}")
    w, h = (int(v) for v in np.frombuffer(raw, dtype="<i4", count=2, offset=4))
    if w <= 0 or h <= 0:
        raise FlowFormatError(f"{path}: invalid dimensions {w}x{h}")
    n = 2 * w * h
    if len(raw) - 12 < 4 * n:
        raise FlowFormatError(f"{path}: truncated data ({len(raw) - 12} bytes, need {4 * n})")
    data = np.frombuffer(raw, dtype="<f4", count=n, offset=12)
    return data.reshape(h, w, 2).astype(np.float32)
