"""Simulated camera and foreground motion with closed-form ground-truth flow.

All coordinates are pixel-index coordinates: ``x`` is the column, ``y`` the
row, and pixel ``(i, j)`` sits at ``(x=j, y=i)``. Crop rectangles are
``(x, y, w, h)`` in pixel-edge units, so the full image is ``(0, 0, W, H)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ..flow import warp

Rect = Tuple[float, float, float, float]


@dataclass(frozen=True)
class AffineRanges:
    """Bounds for random foreground motion. ``max_translation`` is a fraction of min(H, W)."""
    max_translation: float = 0.05
    max_rotation_deg: float = 5.0
    scale_range: Tuple[float, float] = (0.95, 1.05)
    max_shear_deg: float = 2.0
    max_corner_displacement: float = 0.1

    @classmethod
    def none(cls) -> "AffineRanges":
        return cls(0.0, 0.0, (1.0, 1.0), 0.0)


@dataclass
class AffineMotion:
    matrix: np.ndarray  # 2x3, frame-1 foreground coords -> frame-2 coords
    crop_rect_1: Rect
    crop_rect_2: Rect
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64).reshape(2, 3)
        if abs(np.linalg.det(self.matrix[:, :2])) <= 1e-6:
            raise ValueError("affine matrix is not invertible")

    def inverse(self) -> np.ndarray:
        return invert_affine(self.matrix)

    def to_dict(self) -> dict:
        return {"matrix": self.matrix.tolist(), "crop_rect_1": list(self.crop_rect_1),
                "crop_rect_2": list(self.crop_rect_2), "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "AffineMotion":
        return cls(np.array(d["matrix"]), tuple(d["crop_rect_1"]), tuple(d["crop_rect_2"]),
                   dict(d.get("params", {})))


def invert_affine(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64).reshape(2, 3)
    lin = m[:, :2]
    if abs(np.linalg.det(lin)) <= 1e-6:
        raise ValueError("affine matrix is not invertible")
    inv = np.linalg.inv(lin)
    return np.hstack([inv, -inv @ m[:, 2:]])


def pixel_grid(h: int, w: int):
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return xs, ys


def check_rect(rect: Rect, size: Tuple[int, int]) -> None:
    h, w = size
    x, y, rw, rh = rect
    if rw <= 0 or rh <= 0:
        raise ValueError(f"degenerate crop rectangle {rect}")
    eps = 1e-9
    if x < -eps or y < -eps or x + rw > w + eps or y + rh > h + eps:
        raise ValueError(f"crop rectangle {rect} exceeds image bounds {w}x{h}")


def _crop_map(rect: Rect, size: Tuple[int, int]):
    # Output pixel p -> background coordinate offset + scale * p, per axis.
    h, w = size
    x, y, rw, rh = rect
    sx, sy = rw / w, rh / h
    return (x + 0.5 * sx - 0.5, sx), (y + 0.5 * sy - 0.5, sy)


def render_crop(background: np.ndarray, rect: Rect) -> np.ndarray:
    """Crop ``rect`` from ``background`` and bilinearly resize it back to full size."""
    h, w = background.shape[:2]
    check_rect(rect, (h, w))
    (ox, sx), (oy, sy) = _crop_map(rect, (h, w))
    xs, ys = pixel_grid(h, w)
    # Edge-replicate: sample positions are clamped into the image.
    fx = np.clip(ox + sx * xs, 0, w - 1) - xs
    fy = np.clip(oy + sy * ys, 0, h - 1) - ys
    out, _ = warp(background, np.stack([fx, fy], axis=-1))
    return out


def crop_flow(crop_1: Rect, crop_2: Rect, size: Tuple[int, int]) -> np.ndarray:
    """Backward flow mapping frame-2 pixels to their frame-1 positions."""
    h, w = size
    (ox1, sx1), (oy1, sy1) = _crop_map(crop_1, size)
    (ox2, sx2), (oy2, sy2) = _crop_map(crop_2, size)
    xs, ys = pixel_grid(h, w)
    u = (ox2 + sx2 * xs - ox1) / sx1 - xs
    v = (oy2 + sy2 * ys - oy1) / sy1 - ys
    return np.stack([u, v], axis=-1)


def simulate_background_motion(background: np.ndarray, crop_1: Rect, crop_2: Rect):
    """Return ``(frame_1, frame_2, flow_2_to_1)`` for two crops of one background."""
    size = background.shape[:2]
    check_rect(crop_1, size)
    check_rect(crop_2, size)
    return (render_crop(background, crop_1), render_crop(background, crop_2),
            crop_flow(crop_1, crop_2, size))


def sample_crop(rng: np.random.Generator, size: Tuple[int, int],
                scale_range: Tuple[float, float] = (0.9, 1.0)) -> Rect:
    h, w = size
    s = rng.uniform(*scale_range)
    cw, ch = w * s, h * s
    return (float(rng.uniform(0, w - cw)), float(rng.uniform(0, h - ch)), float(cw), float(ch))


def compose_affine(size: Tuple[int, int], tx: float, ty: float, rot_deg: float,
                   scale: float, shear_deg: float) -> np.ndarray:
    """Similarity-plus-shear about the image centre, followed by translation."""
    h, w = size
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    th = math.radians(rot_deg)
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    shear = np.array([[1.0, math.tan(math.radians(shear_deg))], [0.0, 1.0]])
    lin = rot @ shear * scale
    c = np.array([cx, cy])
    t = c + np.array([tx, ty]) - lin @ c
    return np.hstack([lin, t[:, None]])


def corner_displacement(matrix: np.ndarray, size: Tuple[int, int]) -> float:
    h, w = size
    corners = np.array([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]], dtype=float)
    moved = corners @ matrix[:, :2].T + matrix[:, 2]
    return float(np.max(np.hypot(*(moved - corners).T)))


def sample_affine(rng: np.random.Generator, image_size: Tuple[int, int],
                  ranges: AffineRanges = AffineRanges(),
                  crop_1: Optional[Rect] = None, crop_2: Optional[Rect] = None,
                  max_tries: int = 1000) -> AffineMotion:
    """Draw a small random foreground motion.

    Draws are rejected until no image corner moves more than
    ``ranges.max_corner_displacement * min(H, W)``.
    """
    h, w = image_size
    full = (0.0, 0.0, float(w), float(h))
    m = min(h, w)
    limit = ranges.max_corner_displacement * m
    for _ in range(max_tries):
        t_max = ranges.max_translation * m
        # Bound the translation vector's length, not each component.
        radius = t_max * math.sqrt(rng.uniform(0, 1))
        ang = rng.uniform(0, 2 * math.pi)
        params = dict(
            tx=radius * math.cos(ang), ty=radius * math.sin(ang),
            rot_deg=float(rng.uniform(-ranges.max_rotation_deg, ranges.max_rotation_deg)),
            scale=float(rng.uniform(*ranges.scale_range)),
            shear_deg=float(rng.uniform(-ranges.max_shear_deg, ranges.max_shear_deg)),
        )
        mat = compose_affine(image_size, **params)
        if corner_displacement(mat, image_size) <= limit + 1e-9:
            return AffineMotion(mat, crop_1 or full, crop_2 or full, params)
    raise RuntimeError("could not sample an affine motion within the corner-displacement bound")


def inverse_affine_flow(matrix: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Flow ``F(p) = A^-1(p) - p`` over the full grid."""
    inv = invert_affine(matrix)
    xs, ys = pixel_grid(*size)
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    return np.stack([sx - xs, sy - ys], axis=-1)


def affine_to_flow(motion: AffineMotion, mask_2: np.ndarray, bg_flow: np.ndarray,
                   mask_1: Optional[np.ndarray] = None):
    """Combine foreground affine motion and background flow into one backward flow.

    Returns ``(flow_2_to_1, valid_2)``. ``valid_2`` marks frame-2 foreground
    pixels whose source lies in bounds and, when ``mask_1`` is given, whose
    bilinear footprint lies entirely inside the frame-1 foreground.
    """
    mask_2 = np.asarray(mask_2) > 0.5
    size = mask_2.shape
    if bg_flow.shape != size + (2,):
        raise ValueError(f"bg_flow shape {bg_flow.shape} does not match mask {size}")
    fg_flow = inverse_affine_flow(motion.matrix, size)
    flow = np.where(mask_2[..., None], fg_flow, bg_flow)
    cover, inb = warp(np.ones(size) if mask_1 is None else np.asarray(mask_1, dtype=np.float64), fg_flow)
    valid = mask_2 & (inb > 0.5) & (cover > 1.0 - 1e-9)
    return flow, valid.astype(np.uint8)


def warp_foreground(image: np.ndarray, mask: np.ndarray, matrix: np.ndarray):
    """Move ``image`` and its binary ``mask`` by the affine ``matrix``."""
    fg_flow = inverse_affine_flow(matrix, mask.shape)
    moved, _ = warp(image, fg_flow)
    moved_mask, _ = warp(np.asarray(mask, dtype=np.float64), fg_flow)
    return moved, (moved_mask >= 0.5).astype(np.uint8)
