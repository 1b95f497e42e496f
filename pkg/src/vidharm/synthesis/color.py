"""Foreground color perturbations used to fabricate disharmonious composites."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy.interpolate import PchipInterpolator

MODES = ("reinhard_transfer", "parametric")

# Sampling ranges for the parametric mode.
EXPOSURE_EV = 0.7
HUE_DEG = 20.0
SATURATION = (0.6, 1.4)
TEMPERATURE = 0.15
CONTRAST = (0.7, 1.3)
TONE_JITTER = 0.15
TONE_KNOTS = (0.25, 0.5, 0.75)

IDENTITY_CURVE = ((0.0, 0.0), (1.0, 1.0))

_RGB2LMS = np.array([[0.3811, 0.5783, 0.0402],
                     [0.1967, 0.7244, 0.0782],
                     [0.0241, 0.1288, 0.8444]])
_LMS2RGB = np.linalg.inv(_RGB2LMS)
_LOG2LAB = np.diag([1 / np.sqrt(3), 1 / np.sqrt(6), 1 / np.sqrt(2)]) @ np.array(
    [[1, 1, 1], [1, 1, -2], [1, -1, 0]], dtype=float)
_LAB2LOG = np.linalg.inv(_LOG2LAB)
_LMS_FLOOR = 1e-6


@dataclass
class ColorAdjustment:
    mode: str = "parametric"
    reference_id: Optional[str] = None
    exposure_ev: float = 0.0
    hue_shift_deg: float = 0.0
    saturation_scale: float = 1.0
    temperature_shift: float = 0.0
    contrast_scale: float = 1.0
    tone_curve: tuple = IDENTITY_CURVE

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown color adjustment mode {self.mode!r}")
        pts = np.asarray(self.tone_curve, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("tone_curve must be a sequence of (x, y) points")
        if not (np.allclose(pts[0], (0, 0)) and np.allclose(pts[-1], (1, 1))):
            raise ValueError("tone_curve endpoints must be (0,0) and (1,1)")
        if np.any(np.diff(pts[:, 0]) <= 0) or np.any(np.diff(pts[:, 1]) < 0):
            raise ValueError("tone_curve must be strictly increasing in x, nondecreasing in y")
        self.tone_curve = tuple((float(x), float(y)) for x, y in pts)

    @classmethod
    def neutral(cls) -> "ColorAdjustment":
        return cls(mode="parametric")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tone_curve"] = [list(p) for p in self.tone_curve]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ColorAdjustment":
        d = dict(d)
        d["tone_curve"] = tuple(tuple(p) for p in d.get("tone_curve", IDENTITY_CURVE))
        return cls(**d)


def srgb_to_linear(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, None)
    return np.where(x <= 0.0031308, x * 12.92, 1.055 * x ** (1 / 2.4) - 0.055)


def rgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Decorrelated log-LMS (l, alpha, beta) space of Ruderman et al."""
    lms = np.maximum(rgb @ _RGB2LMS.T, _LMS_FLOOR)
    return np.log10(lms) @ _LOG2LAB.T


def lab_to_rgb(lab: np.ndarray) -> np.ndarray:
    lms = 10.0 ** (lab @ _LAB2LOG.T)
    return lms @ _LMS2RGB.T


def reinhard_transfer(src: np.ndarray, src_mask: np.ndarray,
                      ref: np.ndarray, ref_mask: np.ndarray):
    """Match per-channel lab mean/std of the ``src`` foreground to ``ref``'s.

    Returns the recolored full image (only foreground pixels change) and the
    list of lab channels that fell back to a pure mean shift because one of
    the two foregrounds had zero variance there.
    """
    src = np.asarray(src, dtype=np.float64)
    fg = np.asarray(src_mask) > 0.5
    rfg = np.asarray(ref_mask) > 0.5
    if not fg.any():
        return src.copy(), []
    if not rfg.any():
        raise ValueError("reference mask selects no pixels")
    src_lab = rgb_to_lab(src[fg])
    ref_lab = rgb_to_lab(np.asarray(ref, dtype=np.float64)[rfg])
    mu_s, sd_s = src_lab.mean(0), src_lab.std(0)
    mu_r, sd_r = ref_lab.mean(0), ref_lab.std(0)
    fallback = [c for c in range(3) if sd_s[c] < 1e-8 or sd_r[c] < 1e-8]
    scale = np.ones(3)
    for c in range(3):
        if c not in fallback:
            scale[c] = sd_r[c] / sd_s[c]
    out_lab = (src_lab - mu_s) * scale + mu_r
    out = src.copy()
    out[fg] = np.clip(lab_to_rgb(out_lab), 0.0, 1.0)
    return out, fallback


def apply_tone_curve(x: np.ndarray, curve) -> np.ndarray:
    pts = np.asarray(curve, dtype=float)
    if len(pts) == 2:
        return np.clip(x, 0.0, 1.0)
    return np.clip(PchipInterpolator(pts[:, 0], pts[:, 1])(np.clip(x, 0.0, 1.0)), 0.0, 1.0)


def parametric_adjust(rgb: np.ndarray, adj: ColorAdjustment) -> np.ndarray:
    """Apply exposure, temperature, contrast, hue, saturation and tone curve to ``(N, 3)`` pixels."""
    x = np.asarray(rgb, dtype=np.float64)
    if adj.exposure_ev != 0.0:
        x = linear_to_srgb(srgb_to_linear(x) * 2.0 ** adj.exposure_ev)
    if adj.temperature_shift != 0.0:
        x = x + np.array([adj.temperature_shift, 0.0, -adj.temperature_shift])
    if adj.contrast_scale != 1.0:
        x = (x - 0.5) * adj.contrast_scale + 0.5
    x = np.clip(x, 0.0, 1.0)
    if adj.hue_shift_deg != 0.0 or adj.saturation_scale != 1.0:
        hsv = rgb_to_hsv(x)
        hsv[..., 0] = (hsv[..., 0] + adj.hue_shift_deg / 360.0) % 1.0
        hsv[..., 1] = np.clip(hsv[..., 1] * adj.saturation_scale, 0.0, 1.0)
        x = hsv_to_rgb(hsv)
    return apply_tone_curve(x, adj.tone_curve)


def adjust_foreground_color(fg: np.ndarray, mask: np.ndarray, adj: ColorAdjustment,
                            ref: Optional[np.ndarray] = None,
                            ref_mask: Optional[np.ndarray] = None,
                            info: Optional[dict] = None) -> np.ndarray:
    """Recolor the masked region of ``fg``; background pixels are returned untouched.

    For ``reinhard_transfer`` the reference foreground is ``ref`` restricted to
    ``ref_mask`` (defaults to ``mask``). If ``info`` is given, the channels that
    degraded to a mean shift are recorded under ``"mean_shift_only_channels"``.
    """
    fg = np.asarray(fg, dtype=np.float64)
    sel = np.asarray(mask) > 0.5
    if adj.mode == "reinhard_transfer":
        if ref is None:
            raise ValueError("reinhard_transfer requires a reference frame")
        out, fallback = reinhard_transfer(fg, sel, ref, sel if ref_mask is None else ref_mask)
        if info is not None:
            info["mean_shift_only_channels"] = fallback
        return out
    out = fg.copy()
    if sel.any():
        out[sel] = parametric_adjust(fg[sel], adj)
    if info is not None:
        info["mean_shift_only_channels"] = []
    return out


def sample_tone_curve(rng: np.random.Generator, jitter: float = TONE_JITTER):
    ys = np.array(TONE_KNOTS) + rng.uniform(-jitter, jitter, size=len(TONE_KNOTS))
    ys = np.maximum.accumulate(np.clip(ys, 0.0, 1.0))
    return ((0.0, 0.0),) + tuple(zip(TONE_KNOTS, ys.tolist())) + ((1.0, 1.0),)


def sample_adjustment(rng: np.random.Generator) -> ColorAdjustment:
    """Draw a random adjustment; every parameter is drawn regardless of mode
    so the random stream does not depend on the mode outcome."""
    mode = MODES[int(rng.integers(2))]
    return ColorAdjustment(
        mode=mode,
        exposure_ev=float(rng.uniform(-EXPOSURE_EV, EXPOSURE_EV)),
        hue_shift_deg=float(rng.uniform(-HUE_DEG, HUE_DEG)),
        saturation_scale=float(rng.uniform(*SATURATION)),
        temperature_shift=float(rng.uniform(-TEMPERATURE, TEMPERATURE)),
        contrast_scale=float(rng.uniform(*CONTRAST)),
        tone_curve=sample_tone_curve(rng),
    )
