"""Conversion of stored sample pairs into model-ready tensors."""
from __future__ import annotations

from typing import Dict, List

import cv2
import numpy as np
import torch

from .synthesis.dataset import (SamplePair, load_sample, sample_dir, split_entries)

FRAME_KEYS = ("gt_1", "gt_2", "comp_1", "comp_2")
MASK_KEYS = ("mask_1", "mask_2", "valid_2")


def to_model_range(x):
    """[0, 1] -> [-1, 1]."""
    return x * 2.0 - 1.0


def to_unit_range(x):
    """[-1, 1] -> [0, 1]."""
    return (x + 1.0) / 2.0


def resize_frame(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    if (h, w) == (size, size):
        return img
    return cv2.resize(np.asarray(img, np.float32), (size, size), interpolation=cv2.INTER_LINEAR)


def resize_mask(mask: np.ndarray, size: int) -> np.ndarray:
    h, w = mask.shape[:2]
    if (h, w) == (size, size):
        return mask
    return cv2.resize(np.asarray(mask, np.uint8), (size, size), interpolation=cv2.INTER_NEAREST)


def resize_flow(flow: np.ndarray, size: int) -> np.ndarray:
    """Resample a flow field and rescale its displacements to the new pixel grid."""
    h, w = flow.shape[:2]
    if (h, w) == (size, size):
        return flow
    out = cv2.resize(np.asarray(flow, np.float32), (size, size), interpolation=cv2.INTER_LINEAR)
    out[..., 0] *= size / w
    out[..., 1] *= size / h
    return out


def _chw(a: np.ndarray) -> torch.Tensor:
    a = np.asarray(a, dtype=np.float32)
    if a.ndim == 2:
        a = a[..., None]
    return torch.from_numpy(np.ascontiguousarray(a.transpose(2, 0, 1)))[None]


def preprocess(sample: SamplePair, resolution: int) -> Dict[str, torch.Tensor]:
    """Resize to ``resolution`` and map frames to [-1, 1]; every tensor gets a batch axis."""
    out = {}
    for k in FRAME_KEYS:
        out[k] = to_model_range(_chw(resize_frame(getattr(sample, k), resolution)))
    for k in MASK_KEYS:
        out[k] = _chw((resize_mask(getattr(sample, k), resolution) > 0).astype(np.float32))
    out["flow"] = _chw(resize_flow(sample.flow_2_to_1, resolution))
    return out


def collate(items: List[Dict[str, torch.Tensor]]) -> Dict[str, torch.Tensor]:
    return {k: torch.cat([it[k] for it in items], dim=0) for k in items[0]}


class SampleStore:
    """Lazily loaded, preprocessed samples of one split, cached in memory."""

    def __init__(self, manifest: dict, split: str, resolution: int, cache: bool = True):
        self.manifest = manifest
        self.entries = split_entries(manifest, split)
        self.resolution = resolution
        self.cache = cache
        self._cache: Dict[int, Dict[str, torch.Tensor]] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> List[str]:
        return [e["id"] for e in self.entries]

    def raw(self, i: int) -> SamplePair:
        return load_sample(sample_dir(self.manifest, self.entries[i]))

    def __getitem__(self, i: int) -> Dict[str, torch.Tensor]:
        if i in self._cache:
            return self._cache[i]
        item = preprocess(self.raw(i), self.resolution)
        if self.cache:
            self._cache[i] = item
        return item

    def batch(self, indices) -> Dict[str, torch.Tensor]:
        return collate([self[int(i)] for i in indices])
