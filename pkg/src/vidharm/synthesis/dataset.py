"""Paired two-frame sample synthesis and the on-disk dataset layout.

Layout written by :func:`build_dataset`::

    <root>/manifest.json
    <root>/{train,val,test}/<id>/{gt_1,gt_2,comp_1,comp_2,mask_1,mask_2,valid_2}.png
    <root>/{train,val,test}/<id>/flow_2to1.flo
    <root>/{train,val,test}/<id>/meta.json
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

from ..flow import read_flow, write_flow
from .color import ColorAdjustment, adjust_foreground_color, sample_adjustment
from .inpaint import inpaint_background
from .motion import (AffineMotion, AffineRanges, affine_to_flow, sample_affine,
                     sample_crop, simulate_background_motion, warp_foreground)

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
MANIFEST_VERSION = 1
# Paper-scale split sizes.
FULL_SCALE_SPLITS = {"train": 29818, "val": 1000, "test": 2520}


class DatasetError(ValueError):
    """Malformed corpus, manifest or sample directory."""


@dataclass
class SourceItem:
    image: np.ndarray
    mask: np.ndarray
    id: str
    foreground_area_fraction: Optional[float] = None

    def __post_init__(self):
        if self.image.shape[:2] != self.mask.shape:
            raise DatasetError(f"{self.id}: image {self.image.shape} and mask {self.mask.shape} differ")
        frac = float(np.asarray(self.mask, dtype=np.float64).mean())
        if self.foreground_area_fraction is None:
            self.foreground_area_fraction = frac

    def validate(self) -> None:
        if not np.isin(self.mask, (0, 1)).all():
            raise DatasetError(f"{self.id}: mask is not binary")


@dataclass
class SamplePair:
    gt_1: np.ndarray
    gt_2: np.ndarray
    comp_1: np.ndarray
    comp_2: np.ndarray
    mask_1: np.ndarray
    mask_2: np.ndarray
    flow_2_to_1: np.ndarray
    valid_2: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def id(self) -> str:
        return self.meta.get("id", self.meta.get("source_id", ""))


@dataclass
class SynthConfig:
    out_dir: str = "dataset"
    source_dir: Optional[str] = None
    toy_sources: int = 0
    toy_size: int = 128
    seed: int = 0
    splits: dict = field(default_factory=lambda: {"train": 8, "val": 1, "test": 1})
    min_area: float = 0.10
    inpaint_method: str = "exemplar"
    patch_size: int = 9
    crop_scale_range: Tuple[float, float] = (0.9, 1.0)
    vary_first_crop: bool = False
    affine: AffineRanges = field(default_factory=AffineRanges)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "affine" in d and isinstance(d["affine"], dict):
            a = dict(d["affine"])
            if "scale_range" in a:
                a["scale_range"] = tuple(a["scale_range"])
            d["affine"] = AffineRanges(**a)
        if "crop_scale_range" in d:
            d["crop_scale_range"] = tuple(d["crop_scale_range"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise KeyError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)


def select_sources(manifest: Sequence[SourceItem], min_area: float) -> List[SourceItem]:
    """Keep sources whose foreground covers at least ``min_area`` of the frame."""
    if not manifest:
        raise ValueError("empty source manifest")
    if not 0 <= min_area < 1:
        raise ValueError(f"min_area must lie in [0, 1), got {min_area}")
    for item in manifest:
        item.validate()
    return [item for item in manifest if item.foreground_area_fraction >= min_area]


def _pick_reference(src: SourceItem, pool: Sequence[SourceItem], rng) -> SourceItem:
    others = [p for p in pool if p.id != src.id]
    if not others:
        return src
    return others[int(rng.integers(len(others)))]


def _paste(fg: np.ndarray, bg: np.ndarray, mask: np.ndarray) -> np.ndarray:
    m = (np.asarray(mask) > 0)[..., None]
    return np.where(m, fg, bg)


def synthesize_sample(src: SourceItem, ref_pool: Sequence[SourceItem], rng: np.random.Generator,
                      config: Optional[SynthConfig] = None, *,
                      adjustment: Optional[ColorAdjustment] = None,
                      motion: Optional[AffineMotion] = None,
                      background: Optional[np.ndarray] = None) -> SamplePair:
    """Turn one masked image into a two-frame ground-truth/composite pair.

    ``adjustment`` and ``motion`` override the random draws; ``background``
    skips inpainting with a precomputed clean plate.
    """
    cfg = config or SynthConfig()
    image = np.asarray(src.image, dtype=np.float64)
    mask_1 = (np.asarray(src.mask) > 0).astype(np.uint8)
    size = mask_1.shape

    if background is None:
        background = inpaint_background(image, mask_1, cfg.inpaint_method, cfg.patch_size)

    full = (0.0, 0.0, float(size[1]), float(size[0]))
    # Draw order is fixed so overriding one component leaves the others' draws intact.
    crop_1 = sample_crop(rng, size, cfg.crop_scale_range) if cfg.vary_first_crop else full
    crop_2 = sample_crop(rng, size, cfg.crop_scale_range)
    drawn_adj = sample_adjustment(rng)
    drawn_motion = sample_affine(rng, size, cfg.affine, crop_1, crop_2)
    ref_choice = _pick_reference(src, ref_pool, rng)

    adj = adjustment if adjustment is not None else drawn_adj
    if motion is None:
        motion = drawn_motion
    crop_1, crop_2 = motion.crop_rect_1, motion.crop_rect_2

    ref = None
    if adj.mode == "reinhard_transfer":
        ref = ref_choice
        if adj.reference_id is None:
            adj = ColorAdjustment.from_dict({**adj.to_dict(), "reference_id": ref.id})
        else:
            match = [p for p in ref_pool if p.id == adj.reference_id]
            ref = match[0] if match else ref
    info: dict = {}
    recolored = adjust_foreground_color(image, mask_1, adj,
                                        None if ref is None else ref.image,
                                        None if ref is None else ref.mask, info)

    bg_1, bg_2, bg_flow = simulate_background_motion(background, crop_1, crop_2)
    fg_2, mask_2 = warp_foreground(image, mask_1, motion.matrix)
    cfg_2, _ = warp_foreground(recolored, mask_1, motion.matrix)

    flow, valid_2 = affine_to_flow(motion, mask_2, bg_flow, mask_1)
    meta = {
        "id": src.id,
        "source_id": src.id,
        "color": adj.to_dict(),
        "color_info": info,
        "motion": motion.to_dict(),
    }
    return SamplePair(
        gt_1=np.clip(_paste(image, bg_1, mask_1), 0, 1),
        gt_2=np.clip(_paste(fg_2, bg_2, mask_2), 0, 1),
        comp_1=np.clip(_paste(recolored, bg_1, mask_1), 0, 1),
        comp_2=np.clip(_paste(cfg_2, bg_2, mask_2), 0, 1),
        mask_1=mask_1,
        mask_2=mask_2,
        flow_2_to_1=flow.astype(np.float32),
        valid_2=valid_2,
        meta=meta,
    )


# --------------------------------------------------------------------------- I/O

def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, img: np.ndarray) -> None:
    arr = img if img.dtype == np.uint8 else to_uint8(img)
    Image.fromarray(arr).save(path, format="PNG", optimize=False)


def read_png(path) -> np.ndarray:
    """Read an 8-bit PNG into float32 [0, 1]; RGBA is reduced to RGB."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return np.asarray(im, dtype=np.float32) / 255.0


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    if not np.isin(arr, (0, 255)).all() and not np.isin(arr, (0, 1)).all():
        raise DatasetError(f"{path}: mask is not binary")
    return (arr > 0).astype(np.uint8)


def save_sample(directory, pair: SamplePair) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in ("gt_1", "gt_2", "comp_1", "comp_2"):
        write_png(d / f"{name}.png", getattr(pair, name))
    for name in ("mask_1", "mask_2", "valid_2"):
        write_png(d / f"{name}.png", (np.asarray(getattr(pair, name)) > 0).astype(np.uint8) * 255)
    write_flow(d / "flow_2to1.flo", pair.flow_2_to_1)
    (d / "meta.json").write_text(json.dumps(pair.meta, indent=2, sort_keys=True) + "\n")


def load_sample(directory) -> SamplePair:
    d = Path(directory)
    if not d.is_dir():
        raise DatasetError(f"missing sample directory {d}")
    try:
        return SamplePair(
            gt_1=read_png(d / "gt_1.png"), gt_2=read_png(d / "gt_2.png"),
            comp_1=read_png(d / "comp_1.png"), comp_2=read_png(d / "comp_2.png"),
            mask_1=read_mask(d / "mask_1.png"), mask_2=read_mask(d / "mask_2.png"),
            flow_2_to_1=read_flow(d / "flow_2to1.flo"), valid_2=read_mask(d / "valid_2.png"),
            meta=json.loads((d / "meta.json").read_text()),
        )
    except FileNotFoundError as e:
        raise DatasetError(f"incomplete sample directory {d}: {e.filename}") from e


def load_corpus(source_dir) -> List[SourceItem]:
    """Load ``index.csv`` (columns ``id,image,mask``) or ``index.json`` from ``source_dir``."""
    root = Path(source_dir)
    if (root / "index.csv").exists():
        with open(root / "index.csv", newline="") as f:
            rows = list(csv.DictReader(f))
    elif (root / "index.json").exists():
        rows = json.loads((root / "index.json").read_text())
    else:
        raise DatasetError(f"{root}: no index.csv or index.json")
    items = []
    for row in rows:
        try:
            img = read_png(root / row["image"])
            mask = read_mask(root / row["mask"])
        except KeyError as e:
            raise DatasetError(f"index row missing column {e}") from e
        except FileNotFoundError as e:
            raise DatasetError(f"missing corpus file {e.filename}") from e
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=2)
        items.append(SourceItem(img.astype(np.float64), mask, str(row["id"])))
    return items


def _smooth_field(rng, size, channels, cells, amplitude):
    h, w = size
    coarse = rng.uniform(-amplitude, amplitude, size=(cells, cells, channels))
    zoom = (h / cells, w / cells, 1)
    return ndimage.zoom(coarse, zoom, order=3, mode="nearest")[:h, :w]


def toy_source(rng: np.random.Generator, size: int = 128, id: str = "toy") -> SourceItem:
    """Procedural stand-in for a masked photograph: a lit scene with a figure-like blob.

    Background and figure share an illuminant tint so harmonious colors are
    predictable from context.
    """
    h = w = size
    light = rng.uniform(0.55, 1.0, size=3)
    bg_albedo = rng.uniform(0.2, 0.9, size=3) + _smooth_field(rng, (h, w), 3, 4, 0.25)
    bg_albedo += _smooth_field(rng, (h, w), 1, 12, 0.06)
    fg_albedo = rng.uniform(0.2, 0.9, size=3) + _smooth_field(rng, (h, w), 3, 3, 0.15)
    ys, xs = np.mgrid[0:h, 0:w] / size
    freq = rng.uniform(6, 14)
    fg_albedo += 0.06 * np.sin(2 * np.pi * freq * (xs * np.cos(freq) + ys * np.sin(freq)))[..., None]

    cx, cy = rng.uniform(0.35, 0.65), rng.uniform(0.45, 0.6)
    bw, bh = rng.uniform(0.14, 0.22), rng.uniform(0.25, 0.33)
    body = ((xs - cx) / bw) ** 2 + ((ys - cy) / bh) ** 2 <= 1
    hr = rng.uniform(0.07, 0.1)
    head = (xs - cx) ** 2 + (ys - (cy - bh - hr * 0.8)) ** 2 <= hr ** 2
    mask = (body | head).astype(np.uint8)

    albedo = np.where(mask[..., None] > 0, fg_albedo, bg_albedo)
    image = np.clip(albedo * light, 0.0, 1.0)
    return SourceItem(image, mask, id)


def make_toy_corpus(n: int, size: int = 128, seed: int = 0, out_dir=None) -> List[SourceItem]:
    """Generate ``n`` procedural sources; optionally write them as an indexed corpus."""
    items = [toy_source(np.random.default_rng([seed, i]), size, f"toy{i:05d}") for i in range(n)]
    if out_dir is not None:
        root = Path(out_dir)
        (root / "images").mkdir(parents=True, exist_ok=True)
        (root / "masks").mkdir(parents=True, exist_ok=True)
        with open(root / "index.csv", "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["id", "image", "mask"])
            for it in items:
                write_png(root / "images" / f"{it.id}.png", it.image)
                write_png(root / "masks" / f"{it.id}.png", it.mask * 255)
                wr.writerow([it.id, f"images/{it.id}.png", f"masks/{it.id}.png"])
    return items


def assign_splits(ids: Sequence[str], splits: dict, seed: int) -> List[Tuple[str, str]]:
    total = sum(splits.get(s, 0) for s in SPLITS)
    if total > len(ids):
        raise DatasetError(f"split sizes sum to {total} but only {len(ids)} sources are eligible")
    order = np.random.default_rng([seed, 7919]).permutation(len(ids))
    out, k = [], 0
    for s in SPLITS:
        for _ in range(splits.get(s, 0)):
            out.append((ids[order[k]], s))
            k += 1
    return out


def cached_background(src: SourceItem, config: SynthConfig, cache_dir=None) -> np.ndarray:
    """Inpainted clean plate, memoized on disk under ``cache_dir`` when given."""
    if cache_dir is None:
        return inpaint_background(src.image, src.mask, config.inpaint_method, config.patch_size)
    key = hashlib.sha1()
    key.update(np.ascontiguousarray(src.image, dtype=np.float64).tobytes())
    key.update(np.ascontiguousarray(src.mask, dtype=np.uint8).tobytes())
    key.update(f"{src.image.shape}|{config.inpaint_method}|{config.patch_size}".encode())
    path = Path(cache_dir) / "backgrounds" / f"{key.hexdigest()}.npy"
    if path.exists():
        return np.load(path)
    bg = inpaint_background(src.image, src.mask, config.inpaint_method, config.patch_size)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npy")
    np.save(tmp, bg)
    os.replace(tmp, path)
    return bg


def build_dataset(config: SynthConfig, sources: Optional[Sequence[SourceItem]] = None,
                  cache_dir=None) -> dict:
    """Synthesize every split and write the dataset plus ``manifest.json``.

    Each sample uses its own generator seeded by ``(seed, source index)`` so
    samples are independent of one another and of processing order.
    """
    if sources is None:
        if config.source_dir:
            sources = load_corpus(config.source_dir)
        elif config.toy_sources:
            sources = make_toy_corpus(config.toy_sources, config.toy_size, config.seed)
        else:
            raise DatasetError("no source corpus configured")
    ids = [s.id for s in sources]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise DatasetError(f"duplicate source ids: {dupes[:5]}")
    eligible = select_sources(list(sources), config.min_area)
    if len(eligible) < len(sources):
        log.info("kept %d of %d sources with foreground >= %.0f%%",
                 len(eligible), len(sources), 100 * config.min_area)
    by_id = {s.id: (i, s) for i, s in enumerate(sources)}
    plan = assign_splits([s.id for s in eligible], config.splits, config.seed)

    root = Path(config.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for sid, split in plan:
        idx, src = by_id[sid]
        rng = np.random.default_rng([config.seed, idx])
        bg = cached_background(src, config, cache_dir)
        pair = synthesize_sample(src, eligible, rng, config, background=bg)
        rel = f"{split}/{sid}"
        save_sample(root / rel, pair)
        entries.append({"id": sid, "split": split, "path": rel})

    cfg_dict = {k: v for k, v in vars(config).items() if k not in ("out_dir", "source_dir")}
    cfg_dict["affine"] = vars(config.affine)
    manifest = {
        "version": MANIFEST_VERSION,
        "seed": config.seed,
        "config": json.loads(json.dumps(cfg_dict, default=list)),
        "counts": {s: sum(e["split"] == s for e in entries) for s in SPLITS},
        "samples": entries,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise DatasetError(f"no manifest.json under {root}")
    manifest = json.loads(path.read_text())
    manifest["root"] = str(Path(root))
    return manifest


def split_entries(manifest: dict, split: str) -> List[dict]:
    if split not in SPLITS:
        raise DatasetError(f"unknown split {split!r}")
    entries = [e for e in manifest["samples"] if e["split"] == split]
    if not entries:
        raise DatasetError(f"split {split!r} is empty")
    return entries


def sample_dir(manifest: dict, entry: dict) -> Path:
    return Path(manifest["root"]) / entry["path"]
