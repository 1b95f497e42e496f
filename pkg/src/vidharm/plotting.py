"""Report figures written next to the JSON/text outputs."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Dict, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({"figure.dpi": 100, "font.size": 9, "axes.spines.top": False,
                     "axes.spines.right": False})


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # Fixed metadata keeps repeated runs byte-identical.
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_eval_reports(reports: Sequence, path) -> Path:
    """Bar panels for PSNR, MSE, L_T1 (and L_T2 when present), one bar per report."""
    metrics = [("psnr", "PSNR (dB)"), ("mse", "MSE"), ("lt1", "L_T1")]
    if any(r.lt2 is not None for r in reports):
        metrics.append(("lt2", "L_T2"))
    fig, axes = plt.subplots(1, len(metrics), figsize=(3 * len(metrics), 3))
    labels = [r.label or f"run{i}" for i, r in enumerate(reports)]
    for ax, (key, title) in zip(np.atleast_1d(axes), metrics):
        vals = [getattr(r, key) for r in reports]
        vals = [v if v is not None and math.isfinite(v) else np.nan for v in vals]
        ax.bar(range(len(vals)), vals, color="0.4")
        ax.set_xticks(range(len(vals)))
        ax.set_xticklabels(labels, rotation=30, ha="right")
        ax.set_title(title)
    return _save(fig, path)


def plot_per_sample(reports: Sequence, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3))
    for r in reports:
        vals = [row["psnr"] for row in r.per_sample]
        vals = [v if isinstance(v, float) and math.isfinite(v) else np.nan for v in vals]
        ax.plot(range(len(vals)), vals, marker="o", ms=3, lw=1, label=r.label or "model")
    ax.set_xlabel("sample")
    ax.set_ylabel("PSNR (dB)")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_training_curves(history: Sequence[dict], path) -> Path:
    steps = [h for h in history if "reconstruction" in h]
    vals = [h for h in history if "val_psnr" in h]
    fig, axes = plt.subplots(1, 2, figsize=(8, 3))
    if steps:
        x = [h["step"] for h in steps]
        for key in ("reconstruction", "regional_temporal", "adversarial_g", "d_total"):
            axes[0].plot(x, [h[key] for h in steps], lw=0.8, label=key)
        axes[0].set_yscale("log")
        axes[0].set_xlabel("step")
        axes[0].legend(frameon=False, fontsize=7)
    if vals:
        axes[1].plot([h["step"] for h in vals], [h["val_psnr"] for h in vals], marker="o", ms=3)
        axes[1].set_xlabel("step")
        axes[1].set_ylabel("val PSNR (dB)")
    return _save(fig, path)


def plot_rank_scores(scores: Dict[str, float], path, title: str = "Plackett-Luce score") -> Path:
    names = list(scores)
    vals = [scores[n] if math.isfinite(scores[n]) else np.nan for n in names]
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.barh(range(len(names)), vals, color="0.4")
    ax.set_yticks(range(len(names)))
    ax.set_yticklabels(names)
    ax.axvline(0, color="k", lw=0.6)
    ax.set_title(title)
    return _save(fig, path)


def plot_disharmony_maps(frames: Sequence[np.ndarray], maps: Sequence[np.ndarray],
                         masks: Sequence[np.ndarray], path) -> Path:
    """Rows: input frame, predicted disharmony map, ground-truth mask."""
    n = len(frames)
    fig, axes = plt.subplots(3, n, figsize=(1.6 * n, 5), squeeze=False)
    for j in range(n):
        for i, (img, cmap) in enumerate(((frames[j], None), (maps[j], "gray"), (masks[j], "gray"))):
            axes[i, j].imshow(img, cmap=cmap, vmin=0, vmax=1)
            axes[i, j].axis("off")
    return _save(fig, path)
