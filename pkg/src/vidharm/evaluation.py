"""Quality and temporal-consistency metrics, mask-free inference, and rank aggregation."""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from .data import SampleStore, resize_flow, to_unit_range
from .flow import read_flow, warp
from .losses import regional_temporal_loss
from .networks import ModelBundle, discriminate, generate

log = logging.getLogger(__name__)

INF_PSNR = math.inf


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr_from_mse(err: float, peak: float = 1.0) -> float:
    if err <= 0:
        return INF_PSNR
    return 10.0 * math.log10(peak ** 2 / err)


def psnr(a, b) -> float:
    """PSNR in dB for [0, 1] images; identical inputs give ``math.inf``."""
    return psnr_from_mse(mse(a, b))


def temporal_error(outputs: Sequence[torch.Tensor], masks: Sequence[torch.Tensor],
                   flows: Sequence[torch.Tensor], valids: Optional[Sequence[torch.Tensor]] = None) -> float:
    """Mean regional temporal loss over consecutive frame pairs.

    ``flows[t]`` warps ``outputs[t]`` onto ``outputs[t + 1]``; ``masks`` and
    ``valids`` are indexed like ``outputs``, so pair ``t`` uses entry ``t + 1``.
    """
    n = len(outputs)
    if n < 2:
        raise ValueError("need at least two frames")
    if len(masks) != n or len(flows) != n - 1 or (valids is not None and len(valids) != n):
        raise ValueError("outputs, masks, flows and valids have inconsistent lengths")
    total = 0.0
    with torch.no_grad():
        for t in range(n - 1):
            warped, inb = warp(outputs[t], flows[t])
            valid = inb if valids is None else valids[t + 1] * inb
            total += float(regional_temporal_loss(outputs[t + 1], warped, masks[t + 1], valid))
    return total / (n - 1)


def predict_mask(disc, frame: torch.Tensor) -> torch.Tensor:
    """Discriminator scores clamped to [0, 1], usable directly as a soft mask."""
    with torch.no_grad():
        return discriminate(disc, frame).clamp(0.0, 1.0)


def harmonize_without_mask(gen, disc, frame: torch.Tensor) -> torch.Tensor:
    with torch.no_grad():
        return generate(gen, frame, predict_mask(disc, frame))


def mask_iou(pred, target, threshold: float = 0.5) -> float:
    p = np.asarray(pred) >= threshold
    t = np.asarray(target) >= 0.5
    union = np.logical_or(p, t).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, t).sum() / union)


# --------------------------------------------------------------------------- reports

@dataclass
class EvalReport:
    psnr: float
    mse: float
    lt1: float
    lt2: Optional[float] = None
    n: int = 0
    label: str = ""
    per_sample: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("psnr", "mse", "lt1", "lt2"):
            if isinstance(d[k], float) and not math.isfinite(d[k]):
                d[k] = str(d[k])
        for row in d["per_sample"]:
            for k, v in row.items():
                if isinstance(v, float) and not math.isfinite(v):
                    row[k] = str(v)
        return d


def _fmt(v, spec):
    if v is None:
        return "-"
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return format(v, spec)


def format_table(reports: Sequence[EvalReport]) -> str:
    """Fixed-width text table with columns Method, PSNR, MSE, L_T1, L_T2."""
    head = f"{'Method':<20}{'PSNR':>10}{'MSE':>10}{'L_T1':>10}{'L_T2':>10}"
    lines = [head, "-" * len(head)]
    for r in reports:
        lines.append(f"{(r.label or 'model'):<20}{_fmt(r.psnr, '.2f'):>10}{_fmt(r.mse, '.4f'):>10}"
                     f"{_fmt(r.lt1, '.4f'):>10}{_fmt(r.lt2, '.4f'):>10}")
    return "\n".join(lines) + "\n"


def _external_flow(flows_dir: Path, sample_id: str, split: Optional[str]) -> np.ndarray:
    candidates = [flows_dir / f"{sample_id}.flo", flows_dir / sample_id / "flow_2to1.flo"]
    if split:
        candidates.insert(0, flows_dir / split / sample_id / "flow_2to1.flo")
    for c in candidates:
        if c.exists():
            return read_flow(c)
    raise FileNotFoundError(f"no external flow for sample {sample_id} under {flows_dir}")


def evaluate_store(bundle: Optional[ModelBundle], store: SampleStore, flows_dir=None,
                   mask_free: bool = False, label: str = "", split: Optional[str] = None) -> EvalReport:
    """Evaluate a model (or the cut-and-paste identity when ``bundle`` is None).

    Metrics are computed in [0, 1] units at the store's resolution. L_T1 uses
    the dataset flow and validity mask; L_T2 uses external flow files and the
    warp in-bounds mask only.
    """
    rows = []
    frame_mses = []
    lt1s, lt2s = [], []
    if bundle is not None:
        bundle.generator.eval()
        bundle.discriminator.eval()
    ids = store.ids()
    with torch.no_grad():
        for i in range(len(store)):
            s = store[i]
            comps = torch.cat([s["comp_1"], s["comp_2"]])
            masks = torch.cat([s["mask_1"], s["mask_2"]])
            if bundle is None:
                outs = comps
            elif mask_free:
                outs = harmonize_without_mask(bundle.generator, bundle.discriminator, comps)
            else:
                outs = generate(bundle.generator, comps, masks)
            outs_u = to_unit_range(outs).clamp(0, 1)
            gts_u = to_unit_range(torch.cat([s["gt_1"], s["gt_2"]]))
            m = [mse(outs_u[k].numpy(), gts_u[k].numpy()) for k in range(2)]
            frame_mses.extend(m)
            o1, o2 = outs_u[:1], outs_u[1:]
            lt1 = temporal_error([o1, o2], [s["mask_1"], s["mask_2"]], [s["flow"]],
                                 [s["valid_2"], s["valid_2"]])
            row = {"id": ids[i], "mse": float(np.mean(m)), "psnr": psnr_from_mse(float(np.mean(m))),
                   "lt1": lt1}
            lt1s.append(lt1)
            if flows_dir is not None:
                ext = resize_flow(_external_flow(Path(flows_dir), ids[i], split), store.resolution)
                ext_t = torch.from_numpy(np.ascontiguousarray(ext.transpose(2, 0, 1)))[None]
                row["lt2"] = temporal_error([o1, o2], [s["mask_1"], s["mask_2"]], [ext_t])
                lt2s.append(row["lt2"])
            rows.append(row)
    agg = float(np.mean(frame_mses))
    return EvalReport(psnr=psnr_from_mse(agg), mse=agg, lt1=float(np.mean(lt1s)),
                      lt2=float(np.mean(lt2s)) if lt2s else None, n=len(rows),
                      label=label, per_sample=rows)


def evaluate_split(bundle: Optional[ModelBundle], manifest: dict, split: str, resolution: int,
                   flows_dir=None, mask_free: bool = False, out_dir=None, label: str = "") -> EvalReport:
    """Evaluate one split; with ``out_dir`` also write JSON, a text table and figures."""
    store = SampleStore(manifest, split, resolution, cache=False)
    report = evaluate_store(bundle, store, flows_dir, mask_free,
                            label or ("cut-and-paste" if bundle is None else "model"), split)
    if out_dir is not None:
        write_report([report], out_dir)
    return report


def write_report(reports: Sequence[EvalReport], out_dir, stem: str = "report") -> Dict[str, Path]:
    from .plotting import plot_eval_reports, plot_per_sample

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": out / f"{stem}.json", "table": out / f"{stem}.txt",
             "summary_png": out / f"{stem}_summary.png", "per_sample_png": out / f"{stem}_per_sample.png"}
    paths["json"].write_text(json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n")
    paths["table"].write_text(format_table(reports))
    plot_eval_reports(reports, paths["summary_png"])
    plot_per_sample(reports, paths["per_sample_png"])
    return paths


# --------------------------------------------------------------------------- Plackett-Luce

def read_ballots(path) -> List[List[str]]:
    """One ballot per CSV row, best first. A header row starting with ``rank`` is skipped."""
    ballots = []
    with open(path, newline="") as f:
        for i, row in enumerate(csv.reader(f)):
            row = [c.strip() for c in row if c.strip()]
            if not row:
                continue
            if i == 0 and row[0].lower().startswith("rank"):
                continue
            ballots.append(row)
    return ballots


def _validate_ballots(ballots: Sequence[Sequence[str]]) -> List[str]:
    if not ballots:
        raise ValueError("need at least one ballot")
    methods = sorted(set(ballots[0]))
    for b in ballots:
        if len(set(b)) != len(b):
            raise ValueError(f"ballot {b} repeats a method")
        if sorted(b) != methods:
            raise ValueError(f"ballot {b} does not rank exactly the methods {methods}")
    if len(methods) < 2:
        raise ValueError("need at least two methods")
    return methods


def pl_log_likelihood(worth: np.ndarray, rankings: np.ndarray) -> float:
    """Log-likelihood of full rankings (rows of item indices, best first)."""
    ll = 0.0
    for r in rankings:
        w = worth[r]
        tails = np.cumsum(w[::-1])[::-1]
        for j in range(len(r) - 1):
            ll += math.log(w[j]) - math.log(tails[j]) if w[j] > 0 else -math.inf
    return ll


@dataclass
class PLResult:
    scores: Dict[str, float]
    worth: Dict[str, float]
    iterations: int
    converged: bool
    log_likelihoods: List[float]


def plackett_luce(ballots: Sequence[Sequence[str]], tol: float = 1e-8, max_iter: int = 10000,
                  check_monotone: bool = True) -> PLResult:
    """Maximum-likelihood Plackett-Luce worths via minorize-maximize updates.

    Scores are log-worths centred to mean 0 over the methods with nonzero
    worth; a method that is never preferred to anything gets ``-inf``.
    """
    methods = _validate_ballots(ballots)
    index = {m: i for i, m in enumerate(methods)}
    rankings = np.array([[index[m] for m in b] for b in ballots])
    k = len(methods)
    wins = np.zeros(k)
    for r in rankings:
        wins[r[:-1]] += 1
    losers = [methods[i] for i in range(k) if wins[i] == 0]
    if losers:
        warnings.warn(f"methods never ranked above another: {losers}; their worth is 0")

    w = np.full(k, 1.0 / k)
    lls = [pl_log_likelihood(w, rankings)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        denom = np.zeros(k)
        for r in rankings:
            tails = np.cumsum(w[r][::-1])[::-1]
            # Item at position p is in the choice sets of stages 0..min(p, k-2).
            inv = np.cumsum(1.0 / tails[:-1])
            for p, item in enumerate(r):
                denom[item] += inv[min(p, k - 2)]
        new = np.where(wins > 0, wins / denom, 0.0)
        new /= new.sum()
        ll = pl_log_likelihood(new, rankings)
        if check_monotone and ll < lls[-1] - 1e-9 * max(1.0, abs(lls[-1])):
            raise AssertionError(f"log-likelihood decreased at iteration {it}: {lls[-1]} -> {ll}")
        lls.append(ll)
        pos = w > 0
        rel = np.max(np.abs(new[pos] - w[pos]) / w[pos]) if pos.any() else 0.0
        w = new
        if rel < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"Plackett-Luce MM did not converge in {max_iter} iterations "
                      "(the maximum-likelihood estimate may not exist for these ballots)")
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    finite = np.isfinite(logw)
    logw[finite] -= logw[finite].mean()
    return PLResult(scores={m: float(logw[i]) for i, m in enumerate(methods)},
                    worth={m: float(w[i]) for i, m in enumerate(methods)},
                    iterations=it, converged=converged, log_likelihoods=lls)
