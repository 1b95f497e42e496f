"""Command-line entry point: ``vidharm {synth,train,harmonize,predict-mask,eval,rank}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import cv2
import numpy as np
import torch

from .flow import FlowFormatError

log = logging.getLogger("vidharm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
CACHE_ENV = "HARMONIZER_CACHE"


class UsageError(Exception):
    pass


def _require(path, kind="path") -> Path:
    p = Path(path)
    if kind == "dir" and not p.is_dir():
        raise UsageError(f"not a directory: {p}")
    if kind == "file" and not p.is_file():
        raise UsageError(f"no such file: {p}")
    return p


def _load_cfg(args) -> dict:
    from .training import apply_overrides, load_config_file

    d = load_config_file(_require(args.config, "file")) if args.config else {}
    return apply_overrides(d, args.set)


# --------------------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    from .synthesis.dataset import SynthConfig, build_dataset

    d = _load_cfg(args)
    if args.sources:
        d["source_dir"] = str(_require(args.sources, "dir"))
    if args.toy:
        d["toy_sources"] = args.toy
        d["toy_size"] = args.toy_size
    if args.splits:
        try:
            tr, va, te = (int(x) for x in args.splits.split("/"))
        except ValueError:
            raise UsageError("--splits must look like TRAIN/VAL/TEST, e.g. 8/1/1")
        d["splits"] = {"train": tr, "val": va, "test": te}
    if args.inpaint:
        d["inpaint_method"] = args.inpaint
    if args.seed is not None:
        d["seed"] = args.seed
    d["out_dir"] = args.out
    try:
        cfg = SynthConfig.from_dict(d)
    except (KeyError, TypeError) as e:
        raise UsageError(f"bad synth config: {e}")
    if not cfg.source_dir and not cfg.toy_sources:
        raise UsageError("give --sources DIR or --toy N")
    manifest = build_dataset(cfg, cache_dir=os.environ.get(CACHE_ENV))
    print(json.dumps(manifest["counts"], sort_keys=True))
    return EXIT_OK


# --------------------------------------------------------------------------- train

def _train_config(args):
    from .training import TrainConfig

    d = _load_cfg(args)
    if args.seed is not None:
        d["seed"] = args.seed
    if args.resolution is not None:
        d["resolution"] = args.resolution
    if getattr(args, "max_steps", None) is not None:
        d["max_steps"] = args.max_steps
    if getattr(args, "epochs", None) is not None:
        d["epochs"] = args.epochs
    if args.out:
        d["out_dir"] = args.out
    try:
        return TrainConfig.from_dict(d)
    except (KeyError, TypeError) as e:
        raise UsageError(f"bad train config: {e}")


def cmd_train(args) -> int:
    from .plotting import plot_training_curves
    from .synthesis.dataset import load_manifest
    from .training import train

    _require(args.dataset, "dir")
    if args.resume:
        _require(args.resume, "file")
    cfg = _train_config(args)
    manifest = load_manifest(args.dataset)
    bundle, history = train(cfg, manifest, resume=args.resume)
    if cfg.out_dir:
        plot_training_curves(history, Path(cfg.out_dir) / "training_curves.png")
    print(json.dumps({"step": bundle.step, "epoch": bundle.epoch}))
    return EXIT_OK


# --------------------------------------------------------------------------- inference

def _list_frames(directory: Path) -> List[Path]:
    frames = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png")
    if not frames:
        raise UsageError(f"no PNG frames in {directory}")
    return frames


def _valid_size(n: int, multiple: int) -> int:
    return max(multiple, int(round(n / multiple)) * multiple)


def _to_tensor(img: np.ndarray) -> torch.Tensor:
    a = img if img.ndim == 3 else img[..., None]
    return torch.from_numpy(np.ascontiguousarray(a.transpose(2, 0, 1), dtype=np.float32))[None]


def _run_frame(bundle, img: np.ndarray, mask: Optional[np.ndarray]):
    """Harmonize one [0,1] frame at a model-compatible size, returning full-size output and mask."""
    from .data import to_model_range, to_unit_range
    from .evaluation import predict_mask
    from .networks import generate

    h, w = img.shape[:2]
    mult = max(bundle.generator.multiple, bundle.discriminator.multiple)
    hh, ww = _valid_size(h, mult), _valid_size(w, mult)
    resized = (hh, ww) != (h, w)
    small = cv2.resize(img, (ww, hh), interpolation=cv2.INTER_LINEAR) if resized else img
    x = to_model_range(_to_tensor(small))
    with torch.no_grad():
        if mask is None:
            m_small = predict_mask(bundle.discriminator, x)
            m_full = m_small[0, 0].numpy()
            if resized:
                m_full = np.clip(cv2.resize(m_full, (w, h), interpolation=cv2.INTER_LINEAR), 0, 1)
        else:
            m_full = mask.astype(np.float32)
            m_small = _to_tensor(cv2.resize(m_full, (ww, hh), interpolation=cv2.INTER_NEAREST)
                                 if resized else m_full)
        out = to_unit_range(generate(bundle.generator, x, m_small)).clamp(0, 1)[0].numpy().transpose(1, 2, 0)
    if resized:
        out = cv2.resize(out, (w, h), interpolation=cv2.INTER_LINEAR)
    # Re-composite at the original size so unmasked pixels stay exact.
    m3 = m_full[..., None]
    return m3 * out + (1 - m3) * img, m_full, resized


def _load_bundle(path):
    from .networks import load_checkpoint

    bundle, _ = load_checkpoint(_require(path, "file"))
    bundle.generator.eval()
    bundle.discriminator.eval()
    return bundle


def cmd_harmonize(args) -> int:
    from .synthesis.dataset import read_mask, read_png, write_png

    frames_dir = _require(args.frames, "dir")
    if not args.mask_free and not args.mask_dir:
        raise UsageError("give --mask-dir or --mask-free")
    mask_dir = _require(args.mask_dir, "dir") if args.mask_dir and not args.mask_free else None
    frames = _list_frames(frames_dir)
    if mask_dir is not None:
        missing = [f.name for f in frames if not (mask_dir / f.name).exists()]
        if missing:
            raise UsageError(f"masks missing for frames: {missing[:5]}")
    bundle = _load_bundle(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for f in frames:
        img = read_png(f)
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=2)
        mask = read_mask(mask_dir / f.name) if mask_dir is not None else None
        result, _, resized = _run_frame(bundle, img, mask)
        if resized:
            log.info("%s: resized to a multiple of the network stride and back", f.name)
        write_png(out / f.name, result)
    print(json.dumps({"frames": len(frames), "out": str(out)}))
    return EXIT_OK


def cmd_predict_mask(args) -> int:
    from .synthesis.dataset import read_png, write_png

    frames = _list_frames(_require(args.frames, "dir"))
    bundle = _load_bundle(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for f in frames:
        img = read_png(f)
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=2)
        _, m, _ = _run_frame(bundle, img, None)
        write_png(out / f.name, m)
    print(json.dumps({"frames": len(frames), "out": str(out)}))
    return EXIT_OK


# --------------------------------------------------------------------------- eval / rank

def cmd_eval(args) -> int:
    from .evaluation import evaluate_split, format_table
    from .synthesis.dataset import load_manifest

    _require(args.dataset, "dir")
    if args.flows:
        _require(args.flows, "dir")
    bundle = _load_bundle(args.checkpoint) if args.checkpoint else None
    manifest = load_manifest(args.dataset)
    resolution = args.resolution
    if resolution is None:
        resolution = 512
    report = evaluate_split(bundle, manifest, args.split, resolution, flows_dir=args.flows,
                            mask_free=args.mask_free, out_dir=args.out)
    sys.stdout.write(format_table([report]))
    return EXIT_OK


def cmd_rank(args) -> int:
    from .evaluation import plackett_luce, read_ballots

    ballots = read_ballots(_require(args.ballots, "file"))
    try:
        res = plackett_luce(ballots)
    except ValueError as e:
        raise ValueError(f"invalid ballots: {e}")
    for name, score in sorted(res.scores.items(), key=lambda kv: -kv[1]):
        print(f"{name}\t{score:+.3f}")
    if args.out:
        from .plotting import plot_rank_scores

        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "rank_scores.json").write_text(json.dumps(
            {"scores": {k: (v if np.isfinite(v) else str(v)) for k, v in res.scores.items()},
             "iterations": res.iterations, "converged": res.converged}, indent=2, sort_keys=True) + "\n")
        plot_rank_scores(res.scores, out / "rank_scores.png")
    return EXIT_OK


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or TOML config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry (dotted key), repeatable")
    common.add_argument("--seed", type=int, help="seed for every stochastic component")
    common.add_argument("--resolution", type=int, help="square working resolution in pixels")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="vidharm", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="build a synthetic two-frame dataset")
    s.add_argument("--sources", help="corpus directory with index.csv/index.json, images and masks")
    s.add_argument("--toy", type=int, default=0, help="generate N procedural sources instead")
    s.add_argument("--toy-size", type=int, default=128, help="side length of procedural sources")
    s.add_argument("--splits", help="TRAIN/VAL/TEST sample counts, e.g. 8/1/1")
    s.add_argument("--inpaint", choices=("exemplar", "diffusion"), help="background fill method")
    s.set_defaults(func=cmd_synth, out_required=True)

    t = sub.add_parser("train", parents=[common], help="train generator and discriminator")
    t.add_argument("--dataset", required=True, help="dataset root containing manifest.json")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--max-steps", type=int, help="stop after this many steps")
    t.add_argument("--epochs", type=int, help="number of epochs")
    t.set_defaults(func=cmd_train)

    h = sub.add_parser("harmonize", parents=[common], help="harmonize a directory of PNG frames")
    h.add_argument("--frames", required=True, help="directory of numbered PNG frames")
    h.add_argument("--mask-dir", help="directory of foreground masks with matching filenames")
    h.add_argument("--checkpoint", required=True, help="trained checkpoint")
    h.add_argument("--mask-free", action="store_true",
                   help="use the discriminator's disharmony map instead of input masks")
    h.set_defaults(func=cmd_harmonize, out_required=True)

    m = sub.add_parser("predict-mask", parents=[common], help="write predicted disharmony maps")
    m.add_argument("--frames", required=True, help="directory of PNG frames")
    m.add_argument("--checkpoint", required=True, help="trained checkpoint")
    m.set_defaults(func=cmd_predict_mask, out_required=True)

    e = sub.add_parser("eval", parents=[common], help="PSNR/MSE/L_T1/L_T2 on a dataset split")
    e.add_argument("--dataset", required=True, help="dataset root containing manifest.json")
    e.add_argument("--split", default="test", choices=("train", "val", "test"), help="split to evaluate")
    e.add_argument("--checkpoint", help="trained checkpoint (omit for the cut-and-paste baseline)")
    e.add_argument("--flows", help="directory of externally estimated flows for L_T2")
    e.add_argument("--mask-free", action="store_true", help="evaluate with predicted masks")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("rank", parents=[common], help="aggregate rankings with Plackett-Luce")
    r.add_argument("--ballots", required=True, help="CSV, one ballot per row, best method first")
    r.set_defaults(func=cmd_rank)
    return p


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None:
        torch.manual_seed(args.seed)
        np.random.seed(args.seed % 2 ** 32)
    from .synthesis.dataset import DatasetError
    from .training import TrainingDiverged

    try:
        if getattr(args, "out_required", False) and not args.out:
            raise UsageError(f"{args.command} requires --out")
        return args.func(args)
    except UsageError as e:
        print(f"error: usage: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, FloatingPointError) as e:
        print(f"error: numeric: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, FlowFormatError, FileNotFoundError, ValueError, KeyError, OSError) as e:
        print(f"error: data: {e}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
