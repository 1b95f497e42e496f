"""Two-frame coordinated adversarial training."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from .data import SampleStore
from .flow import warp
from .losses import (LossReport, LossWeights, adversarial_generator_loss, discriminator_loss,
                     generator_total, global_temporal_loss, reconstruction_loss,
                     regional_temporal_loss)
from .networks import (DiscriminatorConfig, GeneratorConfig, ModelBundle, discriminate, generate,
                       load_checkpoint, save_checkpoint)

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    """A loss became NaN or infinite."""


@dataclass
class TrainConfig:
    resolution: int = 512
    lr: float = 2e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    batch_size: int = 1
    epochs: int = 45
    max_steps: Optional[int] = None
    weights: LossWeights = field(default_factory=LossWeights)
    temporal_loss: str = "regional"
    seed: int = 0
    value_range: tuple = (-1.0, 1.0)
    checkpoint_every: int = 1000
    d_steps_per_g_step: int = 1
    warmup_steps_without_adv: int = 0
    validate_every_epochs: int = 1
    out_dir: Optional[str] = None
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.temporal_loss not in ("regional", "global"):
            raise ValueError("temporal_loss must be 'regional' or 'global'")
        if self.d_steps_per_g_step < 0:
            raise ValueError("d_steps_per_g_step must be >= 0")
        for net in (self.generator, self.discriminator):
            depth = net.depth if getattr(net, "arch", "unet") == "unet" else 2
            if self.resolution % (2 ** depth):
                raise ValueError(f"resolution {self.resolution} not divisible by 2^{depth}")

    @classmethod
    def toy(cls, **overrides) -> "TrainConfig":
        """Desk-scale defaults: 128x128, depth-4 networks."""
        base = dict(resolution=128, generator=GeneratorConfig(base_channels=16, depth=4),
                    discriminator=DiscriminatorConfig(base_channels=16, depth=4))
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown train config keys: {sorted(unknown)}")
        nested = {"weights": LossWeights, "generator": GeneratorConfig,
                  "discriminator": DiscriminatorConfig}
        for key, typ in nested.items():
            if isinstance(d.get(key), dict):
                sub = d[key]
                bad = set(sub) - {f.name for f in fields(typ)}
                if bad:
                    raise KeyError(f"unknown {key} config keys: {sorted(bad)}")
                d[key] = typ(**sub)
        if "value_range" in d:
            d["value_range"] = tuple(d["value_range"])
        return cls(**d)


@dataclass
class StepRecord:
    step: int
    report: LossReport
    wall_time: float

    def to_json(self) -> str:
        return json.dumps({"step": self.step, "wall_time": self.wall_time, **asdict(self.report)},
                          sort_keys=True)


def make_optimizers(bundle: ModelBundle, cfg: TrainConfig) -> None:
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    bundle.opt_g = torch.optim.Adam(bundle.generator.parameters(), lr=cfg.lr, betas=betas)
    bundle.opt_d = torch.optim.Adam(bundle.discriminator.parameters(), lr=cfg.lr, betas=betas)


def new_bundle(cfg: TrainConfig) -> ModelBundle:
    bundle = ModelBundle.create(cfg.generator, cfg.discriminator, cfg.seed)
    make_optimizers(bundle, cfg)
    return bundle


def resume_bundle(path, cfg: TrainConfig) -> ModelBundle:
    bundle, payload = load_checkpoint(path)
    make_optimizers(bundle, cfg)
    if "opt_g" in payload:
        bundle.opt_g.load_state_dict(payload["opt_g"])
    if "opt_d" in payload:
        bundle.opt_d.load_state_dict(payload["opt_d"])
    return bundle


def _finite(x: torch.Tensor) -> bool:
    return bool(torch.isfinite(x).all())


def _dump_divergence(cfg: TrainConfig, bundle: ModelBundle, values: dict) -> Optional[Path]:
    if not cfg.out_dir:
        return None
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"diverged_step{bundle.step}.json"
    path.write_text(json.dumps({"step": bundle.step, "epoch": bundle.epoch, "losses": values},
                               indent=2, default=str))
    save_checkpoint(bundle, out / f"diverged_step{bundle.step}.pt")
    return path


def train_step(bundle: ModelBundle, batch: dict, cfg: TrainConfig) -> StepRecord:
    """One generator update on both frames of a pair, then the discriminator update(s).

    Both frames go through the generator in one batched call; with
    per-sample normalization this equals two separate passes.
    """
    t0 = time.perf_counter()
    G, D = bundle.generator, bundle.discriminator
    if bundle.opt_g is None or bundle.opt_d is None:
        make_optimizers(bundle, cfg)
    G.train()
    D.train()
    w = cfg.weights
    lam2 = 0.0 if bundle.step < cfg.warmup_steps_without_adv else w.lambda2
    n = batch["comp_1"].shape[0]

    comps = torch.cat([batch["comp_1"], batch["comp_2"]])
    masks = torch.cat([batch["mask_1"], batch["mask_2"]])
    gts = torch.cat([batch["gt_1"], batch["gt_2"]])

    D.requires_grad_(False)
    outs = generate(G, comps, masks)
    out_1, out_2 = outs[:n], outs[n:]
    warped, in_bounds = warp(out_1, batch["flow"])
    valid = batch["valid_2"] * in_bounds

    rec = reconstruction_loss(outs, gts)
    if cfg.temporal_loss == "regional":
        temporal, degenerate = regional_temporal_loss(out_2, warped, batch["mask_2"], valid,
                                                      return_flag=True)
    else:
        temporal, degenerate = global_temporal_loss(out_2, warped, valid), False
    if lam2 > 0:
        adv = adversarial_generator_loss(discriminate(D, outs))
    else:
        with torch.no_grad():
            adv = adversarial_generator_loss(discriminate(D, outs))

    total = rec
    if w.lambda1 > 0:
        total = total + w.lambda1 * temporal
    if lam2 > 0:
        total = total + lam2 * adv
    values = {"reconstruction": rec.item(), "temporal": temporal.item(), "adv": adv.item()}
    if not _finite(total):
        path = _dump_divergence(cfg, bundle, values)
        raise TrainingDiverged(f"non-finite generator loss at step {bundle.step}: {values} (dump: {path})")
    bundle.opt_g.zero_grad(set_to_none=True)
    total.backward()
    bundle.opt_g.step()
    D.requires_grad_(True)

    fakes = outs.detach()
    d_terms = (torch.zeros(()),) * 3
    d_total = torch.zeros(())
    if cfg.d_steps_per_g_step > 0:
        G.requires_grad_(False)
        d_in = torch.cat([fakes, comps, gts])
        for _ in range(cfg.d_steps_per_g_step):
            scores = discriminate(D, d_in)
            s_out, s_in, s_real = scores[:2 * n], scores[2 * n:4 * n], scores[4 * n:]
            d_total, d_terms = discriminator_loss(s_out, s_in, s_real, masks, return_terms=True)
            if not _finite(d_total):
                values["d_total"] = d_total.item()
                path = _dump_divergence(cfg, bundle, values)
                raise TrainingDiverged(f"non-finite discriminator loss at step {bundle.step} (dump: {path})")
            bundle.opt_d.zero_grad(set_to_none=True)
            d_total.backward()
            bundle.opt_d.step()
        G.requires_grad_(True)

    bundle.step += 1
    report = LossReport(
        reconstruction=rec.item(), regional_temporal=temporal.item(), adversarial_g=adv.item(),
        total_g=generator_total(rec.item(), temporal.item(), adv.item(), LossWeights(w.lambda1, lam2)),
        d_fake_out=d_terms[0].item(), d_fake_in=d_terms[1].item(), d_real=d_terms[2].item(),
        d_total=d_total.item(), degenerate_foreground=degenerate)
    return StepRecord(bundle.step, report, time.perf_counter() - t0)


def train(cfg: TrainConfig, manifest: dict, resume=None,
          on_step: Optional[Callable[[StepRecord], None]] = None):
    """Run training over the manifest's train split.

    Returns ``(bundle, history)`` where ``history`` is the list of step and
    validation records written to ``<out_dir>/train_log.jsonl``.
    """
    torch.manual_seed(cfg.seed)
    bundle = resume_bundle(resume, cfg) if resume else new_bundle(cfg)
    history = []
    if cfg.epochs <= bundle.epoch or (cfg.max_steps is not None and bundle.step >= cfg.max_steps):
        return bundle, history

    store = SampleStore(manifest, "train", cfg.resolution)
    val_store = None
    if cfg.validate_every_epochs and any(e["split"] == "val" for e in manifest["samples"]):
        val_store = SampleStore(manifest, "val", cfg.resolution)

    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    log_file = None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "train_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, default=list))
        log_file = open(out_dir / "train_log.jsonl", "a" if resume else "w")

    def emit(rec: dict):
        history.append(rec)
        if log_file:
            log_file.write(json.dumps(rec, sort_keys=True) + "\n")
            log_file.flush()

    nb = math.ceil(len(store) / cfg.batch_size)
    done = False
    try:
        for epoch in range(bundle.epoch, cfg.epochs):
            order = np.random.default_rng([cfg.seed, epoch]).permutation(len(store))
            start = int(bundle.extra.get("batch_in_epoch", 0))
            for b in range(start, nb):
                if cfg.max_steps is not None and bundle.step >= cfg.max_steps:
                    done = True
                    break
                batch = store.batch(order[b * cfg.batch_size:(b + 1) * cfg.batch_size])
                rec = train_step(bundle, batch, cfg)
                bundle.extra["batch_in_epoch"] = b + 1
                emit(json.loads(rec.to_json()) | {"epoch": epoch})
                if on_step:
                    on_step(rec)
                if out_dir and cfg.checkpoint_every and bundle.step % cfg.checkpoint_every == 0:
                    save_checkpoint(bundle, out_dir / "checkpoint.pt")
            if done:
                break
            bundle.epoch = epoch + 1
            bundle.extra["batch_in_epoch"] = 0
            if val_store is not None and bundle.epoch % cfg.validate_every_epochs == 0:
                from .evaluation import evaluate_store
                rep = evaluate_store(bundle, val_store)
                emit({"epoch": epoch, "step": bundle.step, "val_psnr": rep.psnr,
                      "val_mse": rep.mse, "val_lt1": rep.lt1})
                log.info("epoch %d step %d val psnr %.2f mse %.4f lt1 %.4f",
                         epoch, bundle.step, rep.psnr, rep.mse, rep.lt1)
    finally:
        if log_file:
            log_file.close()
    if out_dir:
        save_checkpoint(bundle, out_dir / "checkpoint.pt")
    return bundle, history


def load_config_file(path) -> dict:
    """Read a JSON or TOML training/synthesis config into a plain dict."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        import tomli
        return tomli.loads(text)
    return json.loads(text)


def apply_overrides(d: dict, overrides) -> dict:
    """Apply ``a.b=value`` strings; values are parsed as JSON when possible."""
    d = json.loads(json.dumps(d, default=list))
    for item in overrides or ():
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise KeyError(f"override {key!r}: {p} is not a section")
        node[parts[-1]] = val
    return d
