"""Harmonization generator, pixel-wise disharmony discriminator, and checkpoints."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import torch
import torch.nn as nn

CHECKPOINT_VERSION = "vidharm-ckpt/1"
NORMS = ("instance", "batch", "none")


@dataclass
class GeneratorConfig:
    input_channels: int = 4
    base_channels: int = 64
    depth: int = 7
    max_channels: int = 512
    norm: str = "instance"
    arch: str = "unet"
    residual_blocks: int = 6

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}")
        if self.arch not in ("unet", "resnet"):
            raise ValueError(f"unknown generator arch {self.arch!r}")


@dataclass
class DiscriminatorConfig:
    input_channels: int = 3
    base_channels: int = 64
    depth: int = 7
    max_channels: int = 512
    norm: str = "instance"

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}")


def _norm(kind: str, ch: int) -> nn.Module:
    if kind == "instance":
        return nn.InstanceNorm2d(ch, affine=True)
    if kind == "batch":
        return nn.BatchNorm2d(ch)
    return nn.Identity()


class UNet(nn.Module):
    """Strided-conv encoder / transposed-conv decoder with concatenated skips.

    Decoder level ``k`` concatenates encoder level ``k`` features; the last
    layer also sees the raw input. Output is linear; callers add activations.
    """

    def __init__(self, in_ch: int, out_ch: int, base: int, depth: int,
                 max_ch: int = 512, norm: str = "instance"):
        super().__init__()
        self.depth = depth
        chs = [min(base * 2 ** k, max_ch) for k in range(depth)]
        self.down = nn.ModuleList()
        prev = in_ch
        for k, ch in enumerate(chs):
            layers = [nn.Conv2d(prev, ch, 4, 2, 1)]
            # The innermost level may be 1x1; instance statistics are undefined there.
            if 0 < k < depth - 1:
                layers.append(_norm(norm, ch))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            self.down.append(nn.Sequential(*layers))
            prev = ch
        self.up = nn.ModuleList()
        for k in reversed(range(depth)):
            in_c = chs[k] if k == depth - 1 else 2 * chs[k]
            out_c = chs[k - 1] if k > 0 else base
            self.up.append(nn.Sequential(nn.ConvTranspose2d(in_c, out_c, 4, 2, 1),
                                         _norm(norm, out_c), nn.ReLU(inplace=True)))
        self.head = nn.Conv2d(base + in_ch, out_ch, 3, 1, 1)

    def forward(self, x):
        feats = []
        h = x
        for layer in self.down:
            h = layer(h)
            feats.append(h)
        for i, layer in enumerate(self.up):
            if i > 0:
                h = torch.cat([h, feats[-1 - i]], dim=1)
            h = layer(h)
        return self.head(torch.cat([h, x], dim=1))


class _ResBlock(nn.Module):
    def __init__(self, ch: int, norm: str):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1), nn.Conv2d(ch, ch, 3), _norm(norm, ch), nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1), nn.Conv2d(ch, ch, 3), _norm(norm, ch))

    def forward(self, x):
        return x + self.body(x)


class ResnetGenerator(nn.Module):
    """Two stride-2 downsamplings, a stack of residual blocks, two upsamplings."""

    def __init__(self, in_ch: int, out_ch: int, base: int, blocks: int = 6,
                 max_ch: int = 512, norm: str = "instance"):
        super().__init__()
        c1, c2, c3 = base, min(2 * base, max_ch), min(4 * base, max_ch)
        layers = [nn.ReflectionPad2d(3), nn.Conv2d(in_ch, c1, 7), _norm(norm, c1), nn.ReLU(True),
                  nn.Conv2d(c1, c2, 3, 2, 1), _norm(norm, c2), nn.ReLU(True),
                  nn.Conv2d(c2, c3, 3, 2, 1), _norm(norm, c3), nn.ReLU(True)]
        layers += [_ResBlock(c3, norm) for _ in range(blocks)]
        layers += [nn.ConvTranspose2d(c3, c2, 3, 2, 1, output_padding=1), _norm(norm, c2), nn.ReLU(True),
                   nn.ConvTranspose2d(c2, c1, 3, 2, 1, output_padding=1), _norm(norm, c1), nn.ReLU(True),
                   nn.ReflectionPad2d(3), nn.Conv2d(c1, out_ch, 7)]
        self.net = nn.Sequential(*layers)
        self.depth = 2

    def forward(self, x):
        return self.net(x)


class Generator(nn.Module):
    """Maps (composite RGB, mask) in [-1, 1] to a raw RGB prediction in [-1, 1]."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.arch == "unet":
            self.body = UNet(cfg.input_channels, 3, cfg.base_channels, cfg.depth,
                             cfg.max_channels, cfg.norm)
        else:
            self.body = ResnetGenerator(cfg.input_channels, 3, cfg.base_channels,
                                        cfg.residual_blocks, cfg.max_channels, cfg.norm)

    @property
    def multiple(self) -> int:
        return 2 ** self.body.depth

    def forward(self, frame, mask):
        return torch.tanh(self.body(torch.cat([frame, mask], dim=1)))


class Discriminator(nn.Module):
    """Per-pixel disharmony regressor (linear output, LSGAN targets 0/1)."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        self.body = UNet(cfg.input_channels, 1, cfg.base_channels, cfg.depth,
                         cfg.max_channels, cfg.norm)

    @property
    def multiple(self) -> int:
        return 2 ** self.body.depth

    def forward(self, frame):
        return self.body(frame)


def _seeded(build, seed: Optional[int]):
    if seed is None:
        return build()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return build()


def build_generator(cfg: GeneratorConfig, seed: Optional[int] = None) -> Generator:
    return _seeded(lambda: Generator(cfg), seed)


def build_discriminator(cfg: DiscriminatorConfig, seed: Optional[int] = None) -> Discriminator:
    return _seeded(lambda: Discriminator(cfg), seed)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def _check_size(x: torch.Tensor, multiple: int) -> None:
    h, w = x.shape[-2:]
    if h % multiple or w % multiple:
        raise ValueError(
            f"spatial size {h}x{w} is not divisible by {multiple}; pad or resize the input first")


def generate(gen: Generator, frame: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Harmonize ``frame`` (B,3,H,W) under ``mask`` (B,1,H,W).

    The raw prediction is composited back so pixels with ``mask == 0`` are
    returned exactly as given.
    """
    _check_size(frame, gen.multiple)
    raw = gen(frame, mask)
    return mask * raw + (1 - mask) * frame


def discriminate(disc: Discriminator, frame: torch.Tensor) -> torch.Tensor:
    """Raw per-pixel disharmony scores, shape (B,1,H,W)."""
    _check_size(frame, disc.multiple)
    return disc(frame)


@dataclass
class ModelBundle:
    generator: Generator
    discriminator: Discriminator
    opt_g: Optional[torch.optim.Optimizer] = None
    opt_d: Optional[torch.optim.Optimizer] = None
    step: int = 0
    epoch: int = 0
    extra: dict = field(default_factory=dict)

    @classmethod
    def create(cls, gcfg: GeneratorConfig, dcfg: DiscriminatorConfig, seed: int = 0) -> "ModelBundle":
        return cls(build_generator(gcfg, seed), build_discriminator(dcfg, seed + 1))

    def save(self, path) -> None:
        save_checkpoint(self, path)


def save_checkpoint(bundle: ModelBundle, path) -> None:
    """Write configs (JSON), parameters, optimizer states and counters to one archive."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "generator_config": json.dumps(asdict(bundle.generator.cfg)),
        "discriminator_config": json.dumps(asdict(bundle.discriminator.cfg)),
        "generator": bundle.generator.state_dict(),
        "discriminator": bundle.discriminator.state_dict(),
        "step": bundle.step,
        "epoch": bundle.epoch,
        "extra": json.dumps(bundle.extra),
    }
    if bundle.opt_g is not None:
        payload["opt_g"] = bundle.opt_g.state_dict()
    if bundle.opt_d is not None:
        payload["opt_d"] = bundle.opt_d.state_dict()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path, map_location="cpu") -> tuple:
    """Return ``(bundle, payload)``; optimizers are not instantiated here."""
    payload = torch.load(path, map_location=map_location, weights_only=True)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')!r}")
    gcfg = GeneratorConfig(**json.loads(payload["generator_config"]))
    dcfg = DiscriminatorConfig(**json.loads(payload["discriminator_config"]))
    gen, disc = Generator(gcfg), Discriminator(dcfg)
    gen.load_state_dict(payload["generator"])
    disc.load_state_dict(payload["discriminator"])
    bundle = ModelBundle(gen, disc, step=int(payload["step"]), epoch=int(payload["epoch"]),
                         extra=json.loads(payload.get("extra", "{}")))
    return bundle, payload
