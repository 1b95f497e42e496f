"""Training objectives for the generator and the pixel-wise discriminator.

Frames are ``(B, C, H, W)`` tensors and maps/masks ``(B, 1, H, W)``. Every
loss is a per-element mean (channels included), averaged over the batch.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import torch

# Defaults used for training the full model.
LAMBDA_TEMPORAL = 2e-2
LAMBDA_ADV = 1e-2


@dataclass
class LossWeights:
    lambda1: float = LAMBDA_TEMPORAL
    lambda2: float = LAMBDA_ADV

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class LossReport:
    reconstruction: float
    regional_temporal: float
    adversarial_g: float
    total_g: float
    d_fake_out: float = 0.0
    d_fake_in: float = 0.0
    d_real: float = 0.0
    d_total: float = 0.0
    degenerate_foreground: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _same_shape(*ts):
    shape = ts[0].shape
    for t in ts[1:]:
        if t.shape != shape:
            raise ValueError(f"shape mismatch: {tuple(shape)} vs {tuple(t.shape)}")


def reconstruction_loss(output: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _same_shape(output, target)
    return torch.mean((output - target) ** 2)


def regional_temporal_loss(current: torch.Tensor, warped_prev: torch.Tensor,
                           mask: torch.Tensor, valid: torch.Tensor = None,
                           return_flag: bool = False):
    """Foreground-weighted squared difference between a frame and its warped predecessor.

    Per sample: ``sum((w * diff)^2) / (C * sum(w))`` with ``w = mask * valid``.
    Samples with an empty weight map contribute 0; ``return_flag`` also
    returns whether any sample was degenerate.
    """
    _same_shape(current, warped_prev)
    if valid is None:
        valid = torch.ones_like(mask)
    weight = mask * valid
    if weight.shape[0] != current.shape[0] or weight.shape[2:] != current.shape[2:]:
        raise ValueError(f"mask {tuple(weight.shape)} does not match frame {tuple(current.shape)}")
    c = current.shape[1]
    num = ((weight * (current - warped_prev)) ** 2).flatten(1).sum(1)
    den = c * weight.flatten(1).sum(1)
    empty = den <= 0
    per = torch.where(empty, torch.zeros_like(num), num / torch.where(empty, torch.ones_like(den), den))
    loss = per.mean()
    if return_flag:
        return loss, bool(empty.any())
    return loss


def global_temporal_loss(current: torch.Tensor, warped_prev: torch.Tensor,
                         valid: torch.Tensor = None) -> torch.Tensor:
    """Temporal loss treating every pixel equally (normalized by all elements)."""
    _same_shape(current, warped_prev)
    if valid is None:
        return reconstruction_loss(current, warped_prev)
    ones = torch.ones_like(valid)
    return regional_temporal_loss(current, warped_prev, ones, valid)


def adversarial_generator_loss(d_out_fake: torch.Tensor) -> torch.Tensor:
    return torch.mean(d_out_fake ** 2)


def discriminator_loss(d_out: torch.Tensor, d_in: torch.Tensor, d_real: torch.Tensor,
                       mask: torch.Tensor, return_terms: bool = False):
    """Least-squares pixel labelling: composites and outputs toward the mask, real frames toward 0."""
    _same_shape(d_out, d_in, d_real, mask)
    t_out = 0.5 * torch.mean((d_out - mask) ** 2)
    t_in = 0.5 * torch.mean((d_in - mask) ** 2)
    t_real = torch.mean(d_real ** 2)
    total = t_out + t_in + t_real
    if return_terms:
        return total, (t_out, t_in, t_real)
    return total


def generator_total(reconstruction, regional_temporal, adversarial, weights: LossWeights):
    return reconstruction + weights.lambda1 * regional_temporal + weights.lambda2 * adversarial
