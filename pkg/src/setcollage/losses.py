"""Training objectives: adversarial pair, content match, and the three
blend-weight regularizers (entropy, total variation, dominant-template usage).

All reductions are means so the lambda weights are resolution-independent.
Weight tensors are accepted as (K, H, W) or batched (B, K, H, W); batched
inputs average the per-sample losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor

from .nn_core import require_finite

ENTROPY_EPS = 1e-8


@dataclass
class LossWeights:
    """Scalar multipliers for the generator objective."""

    content: float = 1.0
    tv: float = 1.0
    entropy: float = 0.5
    max_usage: float = 1.0

    def __post_init__(self):
        for name in ("content", "tv", "entropy", "max_usage"):
            v = getattr(self, name)
            if not (v >= 0 and v == v):
                raise ValueError(f"lambda_{name} must be finite and >= 0, got {v}")


@dataclass
class LossReport:
    adv_d: float
    adv_g: float
    content: float
    entropy: float
    tv: float
    max_usage: float
    total_g: float

    def finite(self) -> bool:
        return all(v == v and abs(v) != float("inf") for v in vars(self).values())

    def offending_terms(self) -> list[str]:
        return [k for k, v in vars(self).items() if v != v or abs(v) == float("inf")]


def _batch(x: Tensor) -> Tensor:
    return x.unsqueeze(0) if x.dim() == 3 else x


def adversarial_loss_d(real_logits: Tensor, fake_logits: Tensor) -> Tensor:
    """Discriminator objective: real logits toward 1, fake logits toward 0."""
    if real_logits.shape != fake_logits.shape:
        raise ValueError("real and fake logit maps must have the same shape")
    require_finite(real_logits, "real logits")
    require_finite(fake_logits, "fake logits")
    return F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()


def adversarial_loss_g(fake_logits: Tensor) -> Tensor:
    """Non-saturating generator objective: fake logits toward 1."""
    require_finite(fake_logits, "fake logits")
    return F.softplus(-fake_logits).mean()


def feature_pyramid(x: Tensor, levels: int) -> Tensor:
    """`levels` successive 2x average poolings of the raw pixels."""
    for _ in range(levels):
        x = F.avg_pool2d(x, 2)
    return x


def content_loss(content: Tensor, output: Tensor, phi_levels: int = 2) -> Tensor:
    """Mean squared difference of average-pool pyramid features."""
    if content.shape != output.shape:
        raise ValueError(
            f"content {tuple(content.shape)} and output {tuple(output.shape)} differ"
        )
    return (feature_pyramid(content, phi_levels) - feature_pyramid(output, phi_levels)).pow(2).mean()


def entropy_loss(weights: Tensor) -> Tensor:
    """Mean per-pixel entropy of the blend weights; 0 means hard one-hot cuts."""
    a = _batch(weights)
    return -(a * torch.log(a + ENTROPY_EPS)).sum(dim=1).mean()


def tv_loss(weights: Tensor) -> Tensor:
    """Anisotropic L1 total variation of the weight planes, per pixel per element."""
    a = _batch(weights)
    b, k, h, w = a.shape
    dh = (a[..., :, 1:] - a[..., :, :-1]).abs().sum() if w > 1 else a.new_zeros(())
    dv = (a[..., 1:, :] - a[..., :-1, :]).abs().sum() if h > 1 else a.new_zeros(())
    return (dh + dv) / (b * k * h * w)


def max_usage_loss(weights: Tensor) -> Tensor:
    """Spatial fraction claimed by the dominant template, in [1/K, 1].

    Gradient flows through the winning plane only (subgradient of max).
    """
    a = _batch(weights)
    h, w = a.shape[-2:]
    return (a.sum(dim=(-2, -1)).max(dim=1).values / (h * w)).mean()


def generator_total_loss(
    adv_g: Tensor,
    content: Tensor | float,
    entropy: Tensor,
    tv: Tensor,
    max_usage: Tensor,
    w: LossWeights,
) -> Tensor:
    """adv + lambda_C * content + lambda_TV * tv + lambda_E * entropy + lambda_M * usage.

    Unguided training passes content = 0 (equivalently lambda_C = 0).
    """
    return (
        adv_g
        + w.content * content
        + w.tv * tv
        + w.entropy * entropy
        + w.max_usage * max_usage
    )
