"""The collage generator: set network -> blend weights -> pooled collage -> refiner.

A sampled template set replaces the usual noise input. The set network emits
one blend-logit map per element (plus warp parameters when enabled), a
softmax across the set turns the logits into per-pixel convex weights, and
the weighted sum of the (optionally warped) templates is the collage, which
a plain U-Net then refines. Every step is differentiable and permutation
aware: permuting the input set co-permutes weights and warps bit-exactly and
leaves the collage and the refined image unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from torch import Tensor, nn

from .nn_core import grid_sample_bilinear, identity_theta, ordered_softmax, ordered_sum
from .set_blocks import RefinerUNet, STUNet


@dataclass
class GeneratorConfig:
    depth: int = 5
    base_channels: int = 48
    heads: int = 4
    guided: bool = False
    warping: bool = False
    norm: bool = True  # False gives the norm-free fully-convolutional variant
    attn_min_level: int = 0


@dataclass
class GeneratorOutput:
    """Blend weights, optional per-element warps, collage, refined image."""

    weights: Tensor  # (K, H, W) or (B, K, H, W)
    theta: Optional[Tensor]  # (K, 6) / (B, K, 6) when warping is enabled
    collage: Tensor  # (1, 3, H, W) or (B, 3, H, W)
    refined: Tensor  # same shape as collage


def assemble_input(memory: Tensor, content: Optional[Tensor] = None) -> Tensor:
    """Concatenate replicated content channels onto every template.

    memory: (B, K, 3, H, W); content: (B, 3, H, W) or None. Unguided input
    passes through unchanged; guided input gains channels 3-5 holding the
    content, identical across the K elements.
    """
    if content is None:
        return memory
    if content.shape[-2:] != memory.shape[-2:]:
        raise ValueError(
            f"content {tuple(content.shape[-2:])} does not spatially match "
            f"memory {tuple(memory.shape[-2:])}"
        )
    b, k = memory.shape[:2]
    rep = content.unsqueeze(1).expand(b, k, *content.shape[1:])
    return torch.cat([memory, rep], dim=2)


def blend_weights(logits: Tensor) -> Tensor:
    """Softmax over the set dimension of (K, 1, H, W) or (B, K, 1, H, W) logits."""
    squeeze = logits.dim() == 4
    if squeeze:
        logits = logits.unsqueeze(0)
    a = ordered_softmax(logits.squeeze(2), dim=1)
    return a.squeeze(0) if squeeze else a


def warp_templates(templates: Tensor, theta: Tensor) -> Tensor:
    """Resample each template under its own affine map (before set pooling).

    templates: (B, K, 3, H, W) or (K, 3, H, W); theta matches with (..., 6).
    """
    squeeze = templates.dim() == 4
    if squeeze:
        templates, theta = templates.unsqueeze(0), theta.unsqueeze(0)
    b, k, c, h, w = templates.shape
    if theta.shape[:2] != (b, k):
        raise ValueError(f"need one theta per element: {tuple(theta.shape)} vs K={k}")
    out = grid_sample_bilinear(
        templates.reshape(b * k, c, h, w), theta.reshape(b * k, 6)
    ).reshape(b, k, c, h, w)
    return out.squeeze(0) if squeeze else out


def set_pool(templates: Tensor, weights: Tensor, check: bool = True) -> Tensor:
    """Convex combination of templates: out[c] = sum_k weights[k] * templates[k].

    Permutation-invariant under co-permutation of templates and weights
    (bit-exact: the set reduction uses a canonical summand order).
    """
    squeeze = templates.dim() == 4
    if squeeze:
        templates, weights = templates.unsqueeze(0), weights.unsqueeze(0)
    if templates.shape[:2] != weights.shape[:2] or templates.shape[-2:] != weights.shape[-2:]:
        raise ValueError(
            f"templates {tuple(templates.shape)} and weights {tuple(weights.shape)} disagree"
        )
    if check:
        with torch.no_grad():
            if weights.min() < 0:
                raise ValueError("blend weights must be non-negative")
            total = weights.sum(dim=1)
            if (total - 1).abs().max() > 1e-5:
                raise ValueError("blend weights must sum to 1 over the set dimension")
    # unbatched (K, 3, H, W) input pools to (1, 3, H, W): the leading batch
    # axis doubles as the collage's element axis
    return ordered_sum(weights.unsqueeze(2) * templates, dim=1)


def colorize_weights(weights: Tensor, seed: int = 0) -> Tensor:
    """Render blend weights as an image: one pseudo-random color per element.

    weights: (K, H, W) -> (3, H, W), pixel = sum_k weights[k] * color_k with
    colors drawn deterministically from `seed`, components in [-1, 1].
    """
    k = weights.shape[0]
    rng = np.random.default_rng(seed)
    colors = torch.as_tensor(
        rng.uniform(-1.0, 1.0, size=(k, 3)), dtype=weights.dtype, device=weights.device
    )
    return torch.einsum("khw,kc->chw", weights, colors)


class Generator(nn.Module):
    """Maps a template set (plus optional content) to a collage and a refinement.

    The set network's output channel 0 per element is the blend logit;
    channels 1-6 (present when `cfg.warping`) are average-pooled into the
    per-element affine warp, offset from the identity. The warp slice of the
    final conv is zero-initialized so training starts at the identity warp,
    and a warp-capable model run with warping disabled at initialization
    produces bit-identical output.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        in_channels = 6 if cfg.guided else 3
        head_channels = 7 if cfg.warping else 1
        self.set_net = STUNet(
            in_channels,
            head_channels,
            cfg.depth,
            cfg.base_channels,
            heads=cfg.heads,
            attn_min_level=cfg.attn_min_level,
            norm=cfg.norm,
        )
        if cfg.warping:
            with torch.no_grad():
                self.set_net.head.weight[1:].zero_()
                self.set_net.head.bias[1:].zero_()
        self.refiner = RefinerUNet(
            6 if cfg.guided else 3, 3, cfg.depth, cfg.base_channels, norm=cfg.norm
        )

    def receptive_field(self) -> int:
        # sequential composition of the two hourglasses
        return self.set_net.receptive_field() + self.refiner.receptive_field() - 1

    def forward(
        self,
        memory: Tensor,
        content: Optional[Tensor] = None,
        warping_enabled: Optional[bool] = None,
    ) -> GeneratorOutput:
        if warping_enabled is None:
            warping_enabled = self.cfg.warping
        if warping_enabled and not self.cfg.warping:
            raise ValueError("model has no warp head; rebuild with warping=True")
        if self.cfg.guided and content is None:
            raise ValueError("guided model requires a content image")
        if not self.cfg.guided and content is not None:
            raise ValueError("unguided model cannot take content")

        batched = memory.dim() == 5
        if not batched:
            memory = memory.unsqueeze(0)
            if content is not None and content.dim() == 3:
                content = content.unsqueeze(0)
        b, k = memory.shape[:2]

        maps = self.set_net(assemble_input(memory, content))
        weights = blend_weights(maps[:, :, :1])

        theta = None
        templates = memory
        if warping_enabled:
            theta = identity_theta(
                b * k, dtype=memory.dtype, device=memory.device
            ).view(b, k, 6) + maps[:, :, 1:7].mean(dim=(-2, -1))
            templates = warp_templates(memory, theta)

        collage = set_pool(templates, weights, check=False)
        refine_in = collage if content is None else torch.cat([collage, content], dim=1)
        refined = self.refiner(refine_in)

        if not batched:
            weights = weights.squeeze(0)
            theta = None if theta is None else theta.squeeze(0)
        return GeneratorOutput(weights=weights, theta=theta, collage=collage, refined=refined)


def generator_forward(
    generator: Generator,
    memory: Tensor,
    content: Optional[Tensor] = None,
    warping_enabled: Optional[bool] = None,
) -> GeneratorOutput:
    """Functional alias for a single-set forward pass."""
    return generator(memory, content=content, warping_enabled=warping_enabled)
