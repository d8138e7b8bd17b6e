"""Patch discriminator: a spatial grid of real/fake logits, one per local patch."""

from __future__ import annotations

from torch import Tensor, nn

from .nn_core import ConvBlock


class PatchDiscriminator(nn.Module):
    """Stack of stride-2 5x5 conv blocks ending in a linear 1-channel conv.

    The first layer skips normalization; the channel width doubles after
    every layer. Each logit in the (1, 1, H/2^depth, W/2^depth) output map
    judges one local patch; note that instance norm couples pixels through
    the per-image statistics, so strict logit locality only holds for the
    `norm=False` variant. Leaky ReLU (0.2) by default, configurable back to
    plain ReLU.
    """

    def __init__(
        self,
        depth: int = 6,
        base_channels: int = 128,
        in_channels: int = 3,
        activation: str = "lrelu",
        norm: bool = True,
    ):
        super().__init__()
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.depth = depth
        layers = []
        ch = in_channels
        for layer in range(depth):
            out_ch = base_channels << layer
            layers.append(
                ConvBlock(
                    ch, out_ch, stride=2, norm=norm and layer > 0, activation=activation
                )
            )
            ch = out_ch
        self.blocks = nn.Sequential(*layers)
        self.head = nn.Conv2d(ch, 1, 5, padding=2)

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[-2:]
        if h % (1 << self.depth) or w % (1 << self.depth):
            raise ValueError(
                f"input {h}x{w} must be divisible by 2^depth={1 << self.depth}"
            )
        return self.head(self.blocks(x))

    def receptive_field(self) -> int:
        r, jump = 1, 1
        for _ in range(self.depth):
            r += 4 * jump
            jump *= 2
        return r + 4 * jump
