"""Set-attention blocks and the two hourglass networks built from them.

`STUNet` carries a set dimension K through an encoder/decoder and lets the
elements interact through per-pixel self-attention: every spatial position
holds an independent set of K feature vectors. `RefinerUNet` is the plain
convolutional counterpart used to polish the pooled collage.

Inputs are 5-D (B, K, C, H, W) for the set network and 4-D (B, C, H, W) for
the refiner. Both require H and W divisible by 2**depth.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .nn_core import ConvBlock, ordered_sum, ordered_softmax


class SetAttention(nn.Module):
    """Multi-head self-attention across the K set elements at each pixel.

    Residual connection around the attention output; no layer norm inside
    (the surrounding conv blocks already normalize). All reductions over K
    use a canonical summand order, so permuting the elements permutes the
    output bit-exactly. Cost and memory are quadratic in K.
    """

    def __init__(self, channels: int, heads: int = 4):
        super().__init__()
        if channels % heads != 0:
            raise ValueError(f"heads ({heads}) must divide channels ({channels})")
        self.channels = channels
        self.heads = heads
        self.q = nn.Linear(channels, channels, bias=False)
        self.k = nn.Linear(channels, channels, bias=False)
        self.v = nn.Linear(channels, channels, bias=False)
        self.out = nn.Linear(channels, channels, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        b, k, c, h, w = x.shape
        d = c // self.heads
        t = x.permute(0, 3, 4, 1, 2).reshape(b * h * w, k, c)
        # (N, heads, K, d)
        q = self.q(t).view(-1, k, self.heads, d).transpose(1, 2)
        key = self.k(t).view(-1, k, self.heads, d).transpose(1, 2)
        v = self.v(t).view(-1, k, self.heads, d).transpose(1, 2)
        scores = q @ key.transpose(-2, -1) / d**0.5
        attn = ordered_softmax(scores, dim=-1)
        # materialize the (K_query, K_key, d) products so the K reduction can
        # be ordered; keeps equivariance exact at the price of K^2 d memory
        pooled = ordered_sum(attn.unsqueeze(-1) * v.unsqueeze(-3), dim=-2)
        y = pooled.transpose(1, 2).reshape(-1, k, c)
        y = self.out(y).view(b, h, w, k, c).permute(0, 3, 4, 1, 2)
        return x + y


def _fold(x: Tensor) -> Tensor:
    b, k, c, h, w = x.shape
    return x.reshape(b * k, c, h, w)


def _unfold(x: Tensor, b: int, k: int) -> Tensor:
    _, c, h, w = x.shape
    return x.reshape(b, k, c, h, w)


def _check_divisible(h: int, w: int, depth: int) -> None:
    if h % (1 << depth) or w % (1 << depth):
        raise ValueError(
            f"spatial size {h}x{w} must be divisible by 2^depth={1 << depth}; pad the input"
        )


class STUNet(nn.Module):
    """Hourglass over set-structured maps: conv blocks plus set attention.

    Channel width starts at `base_channels` and doubles at every
    downsampling; skip connections join encoder level l to decoder level l.
    The final 5x5 conv is linear so heads can produce logits. K is never
    baked into the weights: any K >= 1 works with one parameter set.

    `attn_min_level` restricts attention to levels >= that value (0 = every
    level) to save memory on large inputs.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        depth: int,
        base_channels: int,
        heads: int = 4,
        attn_min_level: int = 0,
        norm: bool = True,
    ):
        super().__init__()
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.depth = depth
        widths = [base_channels << level for level in range(depth + 1)]
        self.widths = widths

        self.stem = ConvBlock(in_channels, widths[0], norm=norm)
        self.down = nn.ModuleList(
            ConvBlock(widths[l - 1], widths[l], stride=2, norm=norm)
            for l in range(1, depth + 1)
        )
        self.up = nn.ModuleList(
            ConvBlock(widths[l + 1] + widths[l], widths[l], norm=norm)
            for l in range(depth - 1, -1, -1)
        )
        self.enc_attn = nn.ModuleList(
            SetAttention(widths[l], heads) if l >= attn_min_level else nn.Identity()
            for l in range(depth + 1)
        )
        self.dec_attn = nn.ModuleList(
            SetAttention(widths[l], heads) if l >= attn_min_level else nn.Identity()
            for l in range(depth - 1, -1, -1)
        )
        self.head = nn.Conv2d(widths[0], out_channels, 5, padding=2)

    def forward(self, x: Tensor) -> Tensor:
        b, k, _, h, w = x.shape
        _check_divisible(h, w, self.depth)
        feat = _unfold(self.stem(_fold(x)), b, k)
        feat = self.enc_attn[0](feat)
        skips = [feat]
        for level in range(1, self.depth + 1):
            feat = _unfold(self.down[level - 1](_fold(feat)), b, k)
            feat = self.enc_attn[level](feat)
            if level < self.depth:
                skips.append(feat)
        for i, level in enumerate(range(self.depth - 1, -1, -1)):
            upped = F.interpolate(_fold(feat), scale_factor=2, mode="nearest")
            merged = torch.cat([upped, _fold(skips[level])], dim=1)
            feat = _unfold(self.up[i](merged), b, k)
            feat = self.dec_attn[i](feat)
        return _unfold(self.head(_fold(feat)), b, k)

    def receptive_field(self) -> int:
        return _hourglass_receptive_field(self.depth)


class RefinerUNet(nn.Module):
    """Plain convolutional hourglass; final conv then tanh, output in (-1, 1)."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        depth: int,
        base_channels: int,
        norm: bool = True,
    ):
        super().__init__()
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.depth = depth
        widths = [base_channels << level for level in range(depth + 1)]
        self.stem = ConvBlock(in_channels, widths[0], norm=norm)
        self.down = nn.ModuleList(
            ConvBlock(widths[l - 1], widths[l], stride=2, norm=norm)
            for l in range(1, depth + 1)
        )
        self.up = nn.ModuleList(
            ConvBlock(widths[l + 1] + widths[l], widths[l], norm=norm)
            for l in range(depth - 1, -1, -1)
        )
        self.head = nn.Conv2d(widths[0], out_channels, 5, padding=2)

    def forward(self, x: Tensor) -> Tensor:
        _, _, h, w = x.shape
        _check_divisible(h, w, self.depth)
        feat = self.stem(x)
        skips = [feat]
        for level in range(1, self.depth + 1):
            feat = self.down[level - 1](feat)
            if level < self.depth:
                skips.append(feat)
        for i, level in enumerate(range(self.depth - 1, -1, -1)):
            upped = F.interpolate(feat, scale_factor=2, mode="nearest")
            feat = self.up[i](torch.cat([upped, skips[level]], dim=1))
        return torch.tanh(self.head(feat))

    def receptive_field(self) -> int:
        return _hourglass_receptive_field(self.depth)


def _hourglass_receptive_field(depth: int) -> int:
    """Input-pixel span seen by one output pixel of the hourglass nets.

    Stem conv, `depth` stride-2 convs, `depth` decoder convs after nearest
    upsampling, and the linear head; all kernels 5x5. Evaluates to
    8 * 2**depth + 1.
    """
    r, jump = 1, 1
    r += 4 * jump  # stem
    for _ in range(depth):
        r += 4 * jump
        jump *= 2
    for _ in range(depth):
        jump //= 2
        r += 4 * jump
    r += 4  # head
    return r


def st_unet_forward(m_in: Tensor, net: STUNet) -> Tensor:
    """Single-set convenience wrapper: (K, C, H, W) -> (K, out, H, W)."""
    return net(m_in.unsqueeze(0)).squeeze(0)


def unet_forward(x: Tensor, net: RefinerUNet) -> Tensor:
    """Single-image convenience wrapper: (1, C, H, W) -> (1, out, H, W)."""
    return net(x)
