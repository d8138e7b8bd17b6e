"""Differentiable numeric primitives shared by every network in this package.

All image-like tensors follow the (E, C, H, W) layout where E is the element
dimension (set elements, or a plain batch). Pixel values live in [-1, 1].
Training runs in float32; gradient checking runs in float64.
"""

from __future__ import annotations

from typing import Callable, Sequence

import torch
import torch.nn.functional as F
from torch import Tensor, nn

#: theta layout is the row-major 2x3 affine matrix (a, b, tx, c, d, ty)
#: acting on normalized coordinates where [-1, 1] spans the image.
IDENTITY_THETA = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)

DEFAULT_NORM_EPS = 1e-5


def require_finite(x: Tensor, what: str) -> None:
    """Raise if x contains NaN/Inf (signals corrupted upstream state)."""
    if not torch.isfinite(x).all():
        raise ValueError(f"non-finite values in {what}")


def identity_theta(n: int, dtype=torch.float32, device=None) -> Tensor:
    return torch.tensor(IDENTITY_THETA, dtype=dtype, device=device).repeat(n, 1)


def ordered_sum(x: Tensor, dim: int) -> Tensor:
    """Sum along `dim` in a permutation-independent order.

    Summands are sorted by value first, so reordering elements along `dim`
    cannot change the floating-point result. Used for every reduction over
    the set dimension, which makes set operations bit-exactly equivariant.
    """
    return torch.sort(x, dim=dim).values.sum(dim=dim)


def ordered_softmax(x: Tensor, dim: int) -> Tensor:
    """Softmax along `dim` with a permutation-independent denominator."""
    m = x.amax(dim=dim, keepdim=True)
    e = torch.exp(x - m)
    return e / ordered_sum(e, dim=dim).unsqueeze(dim)


def instance_norm(x: Tensor, eps: float = DEFAULT_NORM_EPS) -> Tensor:
    """Normalize each (element, channel) slice to zero mean, unit variance.

    Population variance over the spatial dims; a constant slice maps to zero.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    require_finite(x, "instance_norm input")
    mean = x.mean(dim=(-2, -1), keepdim=True)
    var = x.var(dim=(-2, -1), unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps)


class ConvBlock(nn.Module):
    """5x5 same-padding convolution, optional instance norm, then ReLU.

    `stride=2` turns the block into the downsampling variant. The first
    discriminator layer uses `norm=False`; the discriminator stack uses
    `activation="lrelu"` (slope 0.2).
    """

    KERNEL = 5

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        stride: int = 1,
        norm: bool = True,
        activation: str = "relu",
        eps: float = DEFAULT_NORM_EPS,
    ):
        super().__init__()
        self.conv = nn.Conv2d(
            in_channels, out_channels, self.KERNEL, stride=stride, padding=self.KERNEL // 2
        )
        self.stride = stride
        self.norm = norm
        self.eps = eps
        if activation == "relu":
            self.act: Callable[[Tensor], Tensor] = F.relu
        elif activation == "lrelu":
            self.act = lambda t: F.leaky_relu(t, 0.2)
        else:
            raise ValueError(f"unknown activation {activation!r}")

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.conv.in_channels:
            raise ValueError(
                f"expected {self.conv.in_channels} input channels, got {x.shape[1]}"
            )
        y = self.conv(x)
        if self.norm:
            y = instance_norm(y, self.eps)
        return self.act(y)


def conv_block(x: Tensor, kernel: Tensor, bias: Tensor, eps: float = DEFAULT_NORM_EPS) -> Tensor:
    """Functional form: same-padding 5x5 conv, instance norm, ReLU."""
    if kernel.shape[-2:] != (5, 5):
        raise ValueError(f"kernel spatial size must be 5x5, got {tuple(kernel.shape[-2:])}")
    if x.shape[1] != kernel.shape[1]:
        raise ValueError(f"channel mismatch: input {x.shape[1]} vs kernel {kernel.shape[1]}")
    return F.relu(instance_norm(F.conv2d(x, kernel, bias, padding=2), eps))


def _affine_pixel_coords(theta: Tensor, h: int, w: int) -> tuple[Tensor, Tensor]:
    """Map output pixel indices to source pixel coordinates under theta.

    theta is (E, 6) in normalized coordinates. Arranged so the identity theta
    yields bit-exact integer coordinates for every output pixel.
    """
    e = theta.shape[0]
    dtype, device = theta.dtype, theta.device
    a, b, tx, c, d, ty = (theta[:, i].view(e, 1, 1) for i in range(6))
    cy, cx = (h - 1) / 2, (w - 1) / 2
    gx = torch.arange(w, dtype=dtype, device=device).view(1, 1, w) - cx
    gy = torch.arange(h, dtype=dtype, device=device).view(1, h, 1) - cy
    xs = a * gx + b * gy * (w / h) + tx * (w / 2) + cx
    ys = c * gx * (h / w) + d * gy + ty * (h / 2) + cy
    return xs, ys


def grid_sample_bilinear(x: Tensor, theta: Tensor) -> Tensor:
    """Resample each element of x under its own affine warp.

    x: (E, C, H, W); theta: (E, 6) normalized-coordinate affine maps.
    Bilinear interpolation, zero fill outside the source image. Differentiable
    w.r.t. both x and theta. An exact-identity theta reproduces x bitwise.
    """
    require_finite(x, "grid_sample input")
    e, ch, h, w = x.shape
    theta = theta.reshape(e, 6)
    if theta.shape[0] != e:
        raise ValueError(f"need one theta per element: {theta.shape[0]} != {e}")
    xs, ys = _affine_pixel_coords(theta.to(x.dtype), h, w)

    x0 = torch.floor(xs)
    y0 = torch.floor(ys)
    wx = (xs - x0).unsqueeze(1)
    wy = (ys - y0).unsqueeze(1)
    x0i = x0.long().unsqueeze(1)
    y0i = y0.long().unsqueeze(1)

    eidx = torch.arange(e, device=x.device).view(e, 1, 1, 1)
    cidx = torch.arange(ch, device=x.device).view(1, ch, 1, 1)
    out = None
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0i + dx
            yi = y0i + dy
            inside = ((xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)).to(x.dtype)
            v = x[eidx, cidx, yi.clamp(0, h - 1), xi.clamp(0, w - 1)]
            weight = (wx if dx else 1 - wx) * (wy if dy else 1 - wy) * inside
            term = v * weight
            out = term if out is None else out + term
    return out


def warp_is_identity(theta: Tensor) -> bool:
    ident = identity_theta(theta.shape[0], dtype=theta.dtype, device=theta.device)
    return torch.equal(theta.reshape(-1, 6), ident)


def gradcheck(
    op: Callable[[Tensor], Tensor], point: Tensor, step: float = 1e-5
) -> float:
    """Compare analytic gradients of a scalar-valued op against central differences.

    Returns max over coordinates of |analytic - numeric| / max(1, |analytic|).
    Runs in float64 regardless of the dtype of `point`.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    p = point.detach().to(torch.float64).clone().requires_grad_(True)
    value = op(p)
    if value.numel() != 1:
        raise ValueError("op must be scalar-valued")
    if not torch.isfinite(value):
        raise ValueError("op evaluated to a non-finite value")
    (analytic,) = torch.autograd.grad(value, p)
    require_finite(analytic, "analytic gradient")

    numeric = torch.zeros_like(analytic)
    flat = numeric.view(-1)
    with torch.no_grad():
        base = p.detach().clone()
        for i in range(base.numel()):
            for sign in (1.0, -1.0):
                probe = base.clone()
                probe.view(-1)[i] += sign * step
                f = op(probe)
                if not torch.isfinite(f):
                    raise ValueError("op evaluated to a non-finite value during probing")
                flat[i] += sign * f.item()
            flat[i] /= 2 * step
    rel = (analytic - numeric).abs() / analytic.abs().clamp_min(1.0)
    return rel.max().item()


def module_gradcheck(
    module: nn.Module,
    loss_fn: Callable[[nn.Module], Tensor],
    step: float = 1e-5,
    params: Sequence[str] | None = None,
) -> float:
    """Run `gradcheck` over a module's parameter vector.

    The module is evaluated functionally via `torch.func`, so its stored
    parameters are never mutated. `params` restricts the check to a subset
    of parameter names; `loss_fn` receives a callable module view.
    """
    module = module.to(torch.float64)
    named = dict(module.named_parameters())
    names = [n for n in named if params is None or n in params]
    sizes = [named[n].numel() for n in names]
    shapes = [named[n].shape for n in names]
    fixed = {n: p.detach() for n, p in named.items() if n not in names}

    def op(vec: Tensor) -> Tensor:
        pieces = torch.split(vec, sizes)
        overrides = dict(fixed)
        overrides.update(
            {n: piece.view(s) for n, piece, s in zip(names, pieces, shapes)}
        )
        return loss_fn(_Patched(module, overrides))

    point = torch.cat([named[n].detach().reshape(-1) for n in names])
    return gradcheck(op, point, step)


class _Patched(nn.Module):
    """View of a module with its parameters substituted (for gradcheck)."""

    def __init__(self, module: nn.Module, overrides: dict[str, Tensor]):
        super().__init__()
        object.__setattr__(self, "_inner", module)
        object.__setattr__(self, "_overrides", overrides)

    def forward(self, *args, **kwargs):
        return torch.func.functional_call(self._inner, self._overrides, args, kwargs)

    def __getattr__(self, name):
        return getattr(object.__getattribute__(self, "_inner"), name)
