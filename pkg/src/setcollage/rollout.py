"""Tiled fully-convolutional inference for images larger than a training patch.

An overlapping tile grid covers the requested canvas; every tile runs one
generator forward pass and pastes a trimmed region, so the paste rectangles
partition the output exactly (no gaps, no double writes). Interior tiles
keep their centers (half the overlap trimmed per inner edge); border tiles
keep their outer margins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from torch import Tensor

from .data import Corpus, sample_memory_set
from .generator import Generator, colorize_weights


@dataclass
class TileRect:
    src_y: int
    src_x: int
    paste_y0: int
    paste_y1: int
    paste_x0: int
    paste_x1: int


@dataclass
class TilePlan:
    out_h: int
    out_w: int
    tile: int
    overlap: int
    tiles: list[TileRect]

    @property
    def grid_shape(self) -> tuple[int, int]:
        ys = {t.src_y for t in self.tiles}
        xs = {t.src_x for t in self.tiles}
        return len(ys), len(xs)


def _axis_positions(length: int, tile: int, overlap: int, align: int) -> list[int]:
    if length == tile:
        return [0]
    span = length - tile
    if align > 1:
        if span % align:
            raise ValueError(
                f"output extent {length} minus tile {tile} must be divisible by align={align}"
            )
        stride_cap = ((tile - overlap) // align) * align
        if stride_cap < 1:
            raise ValueError(f"tile-overlap too small for align={align}")
    else:
        stride_cap = tile - overlap
    n = math.ceil(span / stride_cap) + 1
    stride = math.ceil(span / (n - 1))
    if align > 1:
        stride = math.ceil(stride / align) * align
    positions = sorted({min(i * stride, span) for i in range(n)})
    return positions


def _paste_bounds(positions: list[int], tile: int, length: int) -> list[tuple[int, int]]:
    """Cut each overlap at its midpoint; first/last tiles keep outer margins."""
    bounds = []
    start = 0
    for i, pos in enumerate(positions):
        if i + 1 < len(positions):
            end = (positions[i + 1] + pos + tile) // 2
        else:
            end = length
        bounds.append((start, end))
        start = end
    return bounds


def plan_tiles(
    out_h: int, out_w: int, tile: int = 384, overlap: int = 64, align: int = 1
) -> TilePlan:
    """Plan an overlapping grid covering an (out_h, out_w) canvas.

    `overlap` is the minimum guaranteed overlap between neighbors; the actual
    stride spreads the tiles evenly (ceil((L - T) / (n - 1))). `align` forces
    tile origins onto multiples of a downsampling factor, which tiled/full
    equivalence for norm-free generators requires.
    """
    if overlap < 0 or tile <= overlap:
        raise ValueError(f"need tile > overlap >= 0, got tile={tile}, overlap={overlap}")
    if out_h < tile or out_w < tile:
        raise ValueError(
            f"output {out_h}x{out_w} smaller than tile {tile}; shrink the tile"
        )
    ys = _axis_positions(out_h, tile, overlap, align)
    xs = _axis_positions(out_w, tile, overlap, align)
    y_bounds = _paste_bounds(ys, tile, out_h)
    x_bounds = _paste_bounds(xs, tile, out_w)
    tiles = [
        TileRect(sy, sx, py0, py1, px0, px1)
        for sy, (py0, py1) in zip(ys, y_bounds)
        for sx, (px0, px1) in zip(xs, x_bounds)
    ]
    return TilePlan(out_h=out_h, out_w=out_w, tile=tile, overlap=overlap, tiles=tiles)


@dataclass
class RolloutResult:
    refined: Tensor  # (3, H, W)
    collage: Tensor  # (3, H, W)
    weights_rgb: Tensor  # (3, H, W) colorized blend weights
    weights: Tensor  # (K, H, W) raw blend weights
    memory_ids: list[str]


def render_tiled(
    generator: Generator,
    plan: TilePlan,
    *,
    style: Optional[Corpus] = None,
    content: Optional[Tensor] = None,
    memory: Optional[Tensor] = None,
    k: int = 8,
    seed: int = 0,
    memory_mode: str = "shared",
    color_seed: int = 0,
) -> RolloutResult:
    """Render a large canvas tile by tile.

    Memory policy:
      - "shared" (default): one tile-sized memory set sampled once and reused
        for every tile, for visual coherence;
      - "per_tile": a fresh set per tile (seeds derived from `seed`);
      - passing `memory` as (K, 3, out_h, out_w) canvases crops each tile's
        memory from the same global images, which makes tiled rendering
        equivalent to one whole-canvas forward pass for norm-free models.
    """
    t = plan.tile
    if content is not None and tuple(content.shape[-2:]) != (plan.out_h, plan.out_w):
        raise ValueError(
            f"content {tuple(content.shape[-2:])} must match plan "
            f"{(plan.out_h, plan.out_w)}"
        )
    if memory is not None:
        if memory.dim() != 4 or tuple(memory.shape[-2:]) != (plan.out_h, plan.out_w):
            raise ValueError("global memory canvases must be (K, 3, out_h, out_w)")
        memory_mode = "global"
    elif memory_mode not in ("shared", "per_tile"):
        raise ValueError(f"unknown memory_mode {memory_mode!r}")
    if memory is None and style is None:
        raise ValueError("need a style corpus unless global memory is provided")
    if memory is not None:
        k = memory.shape[0]

    rng = np.random.default_rng(seed)
    shared_ids: list[str] = []
    if memory_mode == "shared":
        mset = sample_memory_set(style, k, t, t, rng)
        shared_memory, shared_ids = mset.templates, mset.source_ids
    tile_seeds = np.random.SeedSequence(seed).spawn(len(plan.tiles))

    canvases = {
        name: torch.zeros(3, plan.out_h, plan.out_w) for name in ("refined", "collage", "weights")
    }
    raw_weights = torch.zeros(k, plan.out_h, plan.out_w)
    collected_ids = list(shared_ids)
    with torch.no_grad():
        for idx, rect in enumerate(plan.tiles):
            if memory_mode == "global":
                mem = memory[
                    :, :, rect.src_y : rect.src_y + t, rect.src_x : rect.src_x + t
                ]
            elif memory_mode == "shared":
                mem = shared_memory
            else:
                mset = sample_memory_set(
                    style, k, t, t, np.random.default_rng(tile_seeds[idx])
                )
                mem = mset.templates
                collected_ids.extend(mset.source_ids)
            ctile = None
            if content is not None:
                ctile = content[
                    ..., rect.src_y : rect.src_y + t, rect.src_x : rect.src_x + t
                ]
                if ctile.dim() == 3:
                    ctile = ctile.unsqueeze(0)
            out = generator(mem.to(torch.float32), content=ctile)
            panes = {
                "refined": out.refined[0],
                "collage": out.collage[0],
                "weights": colorize_weights(out.weights, seed=color_seed),
            }
            ly0, ly1 = rect.paste_y0 - rect.src_y, rect.paste_y1 - rect.src_y
            lx0, lx1 = rect.paste_x0 - rect.src_x, rect.paste_x1 - rect.src_x
            for name, pane in panes.items():
                canvases[name][
                    :, rect.paste_y0 : rect.paste_y1, rect.paste_x0 : rect.paste_x1
                ] = pane[:, ly0:ly1, lx0:lx1]
            raw_weights[
                :, rect.paste_y0 : rect.paste_y1, rect.paste_x0 : rect.paste_x1
            ] = out.weights[:, ly0:ly1, lx0:lx1]
    return RolloutResult(
        refined=canvases["refined"],
        collage=canvases["collage"],
        weights_rgb=canvases["weights"],
        weights=raw_weights,
        memory_ids=collected_ids,
    )
