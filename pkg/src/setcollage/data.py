"""Corpus ingestion and the patch sampling that feeds training and inference.

Images are decoded to float32 (3, H, W) arrays in [-1, 1]. Style and content
corpora use the same loader; every sampled crop carries a provenance id of
the form "filename#x,y,w,h" so any template can be traced back to its source.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from PIL import Image
from torch import Tensor

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


class CorpusError(ValueError):
    """Raised when a directory yields no usable images."""


@dataclass
class Corpus:
    images: list[np.ndarray]  # float32 (3, H, W) in [-1, 1]
    ids: list[str]

    def __len__(self) -> int:
        return len(self.images)


@dataclass
class MemorySet:
    """K independently sampled style templates stacked on a set dimension."""

    templates: Tensor  # (K, 3, H, W)
    source_ids: list[str]

    @property
    def k(self) -> int:
        return self.templates.shape[0]


@dataclass
class Batch:
    memory: Tensor  # (B, K, 3, H, W)
    real_style: Tensor  # (B, 3, H, W)
    content: Optional[Tensor]  # (B, 3, H, W)
    memory_ids: list[list[str]] = field(default_factory=list)
    style_ids: list[str] = field(default_factory=list)
    content_ids: list[str] = field(default_factory=list)


def to_unit_range(u8: np.ndarray) -> np.ndarray:
    """uint8 [0, 255] -> float32 [-1, 1]."""
    return (u8.astype(np.float32) / 255.0) * 2.0 - 1.0


def to_uint8(x: np.ndarray) -> np.ndarray:
    """float [-1, 1] -> uint8 [0, 255], rounding to nearest."""
    return np.clip(np.rint((x + 1.0) * 127.5), 0, 255).astype(np.uint8)


def load_image(path: str | Path) -> np.ndarray:
    """Decode one image file to float32 (3, H, W) in [-1, 1]."""
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"))
    return to_unit_range(rgb.transpose(2, 0, 1))


def save_png(x: np.ndarray | Tensor, path: str | Path) -> None:
    """Write a (3, H, W) image in [-1, 1] as PNG."""
    if isinstance(x, Tensor):
        x = x.detach().cpu().numpy()
    Image.fromarray(to_uint8(x).transpose(1, 2, 0)).save(path, format="PNG")


def _upscale_to(img: np.ndarray, min_h: int, min_w: int) -> np.ndarray:
    _, h, w = img.shape
    if h >= min_h and w >= min_w:
        return img
    scale = max(min_h / h, min_w / w)
    new_h = max(min_h, round(h * scale))
    new_w = max(min_w, round(w * scale))
    pil = Image.fromarray(to_uint8(img).transpose(1, 2, 0))
    up = pil.resize((new_w, new_h), Image.BILINEAR)
    return to_unit_range(np.asarray(up).transpose(2, 0, 1))


def load_corpus(path: str | Path, patch_hw: tuple[int, int]) -> Corpus:
    """Decode every PNG/JPEG under `path`; upscale undersized images.

    Undecodable files are skipped with a warning; an empty or fully
    undecodable directory is an error.
    """
    root = Path(path)
    if not root.is_dir():
        raise CorpusError(f"corpus path is not a directory: {root}")
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    images, ids = [], []
    for f in files:
        try:
            img = load_image(f)
        except Exception as exc:  # undecodable file
            warnings.warn(f"skipping undecodable image {f}: {exc}")
            continue
        images.append(_upscale_to(img, *patch_hw))
        ids.append(f.name)
    if not images:
        raise CorpusError(f"no decodable images in {root}")
    log.info("loaded corpus %s: %d images", root, len(images))
    return Corpus(images=images, ids=ids)


def sample_patch(
    corpus: Corpus, h: int, w: int, rng: np.random.Generator
) -> tuple[np.ndarray, str]:
    """Uniform image choice, then a uniform valid top-left corner."""
    idx = int(rng.integers(len(corpus.images)))
    img = corpus.images[idx]
    _, ih, iw = img.shape
    y = int(rng.integers(ih - h + 1))
    x = int(rng.integers(iw - w + 1))
    crop = img[:, y : y + h, x : x + w]
    return crop, f"{corpus.ids[idx]}#{x},{y},{w},{h}"


def sample_memory_set(
    corpus: Corpus, k: int, h: int, w: int, rng: np.random.Generator
) -> MemorySet:
    """K independent patch draws stacked along the set dimension."""
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    crops, ids = zip(*(sample_patch(corpus, h, w, rng) for _ in range(k)))
    return MemorySet(
        templates=torch.from_numpy(np.stack(crops)), source_ids=list(ids)
    )


def make_minibatch(
    style: Corpus,
    content: Optional[Corpus],
    b: int,
    k_range: tuple[int, int],
    h: int,
    w: int,
    rng: np.random.Generator,
) -> Batch:
    """One shared K drawn uniformly from k_range, then B independent samples.

    K is constant within the minibatch (set shapes must agree across it) and
    re-drawn on every call.
    """
    k_min, k_max = k_range
    if b < 1 or k_min < 1 or k_min > k_max:
        raise ValueError(f"bad batch spec: B={b}, k_range={k_range}")
    k = int(rng.integers(k_min, k_max + 1))
    sets = [sample_memory_set(style, k, h, w, rng) for _ in range(b)]
    reals = [sample_patch(style, h, w, rng) for _ in range(b)]
    batch = Batch(
        memory=torch.stack([s.templates for s in sets]),
        real_style=torch.from_numpy(np.stack([r[0] for r in reals])),
        content=None,
        memory_ids=[s.source_ids for s in sets],
        style_ids=[r[1] for r in reals],
    )
    if content is not None:
        crops = [sample_patch(content, h, w, rng) for _ in range(b)]
        batch.content = torch.from_numpy(np.stack([c[0] for c in crops]))
        batch.content_ids = [c[1] for c in crops]
    return batch
