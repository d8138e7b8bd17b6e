"""Versioned checkpoint serialization.

Layout: a directory holding `manifest.json` plus one `.bin` blob per tensor.
Each blob is raw little-endian float32 data prefixed by the tensor's rank
and dimensions as 64-bit little-endian unsigned integers. The manifest lists
blob names in a fixed order together with the training config, iteration
counter, optimizer step counts, and rng states. A save/load round trip
reproduces every parameter bit-exactly.
"""

from __future__ import annotations

import base64
import json
import struct
from dataclasses import asdict
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import torch
from torch import Tensor

if TYPE_CHECKING:  # avoid an import cycle with trainer
    from .trainer import ModelState, TrainConfig

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"


class CheckpointError(Exception):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """The on-disk format version is not supported."""


class CheckpointIntegrityError(CheckpointError):
    """A blob is truncated, oversized, or inconsistent with the manifest."""


def write_blob(path: Path, tensor: Tensor) -> None:
    data = tensor.detach().cpu().to(torch.float32).numpy()
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", data.ndim))
        f.write(struct.pack(f"<{data.ndim}Q", *data.shape))
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_blob(path: Path, expected_shape: tuple[int, ...]) -> Tensor:
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise CheckpointIntegrityError(f"missing blob {path.name}") from None
    if len(raw) < 8:
        raise CheckpointIntegrityError(f"truncated blob {path.name}: no header")
    (rank,) = struct.unpack_from("<Q", raw, 0)
    header = 8 + 8 * rank
    if len(raw) < header:
        raise CheckpointIntegrityError(f"truncated blob {path.name}: short header")
    shape = struct.unpack_from(f"<{rank}Q", raw, 8)
    if tuple(shape) != tuple(expected_shape):
        raise CheckpointIntegrityError(
            f"blob {path.name} shape {shape} disagrees with manifest {expected_shape}"
        )
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    expected_bytes = header + 4 * count
    if len(raw) < expected_bytes:
        raise CheckpointIntegrityError(f"truncated blob {path.name}: short payload")
    if len(raw) > expected_bytes:
        raise CheckpointIntegrityError(f"blob {path.name} has trailing bytes")
    data = np.frombuffer(raw, dtype="<f4", offset=header).reshape(shape)
    return torch.from_numpy(data.copy())


def _named_tensors(state: "ModelState") -> list[tuple[str, Tensor]]:
    """Fixed serialization order: model weights, then optimizer moments."""
    out: list[tuple[str, Tensor]] = []
    for prefix, module in (("generator", state.generator), ("discriminator", state.discriminator)):
        for key, value in module.state_dict().items():
            out.append((f"{prefix}/{key}", value))
    for prefix, module, opt in (
        ("adam_g", state.generator, state.opt_g),
        ("adam_d", state.discriminator, state.opt_d),
    ):
        params = {id(p): name for name, p in module.named_parameters()}
        for group in opt.param_groups:
            for p in group["params"]:
                opt_state = opt.state.get(p)
                if not opt_state:
                    continue
                name = params[id(p)]
                out.append((f"{prefix}/{name}/exp_avg", opt_state["exp_avg"]))
                out.append((f"{prefix}/{name}/exp_avg_sq", opt_state["exp_avg_sq"]))
    return out


def _optimizer_steps(opt: torch.optim.Optimizer) -> int:
    for group in opt.param_groups:
        for p in group["params"]:
            st = opt.state.get(p)
            if st and "step" in st:
                return int(st["step"].item() if torch.is_tensor(st["step"]) else st["step"])
    return 0


def save_checkpoint(state: "ModelState", cfg: "TrainConfig", path: str | Path) -> Path:
    """Write the full training state; returns the checkpoint directory."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    tensors = _named_tensors(state)
    entries = []
    for i, (name, tensor) in enumerate(tensors):
        fname = f"t{i:05d}.bin"
        write_blob(root / fname, tensor)
        entries.append({"name": name, "file": fname, "shape": list(tensor.shape)})
    manifest = {
        "format_version": FORMAT_VERSION,
        "iteration": state.iteration,
        "config": cfg.to_json_dict(),
        "optimizer_steps": {
            "generator": _optimizer_steps(state.opt_g),
            "discriminator": _optimizer_steps(state.opt_d),
        },
        "torch_rng": base64.b64encode(bytes(torch.get_rng_state().numpy())).decode(),
        "numpy_rng": state.rng.bit_generator.state,
        "tensors": entries,
    }
    with open(root / MANIFEST_NAME, "w") as f:
        json.dump(manifest, f, indent=1)
    return root


def load_checkpoint(path: str | Path) -> tuple["ModelState", "TrainConfig"]:
    """Rebuild models and optimizer state from disk.

    Raises CheckpointVersionError / CheckpointIntegrityError; never returns
    partially loaded state.
    """
    from .trainer import ModelState, TrainConfig, build_models, build_optimizers

    root = Path(path)
    try:
        manifest = json.loads((root / MANIFEST_NAME).read_text())
    except FileNotFoundError:
        raise CheckpointIntegrityError(f"no {MANIFEST_NAME} in {root}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointIntegrityError(f"unreadable manifest: {exc}") from None
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format {version} unsupported (expected {FORMAT_VERSION})"
        )
    cfg = TrainConfig.from_json_dict(manifest["config"])
    loaded = {
        e["name"]: read_blob(root / e["file"], tuple(e["shape"]))
        for e in manifest["tensors"]
    }

    generator, discriminator = build_models(cfg)
    opt_g, opt_d = build_optimizers(generator, discriminator, cfg)
    for prefix, module in (("generator", generator), ("discriminator", discriminator)):
        sd = module.state_dict()
        for key in sd:
            name = f"{prefix}/{key}"
            if name not in loaded:
                raise CheckpointIntegrityError(f"manifest missing tensor {name}")
            if loaded[name].shape != sd[key].shape:
                raise CheckpointIntegrityError(f"tensor {name} has the wrong shape")
            sd[key] = loaded[name]
        module.load_state_dict(sd)

    steps = manifest.get("optimizer_steps", {})
    for prefix, module, opt, step in (
        ("adam_g", generator, opt_g, steps.get("generator", 0)),
        ("adam_d", discriminator, opt_d, steps.get("discriminator", 0)),
    ):
        if step == 0:
            continue
        for name, p in module.named_parameters():
            m = loaded.get(f"{prefix}/{name}/exp_avg")
            v = loaded.get(f"{prefix}/{name}/exp_avg_sq")
            if m is None or v is None:
                raise CheckpointIntegrityError(f"missing optimizer moments for {name}")
            opt.state[p] = {
                "step": torch.tensor(float(step)),
                "exp_avg": m,
                "exp_avg_sq": v,
            }

    rng = np.random.default_rng()
    rng.bit_generator.state = manifest["numpy_rng"]
    torch_rng = base64.b64decode(manifest["torch_rng"])
    state = ModelState(
        generator=generator,
        discriminator=discriminator,
        opt_g=opt_g,
        opt_d=opt_d,
        iteration=int(manifest["iteration"]),
        rng=rng,
        torch_rng=torch.tensor(list(torch_rng), dtype=torch.uint8),
    )
    return state, cfg


__all__ = [
    "CheckpointError",
    "CheckpointIntegrityError",
    "CheckpointVersionError",
    "FORMAT_VERSION",
    "load_checkpoint",
    "save_checkpoint",
]
