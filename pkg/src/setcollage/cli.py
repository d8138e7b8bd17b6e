"""Command-line entry point: train, infer, rollout, sample, serve.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Every run writes a
`run_manifest.json` into its output directory recording the effective
config, seed, and sha256 of each artifact, so identical argv reproduce
identical artifacts byte for byte.

Options resolve in precedence order: explicit flag > --set key=value >
config file > built-in default. Config files are flat `key = value` lines;
keys may carry a `<subcommand>.` prefix.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .checkpoint import load_checkpoint
from .data import load_corpus, load_image, sample_memory_set, save_png
from .rollout import plan_tiles, render_tiled
from .trainer import TrainConfig, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); the contract is 1
        raise UsageError(f"{message}\n{self.format_usage()}")


def _parse_value(raw: str):
    low = raw.strip()
    if low.lower() in ("true", "false"):
        return low.lower() == "true"
    for cast in (int, float):
        try:
            return cast(low)
        except ValueError:
            continue
    return low


def _read_config_file(path: str, command: str) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if "." in key:
            prefix, key = key.split(".", 1)
            if prefix != command:
                continue
        values[key.replace("-", "_")] = _parse_value(raw)
    return values


def _effective(args, defaults: dict) -> dict:
    """Merge flag/--set/config-file/default values by precedence."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        file_values = _read_config_file(args.config, args.command)
        unknown = set(file_values) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_values)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip().replace("-", "_")
        if key not in defaults:
            raise UsageError(f"--set: unknown key {key!r}")
        cfg[key] = _parse_value(raw)
    for key in defaults:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    return cfg


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, cfg: dict, artifacts: list[Path]) -> None:
    manifest = {
        "command": command,
        "config": cfg,
        "seed": cfg.get("seed"),
        "artifacts": {str(p.relative_to(out)): _sha256(p) for p in artifacts},
    }
    with open(out / "run_manifest.json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)


TRAIN_DEFAULTS = dict(
    style_dir=None,
    content_dir=None,
    out="run",
    iters=1000,
    size=256,
    batch=None,  # 6 guided / 12 unguided
    k_min=2,
    k_max=12,
    depth=5,
    base_channels=48,
    disc_depth=None,  # 6 guided / 7 unguided
    disc_base_channels=128,
    heads=4,
    lambda_content=10.0,
    lambda_tv=1.0,
    lambda_entropy=0.5,
    lambda_max_usage=1.0,
    phi_levels=2,
    lr=2e-4,
    warping=False,
    no_norm=False,
    grad_clip=0.0,
    seed=0,
    checkpoint_every=0,
)


def cmd_train(args) -> int:
    cfg = _effective(args, TRAIN_DEFAULTS)
    if not cfg["style_dir"]:
        raise UsageError("train requires --style-dir")
    guided = bool(cfg["content_dir"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)

    tc = TrainConfig(
        patch_h=cfg["size"],
        patch_w=cfg["size"],
        batch_size=cfg["batch"] or (6 if guided else 12),
        k_min=cfg["k_min"],
        k_max=cfg["k_max"],
        gen_depth=cfg["depth"],
        gen_base_channels=cfg["base_channels"],
        disc_depth=cfg["disc_depth"] or (6 if guided else 7),
        disc_base_channels=cfg["disc_base_channels"],
        heads=cfg["heads"],
        warping=cfg["warping"],
        norm=not cfg["no_norm"],
        lambda_content=cfg["lambda_content"],
        lambda_tv=cfg["lambda_tv"],
        lambda_entropy=cfg["lambda_entropy"],
        lambda_max_usage=cfg["lambda_max_usage"],
        phi_levels=cfg["phi_levels"],
        lr=cfg["lr"],
        grad_clip=cfg["grad_clip"],
        iterations=cfg["iters"],
        seed=cfg["seed"],
        checkpoint_every=cfg["checkpoint_every"],
    )
    style = load_corpus(cfg["style_dir"], (tc.patch_h, tc.patch_w))
    content = load_corpus(cfg["content_dir"], (tc.patch_h, tc.patch_w)) if guided else None
    result = train(tc, style, content, out_dir=out)
    artifacts = [result.metrics_path] + sorted(result.checkpoint_dir.rglob("*"))
    _write_manifest(out, "train", cfg, [p for p in artifacts if p.is_file()])
    print(f"checkpoint: {result.checkpoint_dir}")
    return 0


INFER_DEFAULTS = dict(
    checkpoint=None, style_dir=None, content=None, k=8, seed=0, out="infer_out"
)


def cmd_infer(args) -> int:
    cfg = _effective(args, INFER_DEFAULTS)
    if not cfg["checkpoint"] or not cfg["style_dir"]:
        raise UsageError("infer requires --checkpoint and --style-dir")
    state, tc = load_checkpoint(cfg["checkpoint"])
    gen = state.generator.eval()
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(cfg["seed"])
    style = load_corpus(cfg["style_dir"], (tc.patch_h, tc.patch_w))
    mset = sample_memory_set(style, cfg["k"], tc.patch_h, tc.patch_w, rng)
    content = None
    if tc.guided:
        if not cfg["content"]:
            raise UsageError("this checkpoint is guided: provide --content")
        content = torch.from_numpy(load_image(cfg["content"]))
        content = _fit_content(content, tc.patch_h, tc.patch_w)
    with torch.no_grad():
        result = gen(mset.templates, content=None if content is None else content.unsqueeze(0))
    from .generator import colorize_weights

    save_png(result.refined[0], out / "refined.png")
    save_png(result.collage[0], out / "collage.png")
    save_png(colorize_weights(result.weights, seed=cfg["seed"]), out / "weights.png")
    (out / "provenance.json").write_text(json.dumps(mset.source_ids, indent=1))
    _write_manifest(
        out,
        "infer",
        cfg,
        [out / n for n in ("refined.png", "collage.png", "weights.png", "provenance.json")],
    )
    print(f"wrote {out}/refined.png")
    return 0


def _fit_content(content: torch.Tensor, h: int, w: int) -> torch.Tensor:
    """Center-crop (after upscale if needed) to exactly (h, w)."""
    from PIL import Image as PILImage

    from .data import to_uint8, to_unit_range

    _, ch, cw = content.shape
    if ch < h or cw < w:
        scale = max(h / ch, w / cw)
        pil = PILImage.fromarray(to_uint8(content.numpy()).transpose(1, 2, 0))
        pil = pil.resize((max(w, round(cw * scale)), max(h, round(ch * scale))), PILImage.BILINEAR)
        content = torch.from_numpy(to_unit_range(np.asarray(pil).transpose(2, 0, 1)))
        _, ch, cw = content.shape
    y0, x0 = (ch - h) // 2, (cw - w) // 2
    return content[:, y0 : y0 + h, x0 : x0 + w]


ROLLOUT_DEFAULTS = dict(
    checkpoint=None,
    style_dir=None,
    content=None,
    width=None,
    height=None,
    tile=384,
    overlap=64,
    k=8,
    seed=0,
    memory_mode="shared",
    out="rollout_out",
)


def cmd_rollout(args) -> int:
    cfg = _effective(args, ROLLOUT_DEFAULTS)
    if not cfg["checkpoint"] or not cfg["style_dir"]:
        raise UsageError("rollout requires --checkpoint and --style-dir")
    state, tc = load_checkpoint(cfg["checkpoint"])
    gen = state.generator.eval()
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)

    content = None
    if cfg["content"]:
        content = torch.from_numpy(load_image(cfg["content"]))
        out_h, out_w = content.shape[-2:]
    elif cfg["width"] and cfg["height"]:
        out_h, out_w = cfg["height"], cfg["width"]
    else:
        raise UsageError("rollout needs --content or --width/--height")
    if tc.guided and content is None:
        raise UsageError("this checkpoint is guided: provide --content")

    tile = cfg["tile"]
    if tile % (1 << tc.gen_depth):
        raise UsageError(f"--tile must be divisible by {1 << tc.gen_depth}")
    plan = plan_tiles(out_h, out_w, tile=tile, overlap=cfg["overlap"])
    style = load_corpus(cfg["style_dir"], (tile, tile))
    memory = None
    if cfg["memory_mode"] == "global":
        big_style = load_corpus(cfg["style_dir"], (out_h, out_w))
        mset = sample_memory_set(
            big_style, cfg["k"], out_h, out_w, np.random.default_rng(cfg["seed"])
        )
        memory = mset.templates
    result = render_tiled(
        gen,
        plan,
        style=style,
        content=content,
        memory=memory,
        k=cfg["k"],
        seed=cfg["seed"],
        memory_mode=cfg["memory_mode"] if memory is None else "shared",
    )
    save_png(result.refined, out / "refined.png")
    save_png(result.collage, out / "collage.png")
    save_png(result.weights_rgb, out / "weights.png")
    _write_manifest(
        out, "rollout", cfg, [out / n for n in ("refined.png", "collage.png", "weights.png")]
    )
    print(f"wrote {out}/refined.png ({out_h}x{out_w}, {len(plan.tiles)} tiles)")
    return 0


SAMPLE_DEFAULTS = dict(style_dir=None, k=8, size=256, seed=0, out="sample_out")


def cmd_sample(args) -> int:
    cfg = _effective(args, SAMPLE_DEFAULTS)
    if not cfg["style_dir"]:
        raise UsageError("sample requires --style-dir")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    style = load_corpus(cfg["style_dir"], (cfg["size"], cfg["size"]))
    mset = sample_memory_set(
        style, cfg["k"], cfg["size"], cfg["size"], np.random.default_rng(cfg["seed"])
    )
    paths = []
    for i in range(mset.k):
        p = out / f"template_{i:02d}.png"
        save_png(mset.templates[i], p)
        paths.append(p)
    (out / "provenance.json").write_text(json.dumps(mset.source_ids, indent=1))
    _write_manifest(out, "sample", cfg, paths + [out / "provenance.json"])
    print(f"wrote {mset.k} templates to {out}")
    return 0


SERVE_DEFAULTS = dict(host="127.0.0.1", port=8000, session_ttl=1800, ui_dir=None)


def _parse_named_paths(items: Optional[list[str]], what: str) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--{what} expects name=path, got {item!r}")
        name, path = item.split("=", 1)
        out[name] = path
    return out


def cmd_serve(args) -> int:
    import uvicorn

    from .service import AssetRegistry, create_app

    cfg = _effective(args, SERVE_DEFAULTS)
    checkpoints = _parse_named_paths(args.checkpoint, "checkpoint")
    corpora = _parse_named_paths(args.corpus, "corpus")
    if not checkpoints or not corpora:
        raise UsageError("serve requires at least one --checkpoint and --corpus")
    registry = AssetRegistry.from_paths(checkpoints, corpora)
    app = create_app(registry, session_ttl_s=cfg["session_ttl"], ui_dir=cfg["ui_dir"])
    uvicorn.run(app, host=cfg["host"], port=cfg["port"], log_level="info")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="setcollage", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command")

    def add(name, func, defaults, setup):
        p = sub.add_parser(name, prog=f"setcollage {name}")
        p.set_defaults(func=func, command=name)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE")
        setup(p)
        return p

    def train_opts(p):
        p.add_argument("--style-dir")
        p.add_argument("--content-dir")
        p.add_argument("--out")
        p.add_argument("--iters", type=int)
        p.add_argument("--size", type=int)
        p.add_argument("--batch", type=int)
        p.add_argument("--k-min", type=int)
        p.add_argument("--k-max", type=int)
        p.add_argument("--depth", type=int)
        p.add_argument("--base-channels", type=int)
        p.add_argument("--disc-depth", type=int)
        p.add_argument("--disc-base-channels", type=int)
        p.add_argument("--heads", type=int)
        p.add_argument("--lambda-content", type=float)
        p.add_argument("--lambda-tv", type=float)
        p.add_argument("--lambda-entropy", type=float)
        p.add_argument("--lambda-max-usage", type=float)
        p.add_argument("--phi-levels", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--warping", action="store_const", const=True)
        p.add_argument("--no-norm", action="store_const", const=True)
        p.add_argument("--grad-clip", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--checkpoint-every", type=int)

    def infer_opts(p):
        p.add_argument("--checkpoint")
        p.add_argument("--style-dir")
        p.add_argument("--content")
        p.add_argument("--k", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")

    def rollout_opts(p):
        p.add_argument("--checkpoint")
        p.add_argument("--style-dir")
        p.add_argument("--content")
        p.add_argument("--width", type=int)
        p.add_argument("--height", type=int)
        p.add_argument("--tile", type=int)
        p.add_argument("--overlap", type=int)
        p.add_argument("--k", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--memory-mode", choices=["shared", "per_tile", "global"])
        p.add_argument("--out")

    def sample_opts(p):
        p.add_argument("--style-dir")
        p.add_argument("--k", type=int)
        p.add_argument("--size", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")

    def serve_opts(p):
        p.add_argument("--checkpoint", action="append", metavar="NAME=PATH")
        p.add_argument("--corpus", action="append", metavar="NAME=PATH")
        p.add_argument("--host")
        p.add_argument("--port", type=int)
        p.add_argument("--session-ttl", type=int)
        p.add_argument("--ui-dir")

    add("train", cmd_train, TRAIN_DEFAULTS, train_opts)
    add("infer", cmd_infer, INFER_DEFAULTS, infer_opts)
    add("rollout", cmd_rollout, ROLLOUT_DEFAULTS, rollout_opts)
    add("sample", cmd_sample, SAMPLE_DEFAULTS, sample_opts)
    add("serve", cmd_serve, SERVE_DEFAULTS, serve_opts)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            return 1
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure contract: exit 2
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
