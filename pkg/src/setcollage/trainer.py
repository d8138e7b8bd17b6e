"""Alternating adversarial optimization with metrics and checkpointing.

Every step does one discriminator update (real patches vs the generated
image, detached) followed by one generator update on the combined objective.
Runs are fully determined by (seed, config, corpora) in single-worker mode.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch import Tensor

from . import losses as L
from .checkpoint import save_checkpoint
from .data import Batch, Corpus, make_minibatch
from .discriminator import PatchDiscriminator
from .generator import Generator, GeneratorConfig
from .losses import LossReport, LossWeights

log = logging.getLogger(__name__)

METRICS_FIELDS = [
    "iteration",
    "adv_d",
    "adv_g",
    "content",
    "entropy",
    "tv",
    "max_usage",
    "total_g",
    "wall_ms",
]


class TrainingDiverged(RuntimeError):
    """A loss term went non-finite; carries the offending term names."""

    def __init__(self, terms: list[str], iteration: int):
        super().__init__(
            f"non-finite loss at iteration {iteration}: {', '.join(terms)}"
        )
        self.terms = terms
        self.iteration = iteration


@dataclass
class TrainConfig:
    patch_h: int = 256
    patch_w: int = 256
    batch_size: int = 6
    k_min: int = 2
    k_max: int = 12
    gen_depth: int = 5
    gen_base_channels: int = 48
    disc_depth: int = 6
    disc_base_channels: int = 128
    heads: int = 4
    guided: bool = False
    warping: bool = False
    norm: bool = True
    attn_min_level: int = 0
    disc_activation: str = "lrelu"
    lambda_content: float = 10.0
    lambda_tv: float = 1.0
    lambda_entropy: float = 0.5
    lambda_max_usage: float = 1.0
    phi_levels: int = 2
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    grad_clip: float = 0.0  # 0 disables clipping
    iterations: int = 1000
    seed: int = 0
    checkpoint_every: int = 0  # 0 = final checkpoint only

    def __post_init__(self):
        if self.patch_h % (1 << self.gen_depth) or self.patch_w % (1 << self.gen_depth):
            raise ValueError(
                f"patch {self.patch_h}x{self.patch_w} must be divisible by "
                f"2^gen_depth={1 << self.gen_depth}"
            )
        if self.patch_h % (1 << self.disc_depth) or self.patch_w % (1 << self.disc_depth):
            raise ValueError("patch size must be divisible by 2^disc_depth")
        for name in ("batch_size", "k_min", "k_max", "iterations"):
            if getattr(self, name) < (0 if name == "iterations" else 1):
                raise ValueError(f"{name} must be positive")
        if self.k_min > self.k_max:
            raise ValueError("k_min must not exceed k_max")

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            content=self.lambda_content if self.guided else 0.0,
            tv=self.lambda_tv,
            entropy=self.lambda_entropy,
            max_usage=self.lambda_max_usage,
        )

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            depth=self.gen_depth,
            base_channels=self.gen_base_channels,
            heads=self.heads,
            guided=self.guided,
            warping=self.warping,
            norm=self.norm,
            attn_min_level=self.attn_min_level,
        )

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class ModelState:
    generator: Generator
    discriminator: PatchDiscriminator
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    iteration: int
    rng: np.random.Generator
    torch_rng: Optional[Tensor] = None


@dataclass
class TrainResult:
    state: ModelState
    cfg: TrainConfig  # effective config (guided flag resolved)
    checkpoint_dir: Path
    metrics_path: Path
    reports: list[LossReport] = field(default_factory=list)


def build_models(cfg: TrainConfig) -> tuple[Generator, PatchDiscriminator]:
    """Construct both networks; call under a seeded torch rng for determinism."""
    generator = Generator(cfg.generator_config())
    discriminator = PatchDiscriminator(
        depth=cfg.disc_depth,
        base_channels=cfg.disc_base_channels,
        activation=cfg.disc_activation,
    )
    return generator, discriminator


def build_optimizers(
    generator: Generator, discriminator: PatchDiscriminator, cfg: TrainConfig
) -> tuple[torch.optim.Optimizer, torch.optim.Optimizer]:
    betas = (cfg.beta1, cfg.beta2)
    return (
        torch.optim.Adam(generator.parameters(), lr=cfg.lr, betas=betas),
        torch.optim.Adam(discriminator.parameters(), lr=cfg.lr, betas=betas),
    )


def init_state(cfg: TrainConfig) -> ModelState:
    torch.manual_seed(cfg.seed)
    generator, discriminator = build_models(cfg)
    opt_g, opt_d = build_optimizers(generator, discriminator, cfg)
    return ModelState(
        generator=generator,
        discriminator=discriminator,
        opt_g=opt_g,
        opt_d=opt_d,
        iteration=0,
        rng=np.random.default_rng(cfg.seed),
    )


def train_step(state: ModelState, batch: Batch, cfg: TrainConfig) -> LossReport:
    """One discriminator update, then one generator update, in place."""
    gen, disc = state.generator, state.discriminator
    weights = cfg.loss_weights()

    def term(name: str, fn):
        try:
            value = fn()
        except ValueError as exc:
            if "non-finite" in str(exc):
                raise TrainingDiverged([name], state.iteration) from exc
            raise
        if not torch.isfinite(value):
            raise TrainingDiverged([name], state.iteration)
        return value

    try:
        out = gen(batch.memory, content=batch.content)
    except ValueError as exc:
        if "non-finite" in str(exc):
            raise TrainingDiverged(["generator_forward"], state.iteration) from exc
        raise
    fake = out.refined

    state.opt_d.zero_grad(set_to_none=True)
    adv_d = term(
        "adv_d", lambda: L.adversarial_loss_d(disc(batch.real_style), disc(fake.detach()))
    )
    adv_d.backward()
    if cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(disc.parameters(), cfg.grad_clip)
    state.opt_d.step()

    state.opt_g.zero_grad(set_to_none=True)
    adv_g = term("adv_g", lambda: L.adversarial_loss_g(disc(fake)))
    content = (
        term("content", lambda: L.content_loss(batch.content, fake, cfg.phi_levels))
        if batch.content is not None
        else fake.new_zeros(())
    )
    entropy = term("entropy", lambda: L.entropy_loss(out.weights))
    tv = term("tv", lambda: L.tv_loss(out.weights))
    max_usage = term("max_usage", lambda: L.max_usage_loss(out.weights))
    total = term(
        "total_g",
        lambda: L.generator_total_loss(adv_g, content, entropy, tv, max_usage, weights),
    )

    report = LossReport(
        adv_d=adv_d.item(),
        adv_g=adv_g.item(),
        content=content.item(),
        entropy=entropy.item(),
        tv=tv.item(),
        max_usage=max_usage.item(),
        total_g=total.item(),
    )
    total.backward()
    if cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(gen.parameters(), cfg.grad_clip)
    state.opt_g.step()

    state.iteration += 1
    return report


def train(
    cfg: TrainConfig,
    style: Corpus,
    content: Optional[Corpus] = None,
    out_dir: str | Path = "run",
    log_every: int = 50,
) -> TrainResult:
    """Full training loop; guided mode is active iff a content corpus is given."""
    cfg = replace(cfg, guided=content is not None)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.csv"
    state = init_state(cfg)

    reports: list[LossReport] = []
    with open(metrics_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_FIELDS)
        for _ in range(cfg.iterations):
            t0 = time.perf_counter()
            batch = make_minibatch(
                style,
                content,
                cfg.batch_size,
                (cfg.k_min, cfg.k_max),
                cfg.patch_h,
                cfg.patch_w,
                state.rng,
            )
            report = train_step(state, batch, cfg)
            wall_ms = (time.perf_counter() - t0) * 1000.0
            writer.writerow(
                [state.iteration]
                + [f"{getattr(report, k):.6g}" for k in METRICS_FIELDS[1:-1]]
                + [f"{wall_ms:.1f}"]
            )
            f.flush()
            reports.append(report)
            if log_every and state.iteration % log_every == 0:
                log.info(
                    "iter %d: adv_d=%.4f adv_g=%.4f content=%.4f total_g=%.4f",
                    state.iteration,
                    report.adv_d,
                    report.adv_g,
                    report.content,
                    report.total_g,
                )
            if (
                cfg.checkpoint_every
                and state.iteration % cfg.checkpoint_every == 0
                and state.iteration < cfg.iterations
            ):
                save_checkpoint(state, cfg, out / f"ckpt_{state.iteration:06d}")

    final = save_checkpoint(state, cfg, out / "checkpoint")
    return TrainResult(
        state=state,
        cfg=cfg,
        checkpoint_dir=final,
        metrics_path=metrics_path,
        reports=reports,
    )
