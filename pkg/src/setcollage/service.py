"""HTTP API for interactive collage exploration.

Sessions hold an artist's current template set: create one against a
registered checkpoint and style corpus, re-sample chosen templates, upload a
content image, and render. Sessions live in memory with idle eviction; every
response carries the seed lineage so any state is reproducible headlessly.

Endpoints (JSON unless noted):
    GET  /assets
    POST /sessions                      {checkpoint, corpus, k, seed}
    GET  /sessions/{id}
    POST /sessions/{id}/resample        {indices: [..] | "all", seed}
    PUT  /sessions/{id}/content         multipart image upload
    POST /sessions/{id}/infer
    GET  /sessions/{id}/artifacts/{name}    PNG bytes
    GET  /sessions/{id}/templates/{index}   PNG bytes
Errors are JSON {code, message}.
"""

from __future__ import annotations

import base64
import io
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from fastapi import FastAPI, File, Request, UploadFile
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from PIL import Image
from torch import Tensor

from .checkpoint import load_checkpoint
from .data import Corpus, load_corpus, sample_memory_set, to_uint8, to_unit_range
from .generator import Generator, colorize_weights
from .rollout import plan_tiles, render_tiled
from .trainer import TrainConfig

DEFAULT_SESSION_TTL_S = 30 * 60
THUMBNAIL_PX = 96


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def _not_found(what: str, name: str) -> ApiError:
    return ApiError(404, "not_found", f"unknown {what}: {name}")


def _invalid(message: str) -> ApiError:
    return ApiError(422, "invalid", message)


@dataclass
class CheckpointAsset:
    name: str
    path: Path
    cfg: TrainConfig
    generator: Generator


@dataclass
class CorpusAsset:
    name: str
    path: Path
    corpus: Corpus


class AssetRegistry:
    """Immutable snapshots of the checkpoints and corpora served."""

    def __init__(self, checkpoints: dict[str, CheckpointAsset], corpora: dict[str, CorpusAsset]):
        self.checkpoints = checkpoints
        self.corpora = corpora

    @classmethod
    def from_paths(
        cls, checkpoints: dict[str, str | Path], corpora: dict[str, str | Path]
    ) -> "AssetRegistry":
        cps = {}
        for name, path in checkpoints.items():
            state, cfg = load_checkpoint(path)
            state.generator.eval()
            for p in state.generator.parameters():
                p.requires_grad_(False)
            cps[name] = CheckpointAsset(name, Path(path), cfg, state.generator)
        corps = {}
        for name, path in corpora.items():
            # patch size is checkpoint-specific; load at a small floor and let
            # sampling upscale on demand via the largest registered patch
            patch = max(
                [(c.cfg.patch_h, c.cfg.patch_w) for c in cps.values()], default=(64, 64)
            )
            corps[name] = CorpusAsset(name, Path(path), load_corpus(path, patch))
        return cls(cps, corps)


def _png_bytes(img: Tensor | np.ndarray) -> bytes:
    if isinstance(img, Tensor):
        img = img.detach().cpu().numpy()
    buf = io.BytesIO()
    Image.fromarray(to_uint8(img).transpose(1, 2, 0)).save(buf, format="PNG")
    return buf.getvalue()


def _thumb_b64(img: np.ndarray | Tensor, px: int = THUMBNAIL_PX) -> str:
    if isinstance(img, Tensor):
        img = img.detach().cpu().numpy()
    pil = Image.fromarray(to_uint8(img).transpose(1, 2, 0))
    pil.thumbnail((px, px))
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


@dataclass
class Session:
    id: str
    checkpoint: str
    corpus: str
    k: int
    memory: Tensor  # (K, 3, patch, patch)
    provenance: list[str]
    seed_lineage: list[dict] = field(default_factory=list)
    content: Optional[Tensor] = None  # (3, H, W), H/W >= patch
    usage: Optional[list[float]] = None
    artifacts: dict[str, bytes] = field(default_factory=dict)
    last_access: float = field(default_factory=time.monotonic)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


class SessionStore:
    def __init__(self, ttl_s: float = DEFAULT_SESSION_TTL_S):
        self.ttl_s = ttl_s
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def put(self, session: Session) -> None:
        with self._lock:
            self._purge()
            self._sessions[session.id] = session

    def get(self, session_id: str) -> Session:
        with self._lock:
            self._purge()
            session = self._sessions.get(session_id)
            if session is None:
                raise _not_found("session", session_id)
            session.last_access = time.monotonic()
            return session

    def _purge(self) -> None:
        cutoff = time.monotonic() - self.ttl_s
        for sid in [s for s, v in self._sessions.items() if v.last_access < cutoff]:
            del self._sessions[sid]


def create_app(
    registry: AssetRegistry,
    session_ttl_s: float = DEFAULT_SESSION_TTL_S,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="setcollage", docs_url=None, redoc_url=None)
    store = SessionStore(session_ttl_s)

    @app.exception_handler(ApiError)
    async def handle_api_error(_req: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status, content={"code": exc.code, "message": exc.message}
        )

    def _checkpoint(name: str) -> CheckpointAsset:
        if name not in registry.checkpoints:
            raise _not_found("checkpoint", name)
        return registry.checkpoints[name]

    def _corpus(name: str) -> CorpusAsset:
        if name not in registry.corpora:
            raise _not_found("corpus", name)
        return registry.corpora[name]

    def _session_view(session: Session) -> dict:
        return {
            "id": session.id,
            "checkpoint": session.checkpoint,
            "corpus": session.corpus,
            "k": session.k,
            "seed_lineage": session.seed_lineage,
            "templates": [
                {
                    "index": i,
                    "provenance": session.provenance[i],
                    "thumbnail": _thumb_b64(session.memory[i]),
                }
                for i in range(session.k)
            ],
            "content": None
            if session.content is None
            else {"height": session.content.shape[-2], "width": session.content.shape[-1]},
            "usage": session.usage,
            "artifacts": sorted(session.artifacts),
        }

    @app.get("/assets")
    def list_assets():
        return {
            "checkpoints": [
                {
                    "name": c.name,
                    "patch_h": c.cfg.patch_h,
                    "patch_w": c.cfg.patch_w,
                    "depth": c.cfg.gen_depth,
                    "guided": c.cfg.guided,
                    "warping": c.cfg.warping,
                    "loss_weights": {
                        "content": c.cfg.lambda_content,
                        "tv": c.cfg.lambda_tv,
                        "entropy": c.cfg.lambda_entropy,
                        "max_usage": c.cfg.lambda_max_usage,
                    },
                }
                for c in sorted(registry.checkpoints.values(), key=lambda c: c.name)
            ],
            "corpora": [
                {
                    "name": c.name,
                    "images": len(c.corpus),
                    "ids": c.corpus.ids,
                    "thumbnails": [_thumb_b64(img) for img in c.corpus.images],
                }
                for c in sorted(registry.corpora.values(), key=lambda c: c.name)
            ],
        }

    @app.post("/sessions")
    def create_session(body: dict):
        ckpt = _checkpoint(str(body.get("checkpoint", "")))
        corpus = _corpus(str(body.get("corpus", "")))
        k = body.get("k", 1)
        seed = int(body.get("seed", 0))
        if not isinstance(k, int) or k < 1:
            raise _invalid(f"k must be a positive integer, got {k!r}")
        mset = sample_memory_set(
            corpus.corpus, k, ckpt.cfg.patch_h, ckpt.cfg.patch_w, np.random.default_rng(seed)
        )
        session = Session(
            id=uuid.uuid4().hex,
            checkpoint=ckpt.name,
            corpus=corpus.name,
            k=k,
            memory=mset.templates,
            provenance=mset.source_ids,
            seed_lineage=[{"op": "create", "seed": seed}],
        )
        store.put(session)
        return _session_view(session)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return _session_view(store.get(session_id))

    @app.post("/sessions/{session_id}/resample")
    def resample_templates(session_id: str, body: dict):
        session = store.get(session_id)
        ckpt = _checkpoint(session.checkpoint)
        corpus = _corpus(session.corpus)
        indices = body.get("indices", "all")
        seed = int(body.get("seed", 0))
        if indices == "all":
            indices = list(range(session.k))
        if not isinstance(indices, list) or not all(isinstance(i, int) for i in indices):
            raise _invalid("indices must be a list of integers or 'all'")
        if any(i < 0 or i >= session.k for i in indices):
            raise _invalid(f"index out of range for K={session.k}")
        with session.lock:
            if indices:
                rng = np.random.default_rng(seed)
                fresh = sample_memory_set(
                    corpus.corpus, len(indices), ckpt.cfg.patch_h, ckpt.cfg.patch_w, rng
                )
                for slot, (i, tpl, pid) in enumerate(
                    zip(indices, fresh.templates, fresh.source_ids)
                ):
                    session.memory[i] = tpl
                    session.provenance[i] = pid
            session.seed_lineage.append(
                {"op": "resample", "seed": seed, "indices": indices}
            )
        return _session_view(session)

    @app.put("/sessions/{session_id}/content")
    def upload_content(session_id: str, file: UploadFile = File(...)):
        session = store.get(session_id)
        ckpt = _checkpoint(session.checkpoint)
        try:
            with Image.open(io.BytesIO(file.file.read())) as im:
                rgb = np.asarray(im.convert("RGB")).transpose(2, 0, 1)
        except Exception as exc:
            raise _invalid(f"undecodable image: {exc}") from exc
        content = torch.from_numpy(to_unit_range(rgb))
        ph, pw = ckpt.cfg.patch_h, ckpt.cfg.patch_w
        if content.shape[-2] < ph or content.shape[-1] < pw:
            pil = Image.fromarray(rgb.transpose(1, 2, 0))
            scale = max(ph / content.shape[-2], pw / content.shape[-1])
            new = (
                max(pw, round(pil.width * scale)),
                max(ph, round(pil.height * scale)),
            )
            content = torch.from_numpy(
                to_unit_range(np.asarray(pil.resize(new, Image.BILINEAR)).transpose(2, 0, 1))
            )
        with session.lock:
            session.content = content
            session.seed_lineage.append({"op": "content", "name": file.filename})
        return _session_view(session)

    @app.post("/sessions/{session_id}/infer")
    def infer_session(session_id: str):
        session = store.get(session_id)
        ckpt = _checkpoint(session.checkpoint)
        cfg = ckpt.cfg
        ph, pw = cfg.patch_h, cfg.patch_w
        with session.lock:
            content = session.content
            if cfg.guided and content is None:
                # exploration default: neutral gray guidance
                content = torch.zeros(3, ph, pw)
            if not cfg.guided:
                content = None

            if content is not None and tuple(content.shape[-2:]) != (ph, pw) and (
                content.shape[-2] > ph or content.shape[-1] > pw
            ):
                # large content: fully-convolutional roll-out with the session
                # templates upscaled is not meaningful; tile with shared memory
                plan = plan_tiles(
                    content.shape[-2],
                    content.shape[-1],
                    tile=ph,
                    overlap=max(2, ph // 4),
                )
                big = render_tiled(
                    ckpt.generator,
                    plan,
                    style=_corpus(session.corpus).corpus,
                    content=content,
                    k=session.k,
                    seed=session.seed_lineage[0]["seed"],
                )
                refined, collage = big.refined, big.collage
                weights_rgb, weights = big.weights_rgb, big.weights
            else:
                with torch.no_grad():
                    out = ckpt.generator(
                        session.memory,
                        content=None if content is None else content.unsqueeze(0),
                    )
                refined, collage = out.refined[0], out.collage[0]
                weights = out.weights
                weights_rgb = colorize_weights(weights, seed=0)

            total = weights.sum(dim=(-2, -1))
            usage = (total / weights.shape[-2] / weights.shape[-1]).tolist()
            session.usage = usage
            session.artifacts = {
                "refined": _png_bytes(refined),
                "collage": _png_bytes(collage),
                "weights": _png_bytes(weights_rgb),
            }
        view = _session_view(session)
        view["artifact_urls"] = {
            name: f"/sessions/{session.id}/artifacts/{name}" for name in session.artifacts
        }
        return view

    @app.get("/sessions/{session_id}/artifacts/{name}")
    def get_artifact(session_id: str, name: str):
        session = store.get(session_id)
        if name not in session.artifacts:
            raise _not_found("artifact", name)
        return Response(content=session.artifacts[name], media_type="image/png")

    @app.get("/sessions/{session_id}/templates/{index}")
    def get_template(session_id: str, index: int):
        session = store.get(session_id)
        if index < 0 or index >= session.k:
            raise _not_found("template", str(index))
        return Response(content=_png_bytes(session.memory[index]), media_type="image/png")

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
