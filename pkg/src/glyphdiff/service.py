"""HTTP inference service: generation plus metadata endpoints.

The loaded model, schedule, encoder, and manifest travel together as an
immutable snapshot; hot-swapping a checkpoint replaces the snapshot
atomically, so in-flight requests finish on the one they started with.
"""

from __future__ import annotations

import base64
import string
import time
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException, Request, Response
from pydantic import BaseModel

from . import checkpoint as ckpt
from .dataset import keywords_to_sentence, load_manifest, manifest_keyword_counts
from .diffusion import image_to_png_bytes, load_denoiser, sample_ddim, sample_ddpm
from .schedule import NoiseSchedule
from .text import ConditioningPair, TextEncoder, build_encoder
from .unet import UNet


class GenerationRequest(BaseModel):
    letters: str
    keywords: list[str]
    seed: int = 0
    method: str = "ddim"
    steps: int = 100
    n_variants: int = 1


@dataclass
class ModelSnapshot:
    """Everything a /generate call needs, immutable once built."""

    model: UNet
    schedule: NoiseSchedule
    encoder: TextEncoder
    checkpoint_hash: str
    keyword_counts: list[tuple[str, int]] = field(default_factory=list)


def load_snapshot(checkpoint_path, manifest_path=None, encoder: TextEncoder | None = None) -> ModelSnapshot:
    model, schedule = load_denoiser(checkpoint_path)
    header, _ = ckpt.load_checkpoint(checkpoint_path)
    if encoder is None:
        encoder = build_encoder(header.get("encoder", {"kind": "bert"}))
    counts = []
    if manifest_path is not None:
        counts = manifest_keyword_counts(load_manifest(manifest_path))
    return ModelSnapshot(
        model=model,
        schedule=schedule,
        encoder=encoder,
        checkpoint_hash=ckpt.file_digest(checkpoint_path),
        keyword_counts=counts,
    )


def _validate(req: GenerationRequest, schedule_T: int) -> None:
    def bad(fieldname: str, message: str):
        raise HTTPException(status_code=400, detail={"field": fieldname, "message": message})

    if not req.letters:
        bad("letters", "must be non-empty")
    invalid = [c for c in req.letters if c not in string.ascii_uppercase]
    if invalid:
        bad("letters", f"only capitals A-Z allowed, got {invalid!r}")
    if not req.keywords or not any(k.strip() for k in req.keywords):
        bad("keywords", "must be non-empty")
    if any("," in k for k in req.keywords):
        bad("keywords", "keywords must not contain commas")
    if req.method not in ("ddim", "ddpm"):
        bad("method", f"must be 'ddim' or 'ddpm', got {req.method!r}")
    if req.steps < 1 or req.steps > schedule_T:
        bad("steps", f"must be in [1, {schedule_T}]")
    if req.method == "ddim" and schedule_T % req.steps != 0:
        bad("steps", f"must divide T={schedule_T} with a uniform stride")
    if req.n_variants < 1:
        bad("n_variants", "must be >= 1")


def generate_images(snap: ModelSnapshot, req: GenerationRequest) -> list[tuple[str, int, bytes]]:
    """(letter, variant, png bytes) per image; deterministic per (request, checkpoint).

    The impression sentence is encoded once per request; variant i draws
    its sampling noise from seed+i.
    """
    sentence = keywords_to_sentence([k.strip() for k in req.keywords if k.strip()])
    imp = snap.encoder.embed_impressions(sentence)
    out = []
    for letter in req.letters:
        pair = ConditioningPair(letter=snap.encoder.embed_letter(letter), impressions=imp,
                                encoder_hash=snap.encoder.checkpoint_hash)
        if req.method == "ddim":
            batch = sample_ddim(snap.model, snap.schedule, pair, req.n_variants,
                                steps=req.steps, seed=req.seed)
        else:
            batch = sample_ddpm(snap.model, snap.schedule, pair, req.n_variants, seed=req.seed)
        for v in range(req.n_variants):
            out.append((letter, v, image_to_png_bytes(batch[v])))
    return out


def create_app(snapshot: ModelSnapshot | None = None) -> FastAPI:
    app = FastAPI(title="glyphdiff")
    app.state.snapshot = snapshot

    def current() -> ModelSnapshot:
        snap = app.state.snapshot
        if snap is None:
            raise HTTPException(status_code=503, detail="model not loaded")
        return snap

    @app.get("/health")
    def health():
        snap = app.state.snapshot
        if snap is None:
            return {"status": "loading", "checkpoint_hash": None, "schedule_T": None, "encoder_hash": None}
        return {
            "status": "ready",
            "checkpoint_hash": snap.checkpoint_hash,
            "schedule_T": snap.schedule.T,
            "encoder_hash": snap.encoder.checkpoint_hash,
        }

    @app.get("/keywords")
    def keywords(filter: str = ""):
        snap = current()
        if not snap.keyword_counts:
            raise HTTPException(status_code=503, detail="manifest not loaded")
        items = snap.keyword_counts
        if filter:
            items = [(k, n) for k, n in items if filter in k]
        return {"keywords": [{"keyword": k, "n_fonts": n} for k, n in items]}

    @app.post("/generate")
    def generate(req: GenerationRequest, request: Request):
        snap = current()
        _validate(req, snap.schedule.T)
        started = time.monotonic()
        images = [
            {"letter": letter, "variant": v, "png_base64": base64.b64encode(png).decode()}
            for letter, v, png in generate_images(snap, req)
        ]

        if request.headers.get("accept") == "image/png":
            if len(images) != 1:
                raise HTTPException(status_code=406, detail="image/png requires exactly one image")
            return Response(content=base64.b64decode(images[0]["png_base64"]), media_type="image/png")
        return {
            "request": req.model_dump(),
            "images": images,
            "checkpoint_hash": snap.checkpoint_hash,
            "wall_time_ms": round((time.monotonic() - started) * 1000.0, 3),
        }

    return app


def serve(checkpoint_path, manifest_path=None, host: str = "127.0.0.1", port: int = 8000,
          encoder: TextEncoder | None = None) -> None:
    import uvicorn

    app = create_app(None)
    app.state.snapshot = load_snapshot(checkpoint_path, manifest_path, encoder)
    uvicorn.run(app, host=host, port=port)
