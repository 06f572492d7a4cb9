"""HTTP facade for interactive editing sessions.

Sessions are in-memory with a TTL and an LRU capacity cap; per-session
mutation is serialized by a lock, and the loaded checkpoint is shared
read-only across all handlers. Edits are deterministic unless the client
opts into sampling with ?sample=true.
"""

from __future__ import annotations

import base64
import io
import threading
import time
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image
from pydantic import BaseModel

from .editor import TimGanModel
from .checkpoint import load_checkpoint
from .scenegen import render_scene, random_scene
import random

SESSION_TTL_SECONDS = 3600
MAX_SESSIONS = 64


class ApiError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        self.message = message


def _png_b64_encode(img: np.ndarray, mode: str = "RGB") -> str:
    """img: (3, H, W) float in [0,1] for RGB, or (H, W) for grayscale."""
    if mode == "RGB":
        arr = np.round(img.transpose(1, 2, 0) * 255.0).astype(np.uint8)
    else:
        arr = np.round(img * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _png_b64_decode(data: str, canvas: int) -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
        with Image.open(io.BytesIO(raw)) as im:
            im = im.convert("RGB")
            if im.size != (canvas, canvas):
                raise ApiError(400, f"image must be {canvas}x{canvas}, got {im.size[0]}x{im.size[1]}")
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except ApiError:
        raise
    except Exception as exc:
        raise ApiError(400, f"undecodable PNG payload: {exc}") from exc
    return arr.transpose(2, 0, 1)


def _upsample_mask(mask: np.ndarray, canvas: int) -> np.ndarray:
    scale = canvas // mask.shape[-1]
    return np.kron(mask[0], np.ones((scale, scale), dtype=mask.dtype))


@dataclass
class HistoryStep:
    instruction: Optional[str]
    image: np.ndarray
    mask_b64: Optional[str]
    tokens: list[str]
    attn_where: list[float]
    attn_how: list[float]
    alpha: list[list[float]]


@dataclass
class Session:
    id: str
    history: list[HistoryStep]
    created_at: float
    last_used: float
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def current(self) -> np.ndarray:
        return self.history[-1].image


class SessionStore:
    def __init__(self, ttl: float = SESSION_TTL_SECONDS, capacity: int = MAX_SESSIONS):
        self.ttl = ttl
        self.capacity = capacity
        self._sessions: OrderedDict[str, Session] = OrderedDict()
        self._lock = threading.Lock()

    def _evict_expired(self, now: float) -> None:
        dead = [sid for sid, s in self._sessions.items() if now - s.last_used > self.ttl]
        for sid in dead:
            del self._sessions[sid]

    def create(self, image: np.ndarray) -> Session:
        now = time.time()
        with self._lock:
            self._evict_expired(now)
            if len(self._sessions) >= self.capacity:
                # LRU eviction; refuse only if everything is fresh and in use
                oldest = next(iter(self._sessions))
                if now - self._sessions[oldest].last_used > 1.0:
                    del self._sessions[oldest]
                else:
                    raise ApiError(413, "session capacity reached")
            sid = uuid.uuid4().hex
            step = HistoryStep(None, image, None, [], [], [], [])
            session = Session(id=sid, history=[step], created_at=now, last_used=now)
            self._sessions[sid] = session
            return session

    def get(self, sid: str) -> Session:
        now = time.time()
        with self._lock:
            self._evict_expired(now)
            session = self._sessions.get(sid)
            if session is None:
                raise ApiError(404, f"unknown session {sid}")
            session.last_used = now
            self._sessions.move_to_end(sid)
            return session


class CreateSessionBody(BaseModel):
    random_scene: Optional[int] = None
    png: Optional[str] = None


class EditBody(BaseModel):
    instruction: str


def _edit_response(session: Session, step_index: int) -> dict:
    step = session.history[step_index]
    return {
        "image_b64": _png_b64_encode(step.image),
        "mask_b64": step.mask_b64,
        "tokens": step.tokens,
        "attn_where": step.attn_where,
        "attn_how": step.attn_how,
        "alpha": step.alpha,
        "step": step_index,
    }


def create_app(checkpoint: str | Path | TimGanModel, frontend_dir: Optional[str | Path] = None) -> FastAPI:
    model = checkpoint if isinstance(checkpoint, TimGanModel) else load_checkpoint(checkpoint)
    model.eval()
    model.config.hard_eval = True
    canvas = model.config.canvas
    store = SessionStore()
    app = FastAPI(title="timgan editing service")

    @app.exception_handler(ApiError)
    async def api_error_handler(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.code, content={"error": exc.message, "code": exc.code})

    @app.get("/api/health")
    def health():
        return {"status": "ok", "variant": model.config.variant}

    @app.post("/api/session")
    def create_session(body: CreateSessionBody):
        if body.png is not None:
            image = _png_b64_decode(body.png, canvas)
        elif body.random_scene is not None:
            scene = random_scene(random.Random(body.random_scene), canvas)
            image = render_scene(scene)
        else:
            raise ApiError(400, "provide either random_scene seed or png payload")
        session = store.create(image)
        return {"id": session.id, "image_b64": _png_b64_encode(image)}

    @app.post("/api/session/{sid}/edit")
    def apply_edit(sid: str, body: EditBody, sample: bool = Query(default=False)):
        if not body.instruction.strip():
            raise ApiError(422, "instruction must be non-empty")
        session = store.get(sid)
        with session.lock:
            x = torch.from_numpy(session.current)
            rng = None
            if sample:
                rng = torch.Generator().manual_seed(int(time.time_ns()) & 0x7FFFFFFF)
            with torch.no_grad():
                result = model.edit(x, body.instruction, rng=rng)
            from .text import tokenize

            ids, length = tokenize(body.instruction, model.vocab, model.config.max_len)
            tokens = [model.vocab.id_to_token[i] for i in ids[:length]]
            mask = result.mask.numpy()
            step = HistoryStep(
                instruction=body.instruction,
                image=result.y_hat.numpy(),
                mask_b64=_png_b64_encode(_upsample_mask(mask, canvas), mode="L"),
                tokens=tokens,
                attn_where=result.text.attn_where[:length].tolist(),
                attn_how=result.text.attn_how[:length].tolist(),
                alpha=result.route.alpha.tolist(),
            )
            session.history.append(step)
            return _edit_response(session, len(session.history) - 1)

    @app.post("/api/session/{sid}/undo")
    def undo(sid: str):
        session = store.get(sid)
        with session.lock:
            if len(session.history) > 1:
                session.history.pop()
            return _edit_response(session, len(session.history) - 1)

    @app.get("/api/session/{sid}/history")
    def history(sid: str):
        session = store.get(sid)
        with session.lock:
            steps = [
                {
                    "step": i,
                    "instruction": s.instruction,
                    "image_b64": _png_b64_encode(s.image),
                    "mask_b64": s.mask_b64,
                    "tokens": s.tokens,
                    "attn_where": s.attn_where,
                    "attn_how": s.attn_how,
                    "alpha": s.alpha,
                }
                for i, s in enumerate(session.history)
            ]
            return {"id": session.id, "steps": steps}

    if frontend_dir is None:
        candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        frontend_dir = candidate if candidate.is_dir() else None
    if frontend_dir is not None and Path(frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True), name="ui")
    return app
