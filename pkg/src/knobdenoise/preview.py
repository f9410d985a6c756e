"""Local preview service: sessions over loaded clips, PNG previews, and a live knob channel.

Endpoints::

    POST /sessions                         {"path": "clip.y4m" | "png_dir"} -> {"id": ...}
    GET  /sessions/{id}/meta               dims, frame count, knob state
    GET  /sessions/{id}/frames/{n}         ?knobs=a,b,c,d,e,f&mode=denoised|original|split -> PNG
    WS   /sessions/{id}/live               {"type": "knobs", "values": [6]} / {"type": "frame", "index": n}

Live replies are binary: one JSON header line, a newline, then the PNG bytes.
Errors are JSON ``{"error": {"code": ..., "message": ...}}``.
"""

from __future__ import annotations

import asyncio
import json
import secrets
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse, Response

from .engine import EngineConfig, build_profile, denoise_frame
from .errors import DenoiseError, InvariantError, MediaIOError
from .media import Clip, encode_png, frame_to_rgb8, read_png_sequence, read_y4m
from .paramnet import Knobs
from .profiler import NoiseProfile

MODES = ("denoised", "original", "split")
DEFAULT_CACHE_MB = 64.0


class PreviewError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message

    def payload(self) -> dict:
        return {"error": {"code": self.code, "message": self.message}}


class LRUBytes:
    """Byte-budgeted LRU map; the oldest entries go first once the budget is exceeded."""

    def __init__(self, max_bytes: int):
        self.max_bytes = int(max_bytes)
        self._d: OrderedDict = OrderedDict()
        self.nbytes = 0
        self._lock = threading.Lock()

    def get(self, key):
        with self._lock:
            if key not in self._d:
                return None
            self._d.move_to_end(key)
            return self._d[key]

    def put(self, key, value: bytes):
        with self._lock:
            if key in self._d:
                self.nbytes -= len(self._d.pop(key))
            if len(value) > self.max_bytes:
                return
            self._d[key] = value
            self.nbytes += len(value)
            while self.nbytes > self.max_bytes:
                _, old = self._d.popitem(last=False)
                self.nbytes -= len(old)

    def __len__(self):
        return len(self._d)

    def __contains__(self, key):
        return key in self._d


@dataclass
class Session:
    id: str
    source: str
    clip: Clip
    profile: NoiseProfile
    cache: LRUBytes
    knobs: Knobs = field(default_factory=Knobs)
    frame: int = 0
    renders: int = 0
    render_lock: threading.Lock = field(default_factory=threading.Lock)
    cfg: EngineConfig = field(default_factory=EngineConfig)

    def meta(self) -> dict:
        h, w = self.clip.shape
        return {"id": self.id, "source": self.source, "width": w, "height": h, "frames": len(self.clip),
                "frame_rate": str(self.clip.frame_rate), "knobs": list(self.knobs.as_tuple()),
                "frame": self.frame, "renders": self.renders,
                "cache": {"entries": len(self.cache), "bytes": self.cache.nbytes,
                          "max_bytes": self.cache.max_bytes}}

    def check_frame(self, n: int):
        if not 0 <= n < len(self.clip):
            raise PreviewError(404, "frame_out_of_range", f"frame {n} outside [0, {len(self.clip) - 1}]")

    def rgb(self, n: int, knobs: Knobs, mode: str) -> np.ndarray:
        original = frame_to_rgb8(self.clip[n])
        if mode == "original":
            return original
        den = frame_to_rgb8(denoise_frame(self.clip, n, self.profile, knobs, self.cfg).frame)
        if mode == "denoised":
            return den
        out = den.copy()
        half = out.shape[1] // 2
        out[:, :half] = original[:, :half]
        return out

    def render(self, n: int, knobs: Knobs, mode: str = "denoised") -> tuple[bytes, bool]:
        """PNG for (frame, knobs, mode) and whether it came from the cache."""
        self.check_frame(n)
        if mode not in MODES:
            raise PreviewError(422, "invalid_mode", f"mode must be one of {MODES}")
        key = (n, knobs.as_tuple(), mode)
        hit = self.cache.get(key)
        if hit is not None:
            return hit, True
        with self.render_lock:
            hit = self.cache.get(key)
            if hit is not None:
                return hit, True
            png = encode_png(self.rgb(n, knobs, mode))
            self.renders += 1
            self.cache.put(key, png)
        return png, False


class SessionStore:
    def __init__(self, cache_mb: float = DEFAULT_CACHE_MB):
        self.cache_bytes = int(cache_mb * 1024 * 1024)
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def create(self, path: str) -> Session:
        p = Path(path)
        if not p.exists():
            raise PreviewError(404, "file_not_found", f"no such file or directory: {path}")
        try:
            clip = read_png_sequence(p) if p.is_dir() else read_y4m(p)
            cfg = EngineConfig(threads=1)
            profile = build_profile(clip, cfg)
        except MediaIOError as exc:
            raise PreviewError(422, "unreadable_media", str(exc)) from exc
        except DenoiseError as exc:
            raise PreviewError(422, "invalid_clip", str(exc)) from exc
        s = Session(secrets.token_hex(8), str(p), clip, profile, LRUBytes(self.cache_bytes), cfg=cfg)
        with self._lock:
            self._sessions[s.id] = s
        return s

    def get(self, sid: str) -> Session:
        with self._lock:
            s = self._sessions.get(sid)
        if s is None:
            raise PreviewError(404, "session_not_found", f"unknown session {sid!r}")
        return s

    def __len__(self):
        return len(self._sessions)


def parse_knobs(values) -> Knobs:
    try:
        if isinstance(values, str):
            return Knobs.parse(values)
        if not isinstance(values, (list, tuple)) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
            raise InvariantError("knob values must be a list of six numbers")
        return Knobs.from_sequence(values)
    except InvariantError as exc:
        raise PreviewError(422, "invalid_knobs", str(exc)) from exc


def _header(session: Session, n: int, knobs: Knobs, cached: bool, ms: float, seq: int) -> bytes:
    return json.dumps({"type": "preview", "frame": n, "knobs": list(knobs.as_tuple()), "seq": seq,
                       "cached": cached, "render_ms": round(ms, 3), "session": session.id}).encode()


def create_app(cache_mb: float = DEFAULT_CACHE_MB) -> FastAPI:
    app = FastAPI(title="knobdenoise preview")
    store = SessionStore(cache_mb)
    app.state.store = store

    @app.exception_handler(PreviewError)
    async def _preview_error(request: Request, exc: PreviewError):
        return JSONResponse(exc.payload(), status_code=exc.status)

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request):
        try:
            body = await request.json()
        except ValueError:
            raise PreviewError(400, "bad_request", "body must be JSON")
        if not isinstance(body, dict) or not isinstance(body.get("path"), str):
            raise PreviewError(400, "bad_request", 'expected {"path": "<clip>"}')
        s = await asyncio.to_thread(store.create, body["path"])
        return s.meta()

    @app.get("/sessions/{sid}/meta")
    async def meta(sid: str):
        return store.get(sid).meta()

    @app.get("/sessions/{sid}/frames/{n}")
    async def frame(sid: str, n: int, knobs: str | None = None, mode: str = "denoised"):
        s = store.get(sid)
        k = parse_knobs(knobs) if knobs is not None else s.knobs
        t0 = time.perf_counter()
        png, cached = await asyncio.to_thread(s.render, n, k, mode)
        ms = (time.perf_counter() - t0) * 1000
        return Response(png, media_type="image/png",
                        headers={"X-Render-Ms": f"{ms:.3f}", "X-Cache": "hit" if cached else "miss",
                                 "X-Knobs": ",".join(repr(v) for v in k.as_tuple())})

    @app.websocket("/sessions/{sid}/live")
    async def live(ws: WebSocket, sid: str):
        await ws.accept()
        try:
            s = store.get(sid)
        except PreviewError as exc:
            await ws.send_text(json.dumps(exc.payload()))
            await ws.close(code=4404)
            return
        pending: dict = {}
        wake = asyncio.Event()
        closed = asyncio.Event()
        seq = 0

        async def renderer():
            nonlocal seq
            while not closed.is_set():
                await wake.wait()
                wake.clear()
                if closed.is_set():
                    break
                job = dict(pending)      # latest state wins; older requests are dropped
                pending.clear()
                if not job:
                    continue
                n, k = job["frame"], job["knobs"]
                t0 = time.perf_counter()
                try:
                    png, cached = await asyncio.to_thread(s.render, n, k, job["mode"])
                except PreviewError as exc:
                    await ws.send_text(json.dumps(exc.payload()))
                    continue
                seq += 1
                ms = (time.perf_counter() - t0) * 1000
                await ws.send_bytes(_header(s, n, k, cached, ms, seq) + b"\n" + png)

        task = asyncio.create_task(renderer())
        mode = "denoised"
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                    if not isinstance(msg, dict):
                        raise PreviewError(400, "bad_message", "messages must be JSON objects")
                    kind = msg.get("type")
                    if kind == "knobs":
                        k = parse_knobs(msg.get("values"))
                        s.knobs = k
                    elif kind == "frame":
                        idx = msg.get("index")
                        if not isinstance(idx, int) or isinstance(idx, bool):
                            raise PreviewError(422, "bad_message", "frame index must be an integer")
                        s.check_frame(idx)
                        s.frame = idx
                    elif kind == "mode":
                        if msg.get("mode") not in MODES:
                            raise PreviewError(422, "invalid_mode", f"mode must be one of {MODES}")
                        mode = msg["mode"]
                    else:
                        raise PreviewError(400, "bad_message", f"unknown message type {kind!r}")
                except json.JSONDecodeError:
                    await ws.send_text(json.dumps(PreviewError(400, "bad_message", "invalid JSON").payload()))
                    continue
                except PreviewError as exc:
                    await ws.send_text(json.dumps(exc.payload()))
                    continue
                pending.update(frame=s.frame, knobs=s.knobs, mode=mode)
                wake.set()
        except WebSocketDisconnect:
            pass
        finally:
            closed.set()
            wake.set()
            task.cancel()

    return app


def serve(host: str = "127.0.0.1", port: int = 8765, cache_mb: float = DEFAULT_CACHE_MB):
    import uvicorn

    uvicorn.run(create_app(cache_mb), host=host, port=port, log_level="warning")
