"""HTTP + WebSocket service exposing artifacts and interactive rendering.

Endpoints:
  GET  /api/models        list loadable artifacts in the served directory
  POST /api/load          {"path": ...} load a volume, model, or manifest
  GET  /api/meta          dims, value range, brick layout of the loaded artifact
  POST /api/render        RenderRequest -> PNG bytes
  WS   /api/progressive   stream one message per completed progressive pass
  GET  /api/stats         last frame time and field-query throughput

Renders are pure functions of the request plus the loaded artifact, so a
service render of a request is byte-identical to the CLI render of the same
request. One progressive render is in flight per session; a newer request
with the same session id cancels it at the next pass boundary.
"""

from __future__ import annotations

import asyncio
import base64
import json
import time
from pathlib import Path

import anyio.to_thread
from fastapi import FastAPI, HTTPException, Response, WebSocket, WebSocketDisconnect
from pydantic import BaseModel, ValidationError

from .decomposition import DecomposedField, load_manifest
from .model import load_model
from .render import (
    Camera,
    ModelField,
    RenderConfig,
    TransferFunction,
    VolumeField,
    image_to_png_bytes,
    render_frame,
    render_progressive,
)
from .volume import load_header, load_volume

DEFAULT_PORT = 8080


class RenderRequest(BaseModel):
    camera: dict
    tf: dict | None = None
    samples_per_ray: int = 128
    batch_size: int = 65536
    progressive: bool = False
    request_id: str = ""
    session_id: str = "default"


def _build_render_inputs(req: RenderRequest):
    try:
        camera = Camera.from_json(req.camera)
        tf = TransferFunction.from_json(req.tf) if req.tf else TransferFunction()
        cfg = RenderConfig(samples_per_ray=req.samples_per_ray, batch_size=req.batch_size)
    except Exception as exc:
        raise HTTPException(status_code=400, detail=f"invalid render request: {exc}") from exc
    return camera, tf, cfg


def _list_artifacts(root: Path) -> list[dict]:
    found = []
    for path in sorted(root.rglob("*")):
        rel = str(path.relative_to(root))
        if path.name == "manifest.json":
            found.append({"path": rel, "kind": "decomposed"})
        elif path.suffix == ".apmg":
            found.append({"path": rel, "kind": "model"})
        elif path.suffix == ".json":
            try:
                with open(path) as f:
                    obj = json.load(f)
            except (OSError, json.JSONDecodeError):
                continue
            if isinstance(obj, dict) and "dims" in obj and path.with_suffix(".raw").exists():
                found.append({"path": rel, "kind": "volume"})
    return found


def _load_artifact(root: Path, rel: str):
    """Returns (field, meta). Raises HTTPException(404) for unknown artifacts."""
    target = (root / rel).resolve()
    if not str(target).startswith(str(root.resolve())) or not target.exists():
        raise HTTPException(status_code=404, detail=f"unknown artifact: {rel}")
    if target.name == "manifest.json":
        field = DecomposedField.load(target)
        plan = field.manifest.plan
        meta = {
            "kind": "decomposed",
            "path": rel,
            "dims": list(field.manifest.volume_header.dims),
            "vmin": field.vmin,
            "vmax": field.vmax,
            "bricks": list(plan.counts),
            "ghost": plan.ghost,
        }
    elif target.suffix == ".apmg":
        model = load_model(target)
        field = ModelField(model)
        meta = {"kind": "model", "path": rel, "dims": None,
                "vmin": field.vmin, "vmax": field.vmax, "bricks": None}
    elif target.suffix == ".json":
        header = load_header(target)
        volume = load_volume(target.with_suffix(".raw"), header)
        field = VolumeField(volume)
        meta = {"kind": "volume", "path": rel, "dims": list(volume.dims),
                "vmin": field.vmin, "vmax": field.vmax, "bricks": None}
    else:
        raise HTTPException(status_code=404, detail=f"unknown artifact type: {rel}")
    return field, meta


def create_app(artifact_dir: str | Path, viewer_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="apmg renderer service")
    app.state.artifact_dir = Path(artifact_dir)
    app.state.field = None
    app.state.meta = None
    app.state.stats = {"last_frame_ms": None, "points_per_sec": None}
    # session id -> monotonically increasing render generation; a bump
    # cancels any in-flight progressive stream for that session.
    app.state.sessions: dict[str, int] = {}

    def _require_field():
        if app.state.field is None:
            raise HTTPException(status_code=409, detail="no artifact loaded")
        return app.state.field

    @app.get("/api/models")
    def list_models():
        return {"models": _list_artifacts(app.state.artifact_dir)}

    @app.post("/api/load")
    def load_artifact(body: dict):
        rel = body.get("path")
        if not rel:
            raise HTTPException(status_code=400, detail="missing 'path'")
        field, meta = _load_artifact(app.state.artifact_dir, rel)
        app.state.field = field
        app.state.meta = meta
        return meta

    @app.get("/api/meta")
    def get_meta():
        _require_field()
        return app.state.meta

    @app.get("/api/stats")
    def get_stats():
        return app.state.stats

    @app.post("/api/render")
    async def render(req: RenderRequest):
        field = _require_field()
        camera, tf, cfg = _build_render_inputs(req)
        t0 = time.perf_counter()
        image = await anyio.to_thread.run_sync(render_frame, field, camera, tf, cfg)
        elapsed = time.perf_counter() - t0
        points = camera.width * camera.height * cfg.samples_per_ray
        app.state.stats = {
            "last_frame_ms": elapsed * 1000.0,
            "points_per_sec": points / elapsed if elapsed > 0 else None,
        }
        return Response(content=image_to_png_bytes(image), media_type="image/png")

    @app.websocket("/api/progressive")
    async def progressive(ws: WebSocket):
        await ws.accept()
        queue: asyncio.Queue = asyncio.Queue()

        async def receiver():
            try:
                while True:
                    await queue.put(await ws.receive_text())
            except WebSocketDisconnect:
                await queue.put(None)

        recv_task = asyncio.create_task(receiver())
        try:
            message = await queue.get()
            while message is not None:
                try:
                    req = RenderRequest(**json.loads(message))
                except (json.JSONDecodeError, ValidationError) as exc:
                    await ws.send_json({"error": f"invalid request: {exc}"})
                    message = await queue.get()
                    continue
                if app.state.field is None:
                    await ws.send_json({"error": "no artifact loaded", "request_id": req.request_id})
                    message = await queue.get()
                    continue
                try:
                    camera, tf, cfg = _build_render_inputs(req)
                except HTTPException as exc:
                    await ws.send_json({"error": exc.detail, "request_id": req.request_id})
                    message = await queue.get()
                    continue

                generation = app.state.sessions.get(req.session_id, 0) + 1
                app.state.sessions[req.session_id] = generation
                message = await _stream_render(
                    app, ws, queue, req, camera, tf, cfg, generation)
        except WebSocketDisconnect:
            pass
        finally:
            recv_task.cancel()

    if viewer_dir is not None and Path(viewer_dir).exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(viewer_dir), html=True), name="viewer")

    return app


async def _stream_render(app, ws, queue, req, camera, tf, cfg, generation):
    """Stream passes until completion or supersession; returns the next request.

    Cancellation happens only at pass boundaries: after each non-final pass
    the queue and the session generation are checked, and a superseding
    request ends the stream with a cancelled marker."""
    field = app.state.field
    t0 = time.perf_counter()
    points = 0
    gen = render_progressive(field, camera, tf, cfg)
    sentinel = object()
    while True:
        item = await anyio.to_thread.run_sync(next, gen, sentinel)
        if item is sentinel:
            break
        points += item.samples_evaluated
        await ws.send_json({
            "request_id": req.request_id,
            "pass_index": item.index,
            "level": item.level,
            "final": item.final,
            "png": base64.b64encode(image_to_png_bytes(item.preview)).decode("ascii"),
        })
        if item.final:
            break
        superseded = app.state.sessions.get(req.session_id, 0) != generation
        if superseded or not queue.empty():
            await ws.send_json({"request_id": req.request_id, "cancelled": True})
            return await queue.get()
    elapsed = time.perf_counter() - t0
    app.state.stats = {
        "last_frame_ms": elapsed * 1000.0,
        "points_per_sec": points / elapsed if elapsed > 0 else None,
    }
    return await queue.get()
