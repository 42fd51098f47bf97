"""HTTP JSON API over a workspace, plus static serving of the built web UI.

Every module error maps to one stable machine code inside a uniform error
envelope {code, message}; success bodies are plain JSON. Image bytes and
saliency overlays are served as native image responses for <img> consumption,
mask bytes travel as base64 PNG inside JSON.
"""

from __future__ import annotations

import base64
import binascii
import io
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import HTMLResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field
from starlette.exceptions import HTTPException as StarletteHTTPException

from .annotations import decode_mask_png, range_filter_mask
from .datastore import LIST_FILTERS, SPLITS
from .errors import CorruptMaskFile, DespurError, InvalidArgument
from .saliency import compute_saliency, render_saliency_overlay
from .tasks import KINDS
from .workspace import Workspace


class InfluenceNotComputed(DespurError):
    code = "INFLUENCE_NOT_COMPUTED"
    http_status = 404

PLACEHOLDER_PAGE = """<!doctype html>
<html><head><title>despur</title></head>
<body><h1>despur API server</h1>
<p>No built web UI found. The JSON API lives under <code>/api/</code>;
see <a href="/api/meta">/api/meta</a>.</p></body></html>
"""


class MaskBody(BaseModel):
    mask_png_base64: str


class ProposeBody(BaseModel):
    method: str
    params: dict = Field(default_factory=dict)


class TaskBody(BaseModel):
    kind: str
    payload: dict = Field(default_factory=dict)


def _mask_to_base64(bits: np.ndarray) -> str:
    from PIL import Image

    img = Image.fromarray((bits * 255).astype(np.uint8), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def create_app(workspace: Workspace, ui_root: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="despur", docs_url=None, redoc_url=None)

    @app.exception_handler(DespurError)
    async def despur_error_handler(_request: Request, exc: DespurError):
        return JSONResponse(
            status_code=exc.http_status,
            content={"code": exc.code, "message": exc.message},
        )

    @app.exception_handler(RequestValidationError)
    async def validation_handler(_request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={"code": "INVALID_ARGUMENT", "message": str(exc.errors()[:3])},
        )

    @app.exception_handler(StarletteHTTPException)
    async def http_exception_handler(_request: Request, exc: StarletteHTTPException):
        code = {404: "NOT_FOUND", 405: "METHOD_NOT_ALLOWED"}.get(exc.status_code, "HTTP_ERROR")
        return JSONResponse(
            status_code=exc.status_code,
            content={"code": code, "message": str(exc.detail)},
        )

    @app.exception_handler(Exception)
    async def fallback_handler(_request: Request, exc: Exception):
        return JSONResponse(
            status_code=500,
            content={"code": "INTERNAL", "message": f"{type(exc).__name__}: {exc}"},
        )

    # --- meta ---

    @app.get("/api/meta")
    def get_meta():
        desc = workspace.backend.descriptor
        return {
            "class_names": workspace.config.class_names,
            "input_shape": list(workspace.config.input_shape),
            "active_checkpoint_id": workspace.active_checkpoint.checkpoint_id,
            "backend": {
                "backend_name": desc.backend_name,
                "parameter_count": desc.parameter_count,
                "capabilities": sorted(desc.capabilities),
            },
        }

    # --- image browsing ---

    @app.get("/api/images")
    def list_images(split: str = "train", page: int = 0, page_size: int = 24,
                    filter: str = "all"):
        if split not in SPLITS:
            raise InvalidArgument(f"split must be one of {SPLITS}")
        if filter not in LIST_FILTERS:
            raise InvalidArgument(f"filter must be one of {LIST_FILTERS}")
        active_id = workspace.active_checkpoint.checkpoint_id
        active_preds = workspace.active_predictions()
        display_preds = active_preds
        stale = False
        if display_preds is None:
            fallback = workspace.latest_scored_checkpoint()
            display_preds = workspace.predictions_for(fallback) if fallback else None
            stale = True
        annotated = workspace.masks.annotated_set()
        records, total = workspace.dataset.list_images(
            split, page, page_size, filter,
            predictions=active_preds, annotated_ids=annotated,
        )
        payload = []
        for rec in records:
            pred = display_preds.get(rec.image_id) if display_preds else None
            payload.append({
                "image_id": rec.image_id,
                "split": rec.split,
                "class_label": rec.class_label,
                "class_name": workspace.config.class_names[rec.class_label],
                "width": rec.width,
                "height": rec.height,
                "channels": rec.channels,
                "prediction": None if pred is None else {
                    "predicted_label": pred.predicted_label,
                    "predicted_class": workspace.config.class_names[pred.predicted_label],
                    "probabilities": list(pred.probabilities),
                    "correct": pred.correct,
                    "checkpoint_id": pred.checkpoint_id,
                },
                "stale": stale,
                "has_mask": rec.image_id in annotated,
                "has_influence": rec.split == "test"
                and workspace.influence.has_cached(rec.image_id, active_id),
            })
        return {"records": payload, "total": total, "page": page,
                "page_size": page_size, "split": split, "filter": filter}

    # --- per-image resources (registered before the bare image route) ---

    @app.get("/api/image/{image_id:path}/saliency")
    def get_saliency(image_id: str, class_index: int | None = None,
                     overlay: bool = False, alpha: float = 0.5):
        rec = workspace.dataset.record(image_id)
        ckpt = workspace.active_checkpoint
        image = workspace.dataset.image_array(image_id)
        if class_index is None:
            preds = workspace.active_predictions()
            if preds is not None and image_id in preds:
                class_index = preds[image_id].predicted_label
            else:
                logits = workspace.backend.forward(ckpt.parameters, image)
                class_index = int(np.argmax(logits))
        values = compute_saliency(workspace.backend, ckpt.parameters, image, class_index)
        if overlay:
            if not (0.0 <= alpha <= 1.0):
                raise InvalidArgument(f"alpha must lie in [0, 1], got {alpha}")
            png = render_saliency_overlay(image, values, alpha)
            return Response(content=png, media_type="image/png")
        return {
            "image_id": rec.image_id,
            "class_index": int(class_index),
            "checkpoint_id": ckpt.checkpoint_id,
            "width": rec.width,
            "height": rec.height,
            "values": [[float(v) for v in row] for row in values],
        }

    @app.get("/api/image/{image_id:path}/influence")
    def get_influence(image_id: str):
        active_id = workspace.active_checkpoint.checkpoint_id
        result = workspace.influence.get_cached(image_id, active_id)
        if result is None:
            raise InfluenceNotComputed(
                f"no influence cache for {image_id!r} under the active checkpoint"
            )
        return {
            "test_image_id": result.test_image_id,
            "checkpoint_id": result.checkpoint_id,
            "damping": result.damping,
            "solver": result.solver,
            "k": result.k,
            "entries": [
                {"train_image_id": tid, "score": score} for tid, score in result.entries
            ],
        }

    @app.get("/api/image/{image_id:path}/mask")
    def get_mask(image_id: str):
        rec = workspace.dataset.record(image_id)
        bits = workspace.masks.load_mask(image_id)
        if bits is None:
            return {"image_id": image_id, "present": False, "mask_png_base64": None,
                    "revision": None, "width": rec.width, "height": rec.height}
        return {
            "image_id": image_id,
            "present": True,
            "mask_png_base64": _mask_to_base64(bits),
            "revision": workspace.masks.load_revision(image_id),
            "width": rec.width,
            "height": rec.height,
        }

    @app.put("/api/image/{image_id:path}/mask")
    def put_mask(image_id: str, body: MaskBody):
        try:
            raw = base64.b64decode(body.mask_png_base64, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise InvalidArgument(f"mask_png_base64 is not valid base64: {exc}") from exc
        try:
            bits, _ = decode_mask_png(raw, source="<request body>")
        except CorruptMaskFile as exc:
            raise InvalidArgument(f"mask body is not a decodable PNG: {exc.message}") from exc
        revision = workspace.masks.save_mask(image_id, bits)
        return {"image_id": image_id, "revision": revision}

    @app.post("/api/image/{image_id:path}/mask/propose")
    def propose_mask(image_id: str, body: ProposeBody):
        rec = workspace.dataset.record(image_id)
        image = workspace.dataset.image_array(image_id)
        params = body.params or {}
        if body.method == "range":
            try:
                lo = float(params.get("lo", 0.0))
                hi = float(params.get("hi", 1.0))
            except (TypeError, ValueError) as exc:
                raise InvalidArgument(f"lo/hi must be numbers: {exc}") from exc
            mode = str(params.get("channel_mode", "luminance"))
            bits = range_filter_mask(image, lo, hi, mode)
        else:
            bits = workspace.segmentation.propose(
                body.method, image, workspace.dataset.file_path(image_id), params
            )
        return {
            "image_id": image_id,
            "method": body.method,
            "mask_png_base64": _mask_to_base64(bits),
            "width": rec.width,
            "height": rec.height,
        }

    @app.get("/api/image/{image_id:path}")
    def get_image(image_id: str):
        data, content_type = workspace.dataset.image_bytes(image_id)
        return Response(content=data, media_type=content_type)

    # --- tasks ---

    @app.post("/api/tasks", status_code=202)
    def submit_task(body: TaskBody):
        if body.kind not in KINDS:
            raise InvalidArgument(f"kind must be one of {KINDS}, got {body.kind!r}")
        job_id = workspace.tasks.submit(body.kind, body.payload)
        return {"job_id": job_id}

    @app.get("/api/tasks")
    def list_tasks(status: str | None = None):
        return {"tasks": [r.to_dict() for r in workspace.tasks.list_tasks(status)]}

    @app.get("/api/tasks/{job_id}")
    def get_task(job_id: str):
        return workspace.tasks.get_status(job_id).to_dict()

    @app.post("/api/tasks/{job_id}/cancel")
    def cancel_task(job_id: str):
        return workspace.tasks.cancel(job_id).to_dict()

    # --- checkpoints ---

    @app.get("/api/checkpoints")
    def list_checkpoints():
        active_id = workspace.active_checkpoint.checkpoint_id
        out = []
        for ckpt_id in workspace.checkpoints.list_ids():
            ckpt = workspace.checkpoints.load(ckpt_id)
            out.append({
                "checkpoint_id": ckpt_id,
                "backend_name": ckpt.backend_name,
                "active": ckpt_id == active_id,
                "metadata": ckpt.metadata,
            })
        return {"checkpoints": out, "active_checkpoint_id": active_id}

    @app.post("/api/checkpoints/{checkpoint_id}/activate")
    def activate_checkpoint(checkpoint_id: str):
        ckpt = workspace.activate(checkpoint_id)
        return {"active_checkpoint_id": ckpt.checkpoint_id}

    # --- static UI ---

    if ui_root is not None and Path(ui_root).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_root), html=True), name="ui")
    else:
        @app.get("/", response_class=HTMLResponse)
        def index() -> str:
            return PLACEHOLDER_PAGE

    return app
