"""Stateless HTTP inference endpoint over a checkpointed enhancer.

    POST /v1/enhance   image + style -> PNG bytes (metadata in headers)
    GET  /v1/styles    checkpoint task names in order
    GET  /healthz      200 with model id, or 503 when nothing is loaded

The loaded checkpoint lives in one immutable snapshot object; swapping a
checkpoint replaces the snapshot reference atomically, so in-flight
requests finish on the weights they started with and new requests see the
new model. Style weight vectors are clamped to [0,1] server-side; raw
extrapolation probing belongs to the CLI.
"""

from __future__ import annotations

import argparse
import base64
import binascii
import io
import json
import time
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from PIL import Image, UnidentifiedImageError

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import Checkpoint, load_checkpoint
from .data import crop_to_mask, resize_pad
from .models import GSGN, build_generator
from .training import one_hot

DEFAULT_EDGE = 512
DEFAULT_MAX_EDGE = 1024


@dataclass(frozen=True)
class Snapshot:
    """Immutable published model: weights are never mutated after load."""

    model: GSGN
    config_levels: int
    task_names: List[str]
    task_count: int
    adaptive: bool
    model_id: str

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "Snapshot":
        model = build_generator(ckpt.config)
        model.load_state_dict(ckpt.model_state())
        for p in model.parameters():
            p.requires_grad = False
            p.data.setflags(write=False)
        return cls(model=model, config_levels=ckpt.config.levels,
                   task_names=list(ckpt.task_names),
                   task_count=ckpt.config.task_count,
                   adaptive=ckpt.config.norm_mode == "adaptive",
                   model_id=ckpt.content_hash())


class ServiceState:
    def __init__(self, edge: int = DEFAULT_EDGE,
                 max_edge: int = DEFAULT_MAX_EDGE):
        self.edge = edge
        self.max_edge = max_edge
        self.snapshot: Optional[Snapshot] = None

    def swap(self, checkpoint_path) -> Snapshot:
        """Atomically publish a new snapshot (plain attribute store)."""
        snap = Snapshot.from_checkpoint(load_checkpoint(checkpoint_path))
        divisor = 2 ** snap.config_levels
        if self.edge % divisor:
            raise ValueError(f"processing edge {self.edge} not divisible "
                             f"by {divisor} (model shuffle levels)")
        self.snapshot = snap
        return snap


class _BadRequest(Exception):
    def __init__(self, detail: str):
        self.detail = detail


def _resolve_style(style, snap: Snapshot) -> Optional[np.ndarray]:
    if not snap.adaptive:
        return None
    if style is None:
        raise _BadRequest(
            f"model is task-adaptive; provide style as one of "
            f"{snap.task_names} or a {snap.task_count}-entry weight vector")
    if isinstance(style, str):
        try:
            parsed = json.loads(style)
        except json.JSONDecodeError:
            parsed = style
        style = parsed
    if isinstance(style, str):
        if style not in snap.task_names:
            raise _BadRequest(f"unknown style {style!r}; known: "
                              f"{snap.task_names}")
        return one_hot(np.array([snap.task_names.index(style)]),
                       snap.task_count)[0]
    try:
        z = np.array([float(v) for v in style], dtype=np.float32)
    except (TypeError, ValueError):
        raise _BadRequest(f"style must be a name or a list of numbers, "
                          f"got {style!r}") from None
    if z.shape != (snap.task_count,):
        raise _BadRequest(f"style vector has {z.shape[0]} entries; "
                          f"model has {snap.task_count} tasks")
    return np.clip(z, 0.0, 1.0)


def _decode_png(raw: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(raw)) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError):
        raise _BadRequest("image bytes could not be decoded") from None
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def _encode_png(arr: np.ndarray) -> bytes:
    img = (np.clip(arr, 0, 1).transpose(1, 2, 0) * 255.0).round().astype(
        np.uint8)
    buf = io.BytesIO()
    Image.fromarray(img).save(buf, format="PNG")
    return buf.getvalue()


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="enhancer", docs_url=None, redoc_url=None)
    app.state.service = state

    def _snap() -> Snapshot:
        return state.snapshot

    @app.get("/healthz")
    def healthz():
        snap = _snap()
        if snap is None:
            return JSONResponse({"status": "no checkpoint loaded"},
                                status_code=503)
        return {"status": "ok", "model_id": snap.model_id}

    @app.get("/v1/styles")
    def styles():
        snap = _snap()
        if snap is None:
            return JSONResponse({"detail": "no checkpoint loaded"},
                                status_code=503)
        return [{"index": i, "name": n}
                for i, n in enumerate(snap.task_names)]

    @app.post("/v1/enhance")
    async def enhance(request: Request):
        snap = _snap()
        if snap is None:
            return JSONResponse({"detail": "no checkpoint loaded"},
                                status_code=503)
        content_type = request.headers.get("content-type", "")
        style = None
        return_metrics = False
        if content_type.startswith("multipart/form-data"):
            form = await request.form()
            upload = form.get("image")
            if upload is None:
                return JSONResponse({"detail": "missing image part"},
                                    status_code=400)
            raw = await upload.read()
            style = form.get("style")
            return_metrics = str(form.get("return_metrics", "")).lower() \
                in ("1", "true")
        else:
            try:
                body = json.loads(await request.body())
            except json.JSONDecodeError:
                return JSONResponse({"detail": "body is neither multipart "
                                     "nor JSON"}, status_code=400)
            b64 = body.get("image")
            if not isinstance(b64, str):
                return JSONResponse({"detail": "missing base64 image field"},
                                    status_code=400)
            try:
                raw = base64.b64decode(b64, validate=True)
            except (binascii.Error, ValueError):
                return JSONResponse({"detail": "image field is not valid "
                                     "base64"}, status_code=400)
            style = body.get("style")
            return_metrics = bool(body.get("return_metrics", False))

        try:
            image = _decode_png(raw)
            z = _resolve_style(style, snap)
        except _BadRequest as e:
            return JSONResponse({"detail": e.detail}, status_code=400)
        if max(image.shape[1], image.shape[2]) > state.max_edge:
            return JSONResponse(
                {"detail": f"image exceeds max edge {state.max_edge}"},
                status_code=413)

        t0 = time.perf_counter()
        padded, mask = resize_pad(image, state.edge)
        zt = Tensor(z[None]) if z is not None else None
        with ad.no_grad():
            out = snap.model(Tensor(padded[None]), zt,
                             clamp_output=True).data[0]
        out = crop_to_mask(out, mask)
        elapsed_ms = (time.perf_counter() - t0) * 1000.0
        meta = {
            "model_id": snap.model_id,
            "style": (style if isinstance(style, str) else
                      (list(map(float, z)) if z is not None else None)),
            "inference_ms": round(elapsed_ms, 3),
        }
        if return_metrics:
            meta["output_mean"] = float(out.mean())
            meta["output_std"] = float(out.std())
        return Response(content=_encode_png(out), media_type="image/png",
                        headers={"X-Enhance-Meta": json.dumps(meta)})

    return app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="gsgn-serve",
                                     description="inference service")
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8321)
    parser.add_argument("--edge", type=int, default=DEFAULT_EDGE,
                        help="processing edge (longer image side)")
    parser.add_argument("--max-edge", type=int, default=DEFAULT_MAX_EDGE,
                        dest="max_edge", help="reject larger inputs (413)")
    args = parser.parse_args(argv)

    state = ServiceState(edge=args.edge, max_edge=args.max_edge)
    state.swap(args.checkpoint)
    app = create_app(state)
    import uvicorn
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    import sys
    sys.exit(main())
