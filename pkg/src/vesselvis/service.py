"""Local HTTP API for the interactive steering loop.

A volume is uploaded once; filtering and feature extraction run at upload
time and are cached in the session. Render requests only re-fuse the cached
features under the requested weights and project, which is what keeps
slider-driven interaction responsive.
"""

from __future__ import annotations

import io
import threading
import time
import uuid
import zipfile
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from .errors import AllZeroWeights, PipelineError
from .features import FeatureConfig, FeatureSet, FrangiParams, GvfParams, build_feature_set
from .filters import BilateralParams, bilateral_fast
from .fusion import FusionParams, fuse, normalize_weights
from .render import Camera, RenderMode, png_bytes, render_fused, render_mip, warm_up
from .volume import FrameStack, Volume, ingest_frames, volume_from_vvol_bytes

DEFAULT_COLORS = {
    "frangi": (0.0, 0.9),
    "sobel": (180.0, 0.7),
    "gvf": (60.0, 0.7),
}


@dataclass
class Session:
    id: str
    volume: Volume
    filtered: Volume
    features: FeatureSet
    params_used: dict
    created: float = field(default_factory=time.time)
    last_fusion_params: dict | None = None


class SessionStore:
    """In-memory LRU session cache; reads move a session to the fresh end."""

    def __init__(self, cap: int):
        self.cap = cap
        self._lock = threading.Lock()
        self._sessions: OrderedDict[str, Session] = OrderedDict()

    def add(self, session: Session) -> None:
        with self._lock:
            self._sessions[session.id] = session
            while len(self._sessions) > self.cap:
                self._sessions.popitem(last=False)

    def get(self, session_id: str) -> Session:
        with self._lock:
            session = self._sessions.get(session_id)
            if session is None:
                raise HTTPException(status_code=404,
                                    detail=f"unknown volume id {session_id!r}")
            self._sessions.move_to_end(session_id)
            return session


class RenderBody(BaseModel):
    params: dict
    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    mode: str = "mip-color"
    size: tuple[int, int] = (256, 256)
    step: float = 0.5


def _field_error(name: str, message: str) -> HTTPException:
    return HTTPException(
        status_code=422,
        detail=[{"loc": ["body", "params", name], "msg": message}],
    )


def _fusion_params_from_request(raw: dict, feature_names) -> FusionParams:
    weights_raw = raw.get("weights")
    if not isinstance(weights_raw, dict) or not weights_raw:
        raise _field_error("weights", "weights must map feature names to values")
    unknown = [n for n in weights_raw if n not in feature_names]
    if unknown:
        raise _field_error("weights", f"unknown feature names {unknown}")
    names = list(weights_raw)
    try:
        normalized = normalize_weights([weights_raw[n] for n in names])
    except AllZeroWeights:
        raise _field_error("weights", "at least one weight must be positive") from None
    except ValueError as exc:
        raise _field_error("weights", str(exc)) from None
    weights = dict(zip(names, normalized))
    for name in feature_names:
        weights.setdefault(name, 0.0)

    colors = {n: DEFAULT_COLORS.get(n, (0.0, 0.0)) for n in feature_names}
    for name, spec in (raw.get("colors") or {}).items():
        try:
            colors[name] = (float(spec["h"]), float(spec["s"]))
        except (KeyError, TypeError, ValueError):
            raise _field_error("colors", f"color for {name!r} needs h and s") from None
    gain = raw.get("gain", 1.0)
    try:
        return FusionParams(weights, colors, gain)
    except (ValueError, PipelineError) as exc:
        raise _field_error("params", str(exc)) from None


def _frames_from_zip(blob: bytes) -> list[np.ndarray]:
    from PIL import Image

    frames = []
    with zipfile.ZipFile(io.BytesIO(blob)) as zf:
        names = sorted(n for n in zf.namelist() if n.lower().endswith(".png"))
        if not names:
            raise ValueError("zip holds no PNG frames")
        for name in names:
            img = Image.open(io.BytesIO(zf.read(name)))
            frames.append(_frame_array(img, name))
    return frames


def _frame_array(img, name: str) -> np.ndarray:
    if img.mode == "L":
        return np.asarray(img, dtype=np.uint8)
    if img.mode in ("I;16", "I"):
        arr = np.asarray(img)
        if arr.max(initial=0) > 65535 or arr.min(initial=0) < 0:
            raise ValueError(f"{name}: sample values exceed 16-bit range")
        return arr.astype(np.uint16)
    raise ValueError(f"{name}: mode {img.mode!r} is not 8/16-bit grayscale")


def _query_feature_config(query) -> tuple[BilateralParams, FeatureConfig, tuple]:
    def qfloat(name, default):
        return float(query.get(name, default))

    bilateral = BilateralParams(
        sigma_spatial=qfloat("sigma_spatial", 2.0),
        sigma_range=qfloat("sigma_range", 0.1),
        window_radius=int(query.get("window_radius", 4)),
    )
    scales = tuple(
        float(s) for s in str(query.get("scales", "1,2,3,4")).split(",") if s
    )
    bright = str(query.get("bright_vessels", "false")).lower() in ("1", "true", "yes")
    config = FeatureConfig(
        select=tuple(str(query.get("features", "sobel,gvf,frangi")).split(",")),
        frangi=FrangiParams(scales=scales, bright_vessels=bright),
        gvf=GvfParams(
            mu=qfloat("gvf_mu", 0.2),
            iterations=int(query.get("gvf_iterations", 80)),
        ),
    )
    spacing = tuple(
        float(s) for s in str(query.get("spacing", "1,1,1")).split(",")
    )
    if len(spacing) != 3:
        raise ValueError("spacing needs three components")
    return bilateral, config, spacing


def create_app(max_upload_bytes: int = 256 * 1024 * 1024,
               session_cap: int = 4) -> FastAPI:
    app = FastAPI(title="vesselvis")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
        allow_headers=["*"],
    )
    store = SessionStore(session_cap)
    app.state.sessions = store
    warm_up()

    @app.get("/api/v1/health")
    def health():
        return {"status": "ok"}

    @app.post("/api/v1/volumes", status_code=201)
    async def upload_volume(request: Request):
        length = request.headers.get("content-length")
        if length and int(length) > max_upload_bytes:
            raise HTTPException(status_code=413, detail="upload exceeds size cap")

        content_type = request.headers.get("content-type", "")
        try:
            bilateral, config, spacing = _query_feature_config(request.query_params)
        except (ValueError, PipelineError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None

        try:
            if content_type.startswith("multipart/form-data"):
                form = await request.form()
                frames = []
                for _, value in form.multi_items():
                    blob = await value.read()
                    if sum(f.nbytes for f in frames) + len(blob) > max_upload_bytes:
                        raise HTTPException(status_code=413,
                                            detail="upload exceeds size cap")
                    from PIL import Image

                    img = Image.open(io.BytesIO(blob))
                    frames.append(_frame_array(img, getattr(value, "filename", "?")))
                if not frames:
                    raise ValueError("multipart body holds no files")
                stack = FrameStack(tuple(frames), spacing[:2], spacing[2])
                volume = ingest_frames(stack)
            else:
                body = await request.body()
                if len(body) > max_upload_bytes:
                    raise HTTPException(status_code=413,
                                        detail="upload exceeds size cap")
                if body[:4] == b"VVOL":
                    volume = volume_from_vvol_bytes(body)
                elif body[:4] == b"PK\x03\x04":
                    frames = _frames_from_zip(body)
                    stack = FrameStack(tuple(frames), spacing[:2], spacing[2])
                    volume = ingest_frames(stack)
                else:
                    raise ValueError("body is neither VVOL, a PNG zip, nor multipart")
        except HTTPException:
            raise
        except (PipelineError, ValueError, OSError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None

        try:
            filtered = bilateral_fast(volume, bilateral)
            features = build_feature_set(filtered, config)
        except (PipelineError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        session = Session(
            id=uuid.uuid4().hex,
            volume=volume,
            filtered=filtered,
            features=features,
            params_used={
                "bilateral": {
                    "sigma_spatial": bilateral.sigma_spatial,
                    "sigma_range": bilateral.sigma_range,
                    "window_radius": bilateral.window_radius,
                },
                "features": list(config.select),
                "frangi_scales": list(config.frangi.scales),
                "bright_vessels": config.frangi.bright_vessels,
            },
        )
        store.add(session)
        return {"id": session.id}

    @app.get("/api/v1/volumes/{session_id}/meta")
    def volume_meta(session_id: str):
        session = store.get(session_id)
        return {
            "dims": list(session.volume.dims),
            "spacing": list(session.volume.spacing),
            "features": list(session.features.names),
            "params": session.params_used,
        }

    @app.post("/api/v1/volumes/{session_id}/render")
    def render_volume(session_id: str, body: RenderBody):
        session = store.get(session_id)
        if body.mode not in ("mip", "mip-color", "composite"):
            raise _field_error("mode", f"unknown mode {body.mode!r}")
        if body.step <= 0:
            raise _field_error("step", "step must be positive")
        params = _fusion_params_from_request(body.params, session.features.names)

        start = time.perf_counter()
        fused = fuse(session.filtered, session.features, params)
        camera = Camera(rotation=body.rotation, output_size=body.size)
        if body.mode == "mip":
            image = render_mip(Volume(fused.opacity, fused.spacing), camera, body.step)
        else:
            mode = RenderMode.MIP if body.mode == "mip-color" else RenderMode.COMPOSITE
            image = render_fused(fused, camera, mode, body.step)
        blob = png_bytes(image)
        millis = (time.perf_counter() - start) * 1000.0

        session.last_fusion_params = body.params
        return Response(
            content=blob,
            media_type="image/png",
            headers={"X-Render-Millis": f"{millis:.1f}"},
        )

    return app
