"""HTTP inference service over a trained checkpoint.

Endpoints: POST /v1/infill, GET /v1/metadata, GET /healthz.  Wire format is
JSON with positions in meters and quaternions ordered [w, x, y, z].  The
loaded model is immutable, so concurrent requests are safe and identical
requests produce identical payloads.
"""
from __future__ import annotations

import os
import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .dataset import LabelTable
from .geometry import Pose, Skeleton
from .model import CHECKPOINT_VERSION, CMIBModel, infill, load_checkpoint

# ingestion tolerance: wire quaternions may be off unit norm by this much
QUAT_WIRE_ATOL = 1e-3


class PoseWire(BaseModel):
    positions: list[list[float]]
    rotations: list[list[float]]


class AnchorWire(BaseModel):
    frame: int
    pose: PoseWire


class InfillRequestWire(BaseModel):
    start: PoseWire
    target: PoseWire
    T: int
    label: int | str
    anchor: AnchorWire | None = None
    fps: float = 30.0


def _reject(field: str, message: str):
    raise HTTPException(
        status_code=400,
        detail={"code": "invalid_field", "field": field, "message": message},
    )


def _parse_pose(wire: PoseWire, J: int, field: str) -> Pose:
    pos = np.asarray(wire.positions, dtype=np.float64)
    rot = np.asarray(wire.rotations, dtype=np.float64)
    if pos.shape != (J, 3):
        _reject(f"{field}.positions", f"expected {J}x3 joint positions, got {list(pos.shape)}")
    if rot.shape != (J, 4):
        _reject(f"{field}.rotations", f"expected {J}x4 quaternions [w,x,y,z], got {list(rot.shape)}")
    if not np.all(np.isfinite(pos)):
        _reject(f"{field}.positions", "non-finite component")
    if not np.all(np.isfinite(rot)):
        _reject(f"{field}.rotations", "non-finite component")
    norms = np.linalg.norm(rot, axis=1)
    if np.any(np.abs(norms - 1.0) > QUAT_WIRE_ATOL):
        j = int(np.argmax(np.abs(norms - 1.0)))
        _reject(
            f"{field}.rotations",
            f"joint {j} quaternion norm {norms[j]:.6f} outside 1 +/- {QUAT_WIRE_ATOL}",
        )
    return Pose(pos, rot / norms[:, None])


class _Loaded:
    """Immutable bundle the endpoints close over."""

    def __init__(self, model: CMIBModel, skeleton: Skeleton, labels: LabelTable, version: str):
        self.model = model
        self.skeleton = skeleton
        self.labels = labels
        self.version = version


def load_bundle(path: str | Path) -> _Loaded:
    model, meta = load_checkpoint(path)
    if "skeleton" not in meta or "labels" not in meta:
        raise ValueError("checkpoint metadata must carry the skeleton and label table")
    sk = meta["skeleton"]
    skeleton = Skeleton(sk["joint_names"], sk["parents"], sk["ref_lengths"])
    labels = LabelTable(meta["labels"])
    version = f"{CHECKPOINT_VERSION}.{meta.get('step', 0)}"
    return _Loaded(model, skeleton, labels, version)


def create_app(checkpoint: str | Path | None = None, cors_origins=("*",)) -> FastAPI:
    """Build the service; the checkpoint comes from the argument or from the
    CMIB_CHECKPOINT environment variable, and may be absent (503 until then).
    """
    app = FastAPI(title="cmib inference service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )

    path = checkpoint or os.environ.get("CMIB_CHECKPOINT")
    app.state.bundle = load_bundle(path) if path else None

    @app.exception_handler(RequestValidationError)
    async def malformed(request, exc):
        errors = [
            {"loc": list(e.get("loc", ())), "msg": str(e.get("msg", "")), "type": e.get("type", "")}
            for e in exc.errors()
        ]
        return JSONResponse(status_code=422, content={"code": "malformed_request", "errors": errors})

    def bundle() -> _Loaded:
        if app.state.bundle is None:
            raise HTTPException(status_code=503, detail={"code": "model_not_loaded"})
        return app.state.bundle

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "model_loaded": app.state.bundle is not None}

    @app.get("/v1/metadata")
    def metadata():
        b = bundle()
        return {
            "labels": b.labels.names,
            "skeleton": {
                "joint_names": b.skeleton.joint_names,
                "parents": b.skeleton.parents.tolist(),
                "ref_lengths": b.skeleton.ref_lengths.tolist(),
            },
            "T_max": b.model.config.T_max,
            "model_version": b.version,
        }

    @app.post("/v1/infill")
    def handle_infill(req: InfillRequestWire):
        b = bundle()
        cfg = b.model.config

        if req.T > cfg.T_max:
            _reject("T", f"T={req.T} exceeds T_max={cfg.T_max}")
        if req.T < 2:
            _reject("T", f"T={req.T} below the 2-frame minimum")

        if isinstance(req.label, str):
            if req.label not in b.labels:
                raise HTTPException(
                    status_code=422,
                    detail={"code": "unknown_label", "label": req.label,
                            "known": b.labels.names},
                )
            label_id = b.labels.id(req.label)
        else:
            if not 0 <= req.label < len(b.labels):
                raise HTTPException(
                    status_code=422,
                    detail={"code": "unknown_label", "label": req.label,
                            "known": b.labels.names},
                )
            label_id = req.label

        J = cfg.J
        start = _parse_pose(req.start, J, "start")
        target = _parse_pose(req.target, J, "target")
        anchor = None
        if req.anchor is not None:
            if not 1 < req.anchor.frame < req.T:
                _reject(
                    "anchor.frame",
                    f"frame {req.anchor.frame} must lie strictly between 1 and T={req.T}",
                )
            anchor = (req.anchor.frame, _parse_pose(req.anchor.pose, J, "anchor.pose"))

        t0 = time.perf_counter()
        seq = infill(
            b.model, b.skeleton, start, target, req.T, label_id,
            anchor=anchor, fps=req.fps,
        )
        ms = (time.perf_counter() - t0) * 1000.0

        return {
            "frames": [
                {"positions": f.positions.tolist(), "rotations": f.rotations.tolist()}
                for f in seq.frames
            ],
            "generation_ms": ms,
            "model_version": b.version,
            "request": {
                "T": req.T,
                "label": b.labels.name(label_id),
                "label_id": label_id,
                "anchor_frame": req.anchor.frame if req.anchor else None,
                "fps": req.fps,
            },
        }

    return app


def serve(checkpoint: str | Path | None, host: str = "127.0.0.1", port: int = 8080,
          cors_origins=("*",)) -> None:
    """Blocking entry point used by the command line."""
    import uvicorn

    uvicorn.run(create_app(checkpoint, cors_origins), host=host, port=port)
