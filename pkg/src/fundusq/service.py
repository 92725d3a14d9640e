"""HTTP service: model scoring and the human-annotation workflow.

Annotations are persisted to an append-only line-oriented JSON log; a 201
is only returned after the line is flushed and fsynced, and the log is
replayed on startup, so acknowledged records survive restarts.
"""

from __future__ import annotations

import io
import json
import os
import threading
import time
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import numpy as np
from fastapi import FastAPI, File, Header, Query, Response, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel

from . import explain
from .datasets import DatasetManifest, load_manifest
from .errors import AllBlackImage
from .imaging import ImageTensor, preprocess, save_image
from .metrics import binarize
from .qmodel import ModelCheckpoint, QualityModel, load_checkpoint, predict_scores
from .scale import (
    AnnotationRecord,
    ReferenceScale,
    export_labels,
    load_scale,
    validate_annotation,
)

__all__ = ["ServiceConfig", "create_app", "serve"]

DEFAULT_THRESHOLD = 6.5
DEFAULT_LEASE_SECONDS = 600.0


@dataclass
class ServiceConfig:
    """Paths and knobs for one service instance; all paths optional.

    Endpoints whose backing artifact is missing answer 503.
    """

    checkpoint_path: str | None = None
    scale_path: str | None = None
    queue_manifest_path: str | None = None
    annotation_log_path: str | None = None
    artifacts_dir: str | None = None
    default_threshold: float = DEFAULT_THRESHOLD
    lease_seconds: float = DEFAULT_LEASE_SECONDS
    host: str = "127.0.0.1"
    port: int = 8000
    # Injectable clock so lease expiry is testable.
    clock: Callable[[], float] = time.monotonic

    @classmethod
    def from_file(cls, path: str | Path) -> "ServiceConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        known = {
            "checkpoint_path",
            "scale_path",
            "queue_manifest_path",
            "annotation_log_path",
            "artifacts_dir",
            "default_threshold",
            "lease_seconds",
            "host",
            "port",
        }
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown service config keys: {sorted(unknown)}")
        return cls(**raw)

    def with_env_overrides(self) -> "ServiceConfig":
        """Environment variables FUNDUSQ_* override file values."""
        mapping = {
            "FUNDUSQ_CHECKPOINT": "checkpoint_path",
            "FUNDUSQ_SCALE": "scale_path",
            "FUNDUSQ_QUEUE": "queue_manifest_path",
            "FUNDUSQ_ANNOTATION_LOG": "annotation_log_path",
            "FUNDUSQ_ARTIFACTS": "artifacts_dir",
        }
        for env, attr in mapping.items():
            if env in os.environ:
                setattr(self, attr, os.environ[env])
        if "FUNDUSQ_THRESHOLD" in os.environ:
            self.default_threshold = float(os.environ["FUNDUSQ_THRESHOLD"])
        return self


class AnnotationIn(BaseModel):
    image_id: str
    score: float
    scale_version: str
    grader_id: str | None = None
    record_id: str | None = None
    timestamp: str | None = None


class _State:
    """Mutable service state; annotation appends go through one lock."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.model: QualityModel | None = None
        self.meta: ModelCheckpoint | None = None
        self.scale: ReferenceScale | None = None
        self.queue: DatasetManifest | None = None
        self.annotations: list[AnnotationRecord] = []
        self.leases: dict[str, tuple[str, float]] = {}  # image_id -> (grader, expiry)
        self.log_lock = threading.Lock()

        if config.checkpoint_path:
            self.model, self.meta = load_checkpoint(config.checkpoint_path)
            self.model.eval()
        if config.scale_path:
            self.scale = load_scale(config.scale_path)
        if config.queue_manifest_path:
            self.queue = load_manifest(config.queue_manifest_path)
        if config.annotation_log_path:
            self._replay_log(Path(config.annotation_log_path))

    def _replay_log(self, path: Path) -> None:
        if not path.exists():
            return
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    self.annotations.append(AnnotationRecord.from_dict(json.loads(line)))

    def append_annotation(self, rec: AnnotationRecord) -> None:
        """Durable append: the record is on disk before this returns."""
        if not self.config.annotation_log_path:
            raise RuntimeError("no annotation log configured")
        with self.log_lock:
            with open(self.config.annotation_log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec.to_dict()) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self.annotations.append(rec)

    def annotated_image_ids(self) -> set[str]:
        return {a.image_id for a in self.annotations}

    def open_tasks(self) -> list:
        assert self.queue is not None
        done = self.annotated_image_ids()
        return [r for r in self.queue.records if r.id not in done]


def create_app(config: ServiceConfig) -> FastAPI:
    state = _State(config)
    app = FastAPI(title="fundusq scoring and annotation service")
    # The annotator UI may be served from another origin; the service has
    # no auth beyond the grader header, so permissive CORS is consistent.
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.fundusq = state

    @app.post("/v1/score")
    async def score(
        file: UploadFile = File(...),
        threshold: float | None = Query(default=None),
        cam: bool = Query(default=False),
    ):
        if state.model is None or state.meta is None:
            return JSONResponse({"error": "model not loaded"}, status_code=503)
        data = await file.read()
        try:
            with Image.open(io.BytesIO(data)) as img:
                arr = np.asarray(img.convert("RGB"), dtype=np.float32)
        except (UnidentifiedImageError, OSError):
            return JSONResponse({"error": "undecodable image"}, status_code=400)
        raw_image = ImageTensor(arr, normalized=False)
        try:
            prepped = preprocess(raw_image, state.meta.preprocess)
        except AllBlackImage as e:
            return JSONResponse({"error": str(e)}, status_code=422)
        raw_score = predict_scores(state.model, [prepped])[0]
        clamped = float(min(max(raw_score, 1.0), 10.0))
        thr = threshold if threshold is not None else state.config.default_threshold
        label = binarize([clamped], thr)[0]
        body = {
            "score": clamped,
            "label": label.value,
            "threshold": thr,
            "model_version": state.meta.model_version,
            "raw_score": float(raw_score),
        }
        if cam:
            artifacts = Path(state.config.artifacts_dir or ".")
            artifacts.mkdir(parents=True, exist_ok=True)
            heat = explain.grad_cam(state.model, prepped)
            blended = explain.overlay(heat, prepped, alpha=0.5)
            cam_path = artifacts / f"cam-{uuid.uuid4().hex}.png"
            save_image(blended, cam_path)
            body["cam_uri"] = str(cam_path)
        return JSONResponse(body)

    @app.get("/v1/reference-scale")
    def reference_scale(response: Response):
        if state.scale is None:
            return JSONResponse({"error": "no scale configured"}, status_code=503)
        response.headers["X-Scale-Version"] = state.scale.version
        return JSONResponse(
            state.scale.to_dict(), headers={"X-Scale-Version": state.scale.version}
        )

    @app.get("/v1/annotation/next")
    def next_task(x_grader_id: str | None = Header(default=None)):
        if not x_grader_id:
            return JSONResponse({"error": "missing X-Grader-Id header"}, status_code=400)
        if state.queue is None:
            return JSONResponse({"error": "no annotation queue configured"}, status_code=503)
        now = state.config.clock()
        with state.log_lock:
            state.leases = {
                img: (grader, expiry)
                for img, (grader, expiry) in state.leases.items()
                if expiry > now
            }
            open_tasks = state.open_tasks()
            remaining = len(open_tasks)
            chosen = None
            for rec in open_tasks:
                lease = state.leases.get(rec.id)
                if lease is None or lease[0] == x_grader_id:
                    chosen = rec
                    break
            if chosen is None:
                return Response(status_code=204)
            state.leases[chosen.id] = (x_grader_id, now + state.config.lease_seconds)
        scale_version = state.scale.version if state.scale else ""
        return JSONResponse(
            {
                "task_id": chosen.id,
                "image_uri": chosen.image_uri,
                "remaining": remaining,
                "scale_version": scale_version,
            }
        )

    @app.post("/v1/annotation")
    def submit_annotation(
        body: AnnotationIn, x_grader_id: str | None = Header(default=None)
    ):
        if state.scale is None or state.queue is None:
            return JSONResponse(
                {"error": "annotation workflow not configured"}, status_code=503
            )
        grader = body.grader_id or x_grader_id
        if not grader:
            return JSONResponse({"error": "missing grader id"}, status_code=400)
        if body.image_id not in state.queue.ids():
            return JSONResponse(
                {"error": f"unknown task {body.image_id!r}"}, status_code=409
            )
        rec = AnnotationRecord(
            record_id=body.record_id or uuid.uuid4().hex,
            image_id=body.image_id,
            grader_id=grader,
            score=body.score,
            timestamp=body.timestamp or datetime.now(timezone.utc).isoformat(),
            scale_version=body.scale_version,
        )
        violations = validate_annotation(rec, state.scale)
        if violations:
            return JSONResponse(
                {"violations": [{"kind": v.kind, "message": v.message} for v in violations]},
                status_code=422,
            )
        # Idempotent retries: an identical record id for the same image and
        # grader is acknowledged without appending a duplicate log line.
        duplicate = any(
            a.record_id == rec.record_id
            and a.image_id == rec.image_id
            and a.grader_id == rec.grader_id
            for a in state.annotations
        )
        if not duplicate:
            state.append_annotation(rec)
        with state.log_lock:
            state.leases.pop(rec.image_id, None)
        return JSONResponse({"record_id": rec.record_id}, status_code=201)

    @app.get("/v1/annotation/export")
    def export():
        uri_lookup = {}
        if state.queue is not None:
            uri_lookup = {r.id: r.image_uri for r in state.queue.records}
        records = export_labels(
            list(state.annotations), image_uri_lookup=uri_lookup
        )
        lines = []
        for r in records:
            lines.append(
                json.dumps(
                    {
                        "id": r.id,
                        "image_uri": r.image_uri,
                        "source": r.source,
                        "quality": r.quality,
                    }
                )
            )
        return PlainTextResponse(
            "\n".join(lines) + ("\n" if lines else ""),
            media_type="application/x-ndjson",
        )

    return app


def serve(config: ServiceConfig) -> None:
    """Run the service under uvicorn (blocking)."""
    import uvicorn

    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port)
