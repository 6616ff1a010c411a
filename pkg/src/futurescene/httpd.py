"""Session-scoped HTTP service for the constrained-futures workflow.

Endpoints (JSON in, JSON or PNG out):

    POST /sessions                          {"bundle": path} -> descriptor
    GET  /sessions/{sid}/frame/{n}          -> PNG
    GET  /sessions/{sid}/background         -> PNG
    POST /sessions/{sid}/futures            {vehicle_id, polyline, horizon,
                                             timestep, mode} -> clip manifest
    GET  /sessions/{sid}/clips/{cid}/frame/{k} -> PNG

Generation is synchronous (desk-scale clips render in well under a
second). Repeated identical /futures requests return the cached clip;
the per-vehicle source-pose solve is cached per session and its hit
count is reported so clients can see the shared solve.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse, Response
from PIL import Image
from pydantic import BaseModel

from . import pipeline, sceneio
from .errors import FuturesceneError, MissingFileError
from .posesolve import SolverOptions
from .scenecomp import BackgroundModel

logger = logging.getLogger(__name__)


class OpenSessionRequest(BaseModel):
    bundle: str


class FutureRequest(BaseModel):
    vehicle_id: int
    polyline: list[list[float]]
    horizon: float = 1.0
    timestep: float = 0.2
    mode: str = "appearance"


@dataclass(eq=False)
class Session:
    session_id: str
    bundle: sceneio.SceneBundle
    bundle_hash: str
    directory: Path
    solver: SolverOptions
    background: BackgroundModel | None = None
    solves: dict = field(default_factory=dict)       # (frame, vid) -> report
    solve_cache_hits: int = 0
    clips: dict = field(default_factory=dict)        # cid -> GeneratedClip
    request_cache: dict = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def get_background(self) -> BackgroundModel:
        if self.background is None:
            self.background = pipeline.bundle_background(self.bundle)
        return self.background

    def solve_cached(self, frame: int, vehicle_id: int):
        key = (frame, vehicle_id)
        if key in self.solves:
            self.solve_cache_hits += 1
            return self.solves[key]
        report = pipeline.solve_vehicle(self.bundle, frame, vehicle_id,
                                        self.solver)
        self.solves[key] = report
        return report


def _png_response(image: np.ndarray) -> Response:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(buf, format="PNG")
    return Response(content=buf.getvalue(), media_type="image/png")


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def create_app(workdir: Path | str = "futurescene_sessions",
               solver: SolverOptions | None = None) -> FastAPI:
    workdir = Path(workdir)
    solver = solver or SolverOptions()
    app = FastAPI(title="futurescene", version=pipeline.TOOL_VERSION)
    sessions: dict[str, Session] = {}
    counter = {"n": 0}
    registry_lock = threading.Lock()

    @app.exception_handler(FuturesceneError)
    async def _on_domain_error(_, exc: FuturesceneError):
        status = 404 if isinstance(exc, MissingFileError) else 422
        return _error(status, str(exc))

    def _session(sid: str) -> Session:
        if sid not in sessions:
            raise MissingFileError(f"no session {sid}")
        return sessions[sid]

    @app.post("/sessions")
    def open_session(req: OpenSessionRequest):
        bundle = sceneio.load_bundle(req.bundle)
        with registry_lock:
            counter["n"] += 1
            sid = f"s{counter['n']}"
        session_dir = workdir / sid
        session_dir.mkdir(parents=True, exist_ok=True)
        session = Session(
            session_id=sid, bundle=bundle, bundle_hash=bundle.bundle_hash(),
            directory=session_dir, solver=solver)
        sessions[sid] = session
        first = bundle.frame_indices()[0]
        vehicles = []
        for vid in sorted(bundle.tracks):
            entry = bundle.tracks[vid].entry_at(first)
            vehicles.append({
                "id": vid,
                "cad": bundle.cad_assignments.get(vid, 1),
                "bbox": list(entry.bbox) if entry else None,
                "frames": len(bundle.tracks[vid]),
            })
        return {
            "session_id": sid,
            "bundle_hash": session.bundle_hash,
            "frame_count": len(bundle.frames),
            "image_size": list(bundle.frame_size),
            "fps": bundle.fps,
            "vehicles": vehicles,
            "cads": sorted(set(bundle.cad_assignments.values()) | set(range(1, 11))),
            "approximate_intrinsics": bundle.approximate_intrinsics,
        }

    @app.get("/sessions/{sid}/frame/{n}")
    def get_frame(sid: str, n: int):
        session = _session(sid)
        return _png_response(session.bundle.load_frame(n))

    @app.get("/sessions/{sid}/background")
    def get_background(sid: str):
        session = _session(sid)
        with session.lock:
            bg = session.get_background()
        return _png_response(bg.image)

    @app.post("/sessions/{sid}/futures")
    def generate_future(sid: str, req: FutureRequest):
        session = _session(sid)
        if req.vehicle_id not in session.bundle.tracks:
            return _error(422, f"unknown vehicle {req.vehicle_id}")
        if req.mode not in ("normals", "appearance"):
            return _error(422, f"unknown mode {req.mode!r}")
        if len(req.polyline) < 2:
            return _error(422, "polyline needs at least 2 points")

        cache_key = hashlib.sha256(json.dumps(
            req.model_dump(), sort_keys=True).encode()).hexdigest()[:16]
        with session.lock:
            if cache_key in session.request_cache:
                cid = session.request_cache[cache_key]
                return _clip_payload(session, cid)
            try:
                solve = session.solve_cached(0, req.vehicle_id)
            except FuturesceneError as exc:
                return _error(
                    422, f"pose solve failed for vehicle {req.vehicle_id}: "
                         f"{exc}")
            opts = pipeline.GenerateOptions(
                mode=req.mode, horizon=req.horizon, timestep=req.timestep,
                base_frame=0, solver=session.solver)
            cid = f"c{len(session.clips)}"
            clip = pipeline.generate_clip(
                session.bundle, [req.vehicle_id], opts,
                polyline=[tuple(p) for p in req.polyline],
                background=session.get_background(),
                clip_id=cid, solved={(0, req.vehicle_id): solve})
            sceneio.write_outputs(clip.frames, clip.manifest,
                                  session.directory / cid)
            session.clips[cid] = clip
            session.request_cache[cache_key] = cid
            return _clip_payload(session, cid)

    def _clip_payload(session: Session, cid: str):
        clip = session.clips[cid]
        m = clip.manifest
        return {
            "clip_id": cid,
            "frames": [
                f"/sessions/{session.session_id}/clips/{cid}/frame/{k}"
                for k in range(len(m.frames))
            ],
            "offsets": [ref.offset for ref in m.frames],
            "timestep": m.timestep,
            "horizon": m.horizon,
            "mode": m.mode,
            "plan": [
                {
                    "vehicle_id": p.vehicle_id,
                    "residual_px": p.residual,
                    "iterations": p.iterations,
                    "yaw_delta_deg": p.yaw_delta_deg,
                    "poses": p.n_poses,
                }
                for p in m.plans
            ],
            "solve_cache_hits": session.solve_cache_hits,
            "options_hash": m.options_hash,
        }

    @app.get("/sessions/{sid}/clips/{cid}/frame/{k}")
    def get_clip_frame(sid: str, cid: str, k: int):
        session = _session(sid)
        if cid not in session.clips:
            return _error(404, f"no clip {cid}")
        clip = session.clips[cid]
        if not 0 <= k < len(clip.frames):
            return _error(404, f"clip {cid} has no frame {k}")
        return _png_response(clip.frames[k])

    return app
