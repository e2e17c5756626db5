"""HTTP service for manual registration sessions.

One service instance wraps one case (mesh, region, poles, camera).  Each
background frame gets an independent in-memory session holding the
current pose and a revision counter; edits must cite the revision they
were based on, and stale writes are rejected so two racing clients
cannot silently overwrite each other.  Nothing is written to disk until
an explicit save request.
"""

import json
import threading
from pathlib import Path

import cv2
import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse, Response
from fastapi.staticfiles import StaticFiles

from .camera import CameraModel, Pose, pose_from_json, pose_to_json, save_pose
from .config import ProjectConfig
from .errors import SurfregError
from .geodesic import load_parameterization
from .raster import overlay_png_bytes


class Session:
    """Mutable pose state for one frame; mutations serialize on `lock`."""

    def __init__(self, pose: Pose, camera: CameraModel):
        self.pose = pose
        self.camera = camera
        self.revision = 0
        self.lock = threading.Lock()

    def record(self) -> dict:
        return {"revision": self.revision,
                "pose": json.loads(pose_to_json(self.pose, self.camera))}


def _default_pose(param, camera: CameraModel) -> Pose:
    """Identity-rotation pose placing the region centered in view, sized
    to roughly a quarter of the image's shorter side."""
    verts = param.region.vertices
    centroid = verts.mean(axis=0)
    radius = float(np.linalg.norm(verts - centroid, axis=1).max())
    z = 4.0 * camera.focal * max(radius, 1e-9) / min(camera.width, camera.height)
    return Pose(np.eye(3), np.array([-centroid[0], -centroid[1], z - centroid[2]]))


def _parse_pose_record(rec, context: str) -> tuple[Pose, CameraModel]:
    if not isinstance(rec, dict):
        raise HTTPException(status_code=400, detail=f"{context}: expected a pose record object")
    try:
        return pose_from_json(json.dumps(rec), context=context)
    except SurfregError as e:
        raise HTTPException(status_code=400, detail=str(e)) from None


def build_app(config: ProjectConfig, frames_dir=None, param_path=None,
              static_dir=None) -> FastAPI:
    """Assemble the service around one loaded case.

    ``frames_dir`` holds the background frame PNGs (frame id = file
    stem; default ``<output_dir>/frames``).  Saved ground-truth poses go
    to ``<output_dir>/poses/<frame id>.json`` and seed the session for
    that frame on the next launch.
    """
    mesh, region = config.load_mesh_and_region()
    param = load_parameterization(
        Path(param_path) if param_path else Path(config.output_dir) / "parameterization.txt",
        region)
    frames_root = Path(frames_dir) if frames_dir else Path(config.output_dir) / "frames"
    poses_root = Path(config.output_dir) / "poses"
    sessions: dict[str, Session] = {}
    registry_lock = threading.Lock()

    app = FastAPI(title="surfreg registration service")

    def frame_path(frame_id: str) -> Path:
        path = frames_root / f"{frame_id}.png"
        if "/" in frame_id or "\\" in frame_id or not path.is_file():
            raise HTTPException(status_code=404, detail=f"unknown frame id {frame_id!r}")
        return path

    def session_for(frame_id: str) -> Session:
        frame_path(frame_id)  # 404 before creating state for bogus ids
        with registry_lock:
            sess = sessions.get(frame_id)
            if sess is None:
                saved = poses_root / f"{frame_id}.json"
                if saved.is_file():
                    pose, camera = pose_from_json(saved.read_text(encoding="utf-8"),
                                                  context=str(saved))
                else:
                    pose, camera = _default_pose(param, config.camera), config.camera
                sess = sessions[frame_id] = Session(pose, camera)
            return sess

    @app.get("/api/frames")
    def list_frames():
        ids = sorted(p.stem for p in frames_root.glob("*.png")) if frames_root.is_dir() else []
        return {"frames": [{"id": i, "url": f"/api/frame/{i}"} for i in ids]}

    @app.get("/api/frame/{frame_id}")
    def get_frame(frame_id: str):
        return FileResponse(frame_path(frame_id), media_type="image/png")

    @app.post("/api/render")
    def render(body: dict):
        frame_id = body.get("frame")
        if not isinstance(frame_id, str):
            raise HTTPException(status_code=400, detail="render request needs a frame id")
        pose, camera = _parse_pose_record(body.get("pose"), "render request pose")
        opacity = body.get("opacity", 0.5)
        if not isinstance(opacity, (int, float)) or not 0.0 <= opacity <= 1.0:
            raise HTTPException(status_code=400, detail=f"opacity {opacity!r} outside [0, 1]")
        frame = cv2.imread(str(frame_path(frame_id)), cv2.IMREAD_COLOR)
        if frame is None:
            raise HTTPException(status_code=400,
                                detail=f"frame {frame_id!r} is not a decodable image")
        try:
            png = overlay_png_bytes(param, camera, pose, frame, float(opacity))
        except SurfregError as e:
            raise HTTPException(status_code=400, detail=str(e)) from None
        return Response(content=png, media_type="image/png")

    @app.get("/api/pose/{frame_id}")
    def get_pose(frame_id: str):
        sess = session_for(frame_id)
        with sess.lock:
            return sess.record()

    @app.post("/api/pose/{frame_id}")
    def post_pose(frame_id: str, body: dict):
        sess = session_for(frame_id)
        revision = body.get("revision")
        if not isinstance(revision, int):
            raise HTTPException(status_code=400,
                                detail="pose write needs the integer revision it was based on")
        pose, camera = _parse_pose_record(body.get("pose"), "pose write")
        with sess.lock:
            if revision != sess.revision:
                raise HTTPException(
                    status_code=409,
                    detail={"error": f"stale revision {revision}; current is {sess.revision}",
                            **sess.record()})
            sess.pose, sess.camera = pose, camera
            sess.revision += 1
            return sess.record()

    @app.post("/api/pose/{frame_id}/save")
    def save_session(frame_id: str):
        sess = session_for(frame_id)
        with sess.lock:
            poses_root.mkdir(parents=True, exist_ok=True)
            out = poses_root / f"{frame_id}.json"
            save_pose(out, sess.pose, sess.camera)
            return {"revision": sess.revision, "path": str(out)}

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
