"""Pinhole camera, rigid pose, projection, and the pose file format.

The projection convention is (u, v) = (focal * x / z + cx, focal * y / z + cy)
with (x, y, z) = R * p + t and the camera looking along +z.  ``focal`` is a
single pixel-scaled scalar (default 50,000); no distortion model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, SurfregError

DEFAULT_FOCAL = 50_000.0
ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class CameraModel:
    """Intrinsics: focal scalar, image size, principal point.

    The principal point defaults to the image center.
    """

    width: int
    height: int
    focal: float = DEFAULT_FOCAL
    cx: float = None
    cy: float = None

    def __post_init__(self):
        if self.cx is None:
            object.__setattr__(self, "cx", self.width / 2.0)
        if self.cy is None:
            object.__setattr__(self, "cy", self.height / 2.0)
        if not (self.width > 0 and self.height > 0):
            raise SurfregError(f"image size {self.width}x{self.height} not positive")
        if not self.focal > 0:
            raise SurfregError(f"focal {self.focal} not positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise SurfregError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    def to_record(self) -> dict:
        return {"focal": self.focal, "width": self.width, "height": self.height,
                "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_record(cls, rec: dict) -> "CameraModel":
        try:
            return cls(width=int(rec["width"]), height=int(rec["height"]),
                       focal=float(rec["focal"]), cx=float(rec["cx"]), cy=float(rec["cy"]))
        except KeyError as e:
            raise SurfregError(f"camera record missing field {e}") from None


@dataclass(frozen=True)
class Pose:
    """Rigid transform from mesh coordinates (mm) to camera coordinates."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.ascontiguousarray(self.rotation, dtype=np.float64)
        t = np.ascontiguousarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise SurfregError(f"rotation shape {r.shape}, expected (3, 3)")
        if np.abs(r.T @ r - np.eye(3)).max() > ORTHO_TOL:
            raise SurfregError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise SurfregError("rotation determinant differs from +1 by more than 1e-9")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Map mesh-frame points (mm) into the camera frame."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """Pose applying ``other`` first, then this one."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def to_record(self) -> dict:
        return {"rotation": self.rotation.tolist(),
                "translation_mm": self.translation.tolist()}

    @classmethod
    def from_record(cls, rec: dict) -> "Pose":
        try:
            return cls(np.asarray(rec["rotation"], dtype=np.float64),
                       np.asarray(rec["translation_mm"], dtype=np.float64))
        except KeyError as e:
            raise SurfregError(f"pose record missing field {e}") from None


def project(camera: CameraModel, pose: Pose, points: np.ndarray) -> np.ndarray:
    """Pixel coordinates of mesh-frame points.

    Raises
    ------
    BehindCameraError
        If any point lands at camera-space z <= 0.
    """
    p = np.asarray(points, dtype=np.float64)
    single = p.ndim == 1
    pc = pose.transform(p.reshape(-1, 3))
    z = pc[:, 2]
    if np.any(z <= 0):
        i = int(np.argmin(z))
        raise BehindCameraError(f"point {i} at camera z = {z[i]:.6g} mm is not in front of the camera")
    uv = np.empty((len(pc), 2))
    uv[:, 0] = camera.focal * pc[:, 0] / z + camera.cx
    uv[:, 1] = camera.focal * pc[:, 1] / z + camera.cy
    return uv[0] if single else uv


POSE_FORMAT = "surfreg-pose"
POSE_VERSION = 1


def pose_to_json(pose: Pose, camera: CameraModel) -> str:
    rec = {"format": POSE_FORMAT, "version": POSE_VERSION}
    rec.update(pose.to_record())
    rec["camera"] = camera.to_record()
    return json.dumps(rec, indent=2, sort_keys=True) + "\n"


def pose_from_json(text: str, context: str = "pose record") -> tuple[Pose, CameraModel]:
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as e:
        raise SurfregError(f"{context}: not valid JSON ({e})") from None
    if not isinstance(rec, dict) or rec.get("format") != POSE_FORMAT:
        raise SurfregError(f"{context}: not a {POSE_FORMAT} record")
    if rec.get("version") != POSE_VERSION:
        raise SurfregError(f"{context}: unsupported version {rec.get('version')!r}")
    return Pose.from_record(rec), CameraModel.from_record(rec.get("camera", {}))


def save_pose(path, pose: Pose, camera: CameraModel) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(pose_to_json(pose, camera))


def load_pose(path) -> tuple[Pose, CameraModel]:
    with open(path, "r", encoding="utf-8") as fh:
        return pose_from_json(fh.read(), context=str(path))
