"""Per-case project configuration.

A case bundles one mesh, the registered region on it, the two pole
vertices, the camera, and tolerance overrides — one self-describing
JSON file per case, so a study with twelve specimens is twelve files.
Relative paths resolve against the config file's own directory.
"""

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .camera import CameraModel
from .errors import SurfregError
from .geodesic import GeodesicTolerances
from .mesh import RegionMesh, TriangleMesh, extract_region, load_mesh, load_region_ids

CONFIG_FORMAT = "surfreg-config"
CONFIG_VERSION = 1


@dataclass
class ProjectConfig:
    """One registration case: what to load, where the poles are, how to
    image it, and where outputs go.

    ``region_path`` may be None, meaning the region covers the whole
    mesh.  ``alpha``/``beta`` index vertices of the region (not the
    parent mesh).
    """

    mesh_path: Path
    region_path: Path
    alpha: int
    beta: int
    camera: CameraModel
    output_dir: Path
    tolerances: GeodesicTolerances = field(default_factory=GeodesicTolerances)

    def load_mesh_and_region(self) -> tuple[TriangleMesh, RegionMesh]:
        mesh = load_mesh(self.mesh_path)
        if self.region_path is None:
            region = RegionMesh(mesh, np.arange(mesh.n_vertices))
        else:
            region = extract_region(mesh, load_region_ids(self.region_path))
        for name, pole in (("alpha", self.alpha), ("beta", self.beta)):
            if not 0 <= pole < region.n_vertices:
                raise SurfregError(
                    f"pole {name}={pole} outside the region "
                    f"({region.n_vertices} vertices)")
        return mesh, region


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_config(path) -> ProjectConfig:
    """Parse and validate a case file; referenced inputs must exist."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SurfregError(f"missing config file: {path}") from None
    except json.JSONDecodeError as e:
        raise SurfregError(f"config {path} is not valid JSON: {e}") from None
    if doc.get("format") != CONFIG_FORMAT or doc.get("version") != CONFIG_VERSION:
        raise SurfregError(f"not a {CONFIG_FORMAT} v{CONFIG_VERSION} file: {path}")
    for key in ("mesh", "alpha", "beta", "camera", "output_dir"):
        if key not in doc:
            raise SurfregError(f"config {path} lacks required field {key!r}")

    base = path.parent
    mesh_path = _resolve(base, doc["mesh"])
    if not mesh_path.exists():
        raise SurfregError(f"missing mesh file: {mesh_path}")
    region_path = None
    if doc.get("region") is not None:
        region_path = _resolve(base, doc["region"])
        if not region_path.exists():
            raise SurfregError(f"missing region file: {region_path}")

    tol_fields = {}
    for name, value in doc.get("tolerances", {}).items():
        if name not in GeodesicTolerances.__dataclass_fields__:
            raise SurfregError(f"unknown tolerance {name!r} in {path}")
        kind = GeodesicTolerances.__dataclass_fields__[name].type
        tol_fields[name] = int(value) if kind in (int, "int") else float(value)

    return ProjectConfig(
        mesh_path=mesh_path,
        region_path=region_path,
        alpha=int(doc["alpha"]),
        beta=int(doc["beta"]),
        camera=CameraModel.from_record(doc["camera"]),
        output_dir=_resolve(base, doc["output_dir"]),
        tolerances=GeodesicTolerances(**tol_fields),
    )


def save_config(path, config: ProjectConfig) -> None:
    """Write a case file; paths are stored as given (absolute stay absolute)."""
    doc = {
        "format": CONFIG_FORMAT,
        "version": CONFIG_VERSION,
        "mesh": str(config.mesh_path),
        "region": None if config.region_path is None else str(config.region_path),
        "alpha": config.alpha,
        "beta": config.beta,
        "camera": config.camera.to_record(),
        "output_dir": str(config.output_dir),
        "tolerances": {f.name: getattr(config.tolerances, f.name)
                       for f in fields(config.tolerances)},
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
