"""Marker-free 2D-3D registration: geodesic surface coordinates, dense
coordinate maps, and monocular PnP pose recovery."""

from .camera import CameraModel, Pose, load_pose, project, save_pose
from .config import ProjectConfig, load_config, save_config
from .datagen import (
    AugmentSpec,
    LabeledPatch,
    NoiseModel,
    PoseSampler,
    augment,
    make_patch,
    oracle_predict,
    read_manifest,
    synth_scene,
    transform_patch,
)
from .geodesic import (
    DistanceField,
    GeodesicPath,
    SurfaceParameterization,
    cut_along_meridian,
    fast_march,
    load_parameterization,
    parameterize,
    save_parameterization,
    trace_meridian,
    transfer_parameterization,
)
from .mesh import RegionMesh, TriangleMesh, extract_region, load_mesh, save_mesh
from .metrics import (
    ErrorSummary,
    PoseErrorReport,
    bce,
    combined_loss,
    map_losses,
    mse,
    pose_error,
    rotation_error,
    ssim,
    summarize,
    translation_error,
    write_error_csv,
    write_summary_csv,
)
from .pnp import (
    CorrespondenceSet,
    PnPOptions,
    PnPResult,
    RansacOptions,
    extract_correspondences,
    load_correspondences,
    reprojection_jacobian,
    reprojection_residuals,
    save_correspondences,
    solve_pnp,
    solve_pnp_ransac,
)
from .raster import (
    CoordinateMap,
    decode_map,
    encode_map,
    load_map,
    overlay_png_bytes,
    render_coordinate_map,
    render_overlay,
    save_map,
)

__version__ = "0.1.0"

__all__ = [
    "TriangleMesh",
    "RegionMesh",
    "extract_region",
    "load_mesh",
    "save_mesh",
    "DistanceField",
    "GeodesicPath",
    "SurfaceParameterization",
    "fast_march",
    "trace_meridian",
    "cut_along_meridian",
    "parameterize",
    "transfer_parameterization",
    "save_parameterization",
    "load_parameterization",
    "CameraModel",
    "Pose",
    "project",
    "save_pose",
    "load_pose",
    "CoordinateMap",
    "render_coordinate_map",
    "render_overlay",
    "encode_map",
    "decode_map",
    "save_map",
    "load_map",
    "CorrespondenceSet",
    "PnPOptions",
    "PnPResult",
    "RansacOptions",
    "extract_correspondences",
    "save_correspondences",
    "load_correspondences",
    "reprojection_residuals",
    "reprojection_jacobian",
    "solve_pnp",
    "solve_pnp_ransac",
    "PoseErrorReport",
    "ErrorSummary",
    "rotation_error",
    "translation_error",
    "pose_error",
    "bce",
    "mse",
    "ssim",
    "combined_loss",
    "map_losses",
    "summarize",
    "write_error_csv",
    "write_summary_csv",
    "LabeledPatch",
    "NoiseModel",
    "AugmentSpec",
    "PoseSampler",
    "make_patch",
    "transform_patch",
    "augment",
    "oracle_predict",
    "synth_scene",
    "read_manifest",
    "ProjectConfig",
    "load_config",
    "save_config",
    "overlay_png_bytes",
    "__version__",
]
