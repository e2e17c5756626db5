"""Command-line pipeline: parameterize, render, solve, eval, synth, bench, serve.

Every command is deterministic given its inputs and seeds.  Exit codes:
0 success, 2 input/format problems, 3 empty or degenerate data,
4 numerical failures.
"""

import argparse
import sys
from pathlib import Path

import cv2
import numpy as np

from .camera import load_pose, save_pose
from .config import ProjectConfig, load_config
from .datagen import NoiseModel, PoseSampler, oracle_predict, synth_scene
from .errors import (
    BehindCameraError,
    CodecError,
    CorrespondenceError,
    DegenerateConfigurationError,
    GeodesicError,
    MeshFormatError,
    NoConsensusError,
    RegionError,
    SurfregError,
)
from .geodesic import (
    fast_march,
    load_parameterization,
    parameterize,
    save_parameterization,
)
from .metrics import pose_error, summarize, write_error_csv, write_summary_csv
from .pnp import (
    PnPOptions,
    RansacOptions,
    extract_correspondences,
    solve_pnp,
    solve_pnp_ransac,
)
from .raster import load_map, overlay_png_bytes, render_coordinate_map, save_map

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_EMPTY = 3
EXIT_NUMERIC = 4

_EMPTY_ERRORS = (RegionError, CorrespondenceError, DegenerateConfigurationError,
                 NoConsensusError)
_NUMERIC_ERRORS = (GeodesicError, BehindCameraError, np.linalg.LinAlgError,
                   FloatingPointError)
_INPUT_ERRORS = (MeshFormatError, CodecError, SurfregError, FileNotFoundError,
                 IsADirectoryError, PermissionError)


def _load_case(config: ProjectConfig):
    mesh, region = config.load_mesh_and_region()
    return region


def _param_path(config: ProjectConfig, override) -> Path:
    if override:
        return Path(override)
    return Path(config.output_dir) / "parameterization.txt"


def _load_param(config: ProjectConfig, path):
    region = _load_case(config)
    return region, load_parameterization(_param_path(config, path), region)


# ---------------------------------------------------------------------------
# commands

def cmd_parameterize(args) -> int:
    config = load_config(args.config)
    region = _load_case(config)
    param = parameterize(region, config.alpha, config.beta, config.tolerances)
    out = _param_path(config, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_parameterization(out, param, config.tolerances)
    pole_dist = fast_march(region, [config.alpha], config.tolerances).values[config.beta]
    print(f"parameterized {region.n_vertices} vertices "
          f"({len(region.faces)} faces) of {config.mesh_path.name}")
    print(f"pole distance {pole_dist:.6g} mm; meridian {len(param.meridian)} samples, "
          f"length {param.meridian.length():.6g} mm")
    print(f"mu range [{param.mu.min():.6g}, {param.mu.max():.6g}]; "
          f"nu range [{param.nu.min():.6g}, {param.nu.max():.6g}]")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_render(args) -> int:
    config = load_config(args.config)
    _, param = _load_param(config, args.param)
    pose, camera = load_pose(args.pose)
    cmap = render_coordinate_map(param, camera, pose)
    out_map = Path(args.map_out) if args.map_out else Path(config.output_dir) / "map.png"
    out_map.parent.mkdir(parents=True, exist_ok=True)
    save_map(out_map, cmap)
    print(f"rendered {int(cmap.valid.sum())} valid pixels -> {out_map}")
    if args.overlay_out:
        if args.frame:
            frame = cv2.imread(str(args.frame), cv2.IMREAD_COLOR)
            if frame is None:
                raise SurfregError(f"cannot read frame image: {args.frame}")
        else:
            frame = np.zeros((camera.height, camera.width, 3), dtype=np.uint8)
        out_overlay = Path(args.overlay_out)
        out_overlay.parent.mkdir(parents=True, exist_ok=True)
        out_overlay.write_bytes(overlay_png_bytes(param, camera, pose, frame, args.opacity))
        print(f"wrote overlay {out_overlay}")
    return EXIT_OK


def cmd_solve(args) -> int:
    config = load_config(args.config)
    region, param = _load_param(config, args.param)
    cmap = load_map(args.map)
    corr = extract_correspondences(cmap, param, region)
    camera = config.camera
    if args.ransac:
        options = RansacOptions(
            iterations=args.ransac_iterations,
            inlier_threshold_px=args.inlier_threshold,
            seed=args.seed,
            min_inliers=args.min_inliers,
            refine=PnPOptions(max_iterations=args.max_iterations, tol=args.tol),
        )
        result = solve_pnp_ransac(corr, camera, options)
    else:
        result = solve_pnp(corr, camera,
                           PnPOptions(max_iterations=args.max_iterations, tol=args.tol))
    out = Path(args.out) if args.out else Path(config.output_dir) / "pose.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_pose(out, result.pose, camera)
    print(f"correspondences {len(corr)}; inliers {result.inlier_count} "
          f"({result.inlier_ratio:.1%}); rms {result.rms:.4g} px; "
          f"{result.iterations} iterations; converged {result.converged}")
    print(f"wrote {out}")
    return EXIT_OK


def _pose_files(directory: Path) -> dict:
    return {p.stem: p for p in sorted(directory.glob("*.json"))}


def cmd_eval(args) -> int:
    truth_dir, pred_dir = Path(args.truth), Path(args.predicted)
    truth = _pose_files(truth_dir)
    pred = _pose_files(pred_dir)
    if not truth:
        raise CorrespondenceError(f"no pose files in {truth_dir}")
    unmatched = sorted(set(truth) ^ set(pred))
    if unmatched:
        raise SurfregError(f"pose sets differ; unmatched ids: {', '.join(unmatched)}")
    reports = []
    for sample_id in sorted(truth):
        gt_pose, camera = load_pose(truth[sample_id])
        est_pose, _ = load_pose(pred[sample_id])
        reports.append(pose_error(sample_id, est_pose, gt_pose, camera))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_error_csv(out_dir / "errors.csv", reports)
    summaries = summarize(reports)
    write_summary_csv(out_dir / "summary.csv", summaries)
    for name, s in summaries.items():
        print(f"{name}: median {s.median:.4g}, mean {s.mean:.4g}, "
              f"max {s.maximum:.4g} over {s.count} samples")
    print(f"wrote {out_dir / 'errors.csv'} and {out_dir / 'summary.csv'}")
    return EXIT_OK


def _sampler_from(args) -> PoseSampler:
    return PoseSampler(max_angle_deg=args.max_angle, x_mm=args.x_range,
                       y_mm=args.y_range, z_mm=(args.z_near, args.z_far),
                       seed=args.seed)


def cmd_synth(args) -> int:
    config = load_config(args.config)
    _, param = _load_param(config, args.param)
    out_dir = Path(args.out_dir) if args.out_dir else Path(config.output_dir) / "dataset"
    samples = synth_scene(param, config.camera, _sampler_from(args), args.count, out_dir)
    print(f"wrote {len(samples)} samples to {out_dir} (manifest.jsonl + maps/)")
    return EXIT_OK


def _parse_noise(spec: str) -> NoiseModel:
    try:
        kind, mag = spec.split(":")
        return NoiseModel(kind, float(mag))
    except ValueError:
        raise SurfregError(
            f"bad noise spec {spec!r}; expected kind:magnitude") from None


def cmd_bench(args) -> int:
    config = load_config(args.config)
    region, param = _load_param(config, args.param)
    camera = config.camera
    sampler = _sampler_from(args)
    grid = [_parse_noise(s) for s in args.noise] or [NoiseModel("gaussian", 0.0)]
    reports = []
    for noise in grid:
        label = f"{noise.kind}:{noise.magnitude:g}"
        for i in range(args.count):
            rng = np.random.default_rng(sampler.seed ^ i)
            gt = sampler.draw(rng)
            cmap = render_coordinate_map(param, camera, gt)
            noisy = oracle_predict(cmap, NoiseModel(noise.kind, noise.magnitude,
                                                    seed=sampler.seed ^ i))
            corr = extract_correspondences(noisy, param, region)
            if args.max_correspondences and len(corr) > args.max_correspondences:
                pick = rng.choice(len(corr), size=args.max_correspondences, replace=False)
                from .pnp import CorrespondenceSet
                corr = CorrespondenceSet(corr.pixels[pick], corr.points[pick],
                                         corr.weights[pick], corr.width, corr.height)
            if args.ransac:
                result = solve_pnp_ransac(corr, camera, RansacOptions(
                    inlier_threshold_px=args.inlier_threshold, seed=args.seed))
            else:
                result = solve_pnp(corr, camera)
            reports.append(pose_error(f"{label}/{i:03d}", result.pose, gt, camera))
    out_dir = Path(args.out_dir) if args.out_dir else Path(config.output_dir) / "bench"
    out_dir.mkdir(parents=True, exist_ok=True)
    write_error_csv(out_dir / "bench_errors.csv", reports)
    write_summary_csv(out_dir / "bench_summary.csv", summarize(reports))
    print(f"{len(reports)} rows ({len(grid)} noise levels x {args.count} samples) "
          f"-> {out_dir / 'bench_errors.csv'}")
    for noise in grid:
        label = f"{noise.kind}:{noise.magnitude:g}"
        sub = [r for r in reports if r.sample_id.startswith(label + "/")]
        s = summarize(sub)
        print(f"{label}: rot median {s['rot_deg'].median:.4g} deg, "
              f"ez median {s['ez_pct'].median:.4g}%")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .server import build_app

    config = load_config(args.config)
    app = build_app(config, frames_dir=args.frames_dir, param_path=args.param,
                    static_dir=args.static_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument wiring

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surfreg",
        description="Geodesic surface coordinates, coordinate-map rendering, "
                    "and monocular pose recovery.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", required=True, help="case config JSON")

    p = sub.add_parser("parameterize", help="compute and store (mu, nu) for a case")
    add_config(p)
    p.add_argument("--out", help="parameterization file "
                                 "(default <output_dir>/parameterization.txt)")
    p.set_defaults(func=cmd_parameterize)

    p = sub.add_parser("render", help="render a coordinate map (and overlay) at a pose")
    add_config(p)
    p.add_argument("--param", help="parameterization file")
    p.add_argument("--pose", required=True, help="pose JSON")
    p.add_argument("--map-out", help="coordinate map PNG (default <output_dir>/map.png)")
    p.add_argument("--overlay-out", help="also write an overlay PNG here")
    p.add_argument("--frame", help="background image for the overlay (default black)")
    p.add_argument("--opacity", type=float, default=0.5)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("solve", help="recover the pose from a coordinate map")
    add_config(p)
    p.add_argument("--param", help="parameterization file")
    p.add_argument("--map", required=True, help="coordinate map PNG")
    p.add_argument("--out", help="pose JSON (default <output_dir>/pose.json)")
    p.add_argument("--ransac", action="store_true", help="robust consensus solve")
    p.add_argument("--seed", type=int, default=0, help="RANSAC sampling seed")
    p.add_argument("--ransac-iterations", type=int, default=100)
    p.add_argument("--inlier-threshold", type=float, default=3.0,
                   help="RANSAC inlier threshold (px)")
    p.add_argument("--min-inliers", type=int, default=None)
    p.add_argument("--max-iterations", type=int, default=100,
                   help="refinement iteration cap")
    p.add_argument("--tol", type=float, default=1e-10,
                   help="relative RMS decrease treated as converged")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("eval", help="compare predicted pose files against ground truth")
    p.add_argument("--truth", required=True, help="directory of ground-truth pose JSONs")
    p.add_argument("--predicted", required=True, help="directory of predicted pose JSONs")
    p.add_argument("--out-dir", required=True, help="where errors.csv/summary.csv go")
    p.set_defaults(func=cmd_eval)

    def add_sampler(p):
        p.add_argument("--count", "-n", type=int, default=10)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--max-angle", type=float, default=30.0,
                       help="rotation magnitude bound (deg)")
        p.add_argument("--x-range", type=float, default=6.0, help="+- x translation (mm)")
        p.add_argument("--y-range", type=float, default=3.0, help="+- y translation (mm)")
        p.add_argument("--z-near", type=float, default=1100.0)
        p.add_argument("--z-far", type=float, default=1500.0)

    p = sub.add_parser("synth", help="generate a synthetic (pose, map) dataset")
    add_config(p)
    p.add_argument("--param", help="parameterization file")
    p.add_argument("--out-dir", help="dataset directory (default <output_dir>/dataset)")
    add_sampler(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="noise-grid benchmark of the full solve loop")
    add_config(p)
    p.add_argument("--param", help="parameterization file")
    p.add_argument("--out-dir", help="report directory (default <output_dir>/bench)")
    p.add_argument("--noise", action="append", default=[],
                   help="kind:magnitude, repeatable (default gaussian:0)")
    p.add_argument("--ransac", action="store_true")
    p.add_argument("--inlier-threshold", type=float, default=8.0)
    p.add_argument("--max-correspondences", type=int, default=4000,
                   help="subsample cap per solve; 0 keeps all")
    add_sampler(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="serve the manual-registration HTTP API")
    add_config(p)
    p.add_argument("--param", help="parameterization file")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--frames-dir", help="directory of background frame PNGs")
    p.add_argument("--static-dir", help="serve this directory (the browser UI) at /")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _EMPTY_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_EMPTY
    except _NUMERIC_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except _INPUT_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
