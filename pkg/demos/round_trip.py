"""Narrated end-to-end walk through the registration pipeline.

Builds the synthetic landmark patch, parameterizes it, renders the dense
coordinate map at a hidden pose, corrupts the map the way an imperfect
predictor would, recovers the pose robustly, and reports how close it got.
Writes the intermediate images next to this script under ``out/`` so they
can be eyeballed.

Run:  python3 demos/round_trip.py
"""

from pathlib import Path

import numpy as np

from surfreg.camera import CameraModel, Pose
from surfreg.datagen import NoiseModel, PoseSampler, oracle_predict
from surfreg.geodesic import parameterize
from surfreg.metrics import rotation_error, translation_error
from surfreg.pnp import (
    CorrespondenceSet,
    RansacOptions,
    extract_correspondences,
    solve_pnp_ransac,
)
from surfreg.raster import render_coordinate_map, save_map
from surfreg.synthetic import landmark_patch

OUT = Path(__file__).resolve().parent / "out"


def main() -> None:
    OUT.mkdir(exist_ok=True)

    print("== 1. surface and coordinates ==")
    region, alpha, beta = landmark_patch(121, 61)
    print(f"patch: {region.n_vertices} vertices, {len(region.faces)} faces, "
          f"poles at vertices {alpha} / {beta}")
    param = parameterize(region, alpha, beta)
    print(f"latitude range  [{param.mu.min():.4f}, {param.mu.max():.4f}]")
    print(f"longitude range [{param.nu.min():.4f}, {param.nu.max():.4f}]")

    print("\n== 2. a hidden pose and its coordinate map ==")
    camera = CameraModel(1920, 1080, 50_000.0)
    sampler = PoseSampler(seed=11)
    truth: Pose = sampler.draw(np.random.default_rng(11))
    print(f"hidden translation (mm): {np.round(truth.translation, 3)}")
    gt_map = render_coordinate_map(param, camera, truth)
    save_map(OUT / "map_clean.png", gt_map)
    print(f"rendered {int(gt_map.valid.sum())} valid pixels -> {OUT / 'map_clean.png'}")

    print("\n== 3. predictor-style corruption ==")
    noisy = oracle_predict(gt_map, NoiseModel("gaussian", 0.02, seed=5))
    noisy = oracle_predict(noisy, NoiseModel("outlier", 0.10, seed=6))
    save_map(OUT / "map_noisy.png", noisy)
    print("added sigma=0.02 gaussian coordinate noise, then re-randomized 10% "
          "of pixels outright")

    print("\n== 4. pose recovery ==")
    corr = extract_correspondences(noisy, param, region)
    rng = np.random.default_rng(7)
    if len(corr) > 4000:
        keep = rng.choice(len(corr), 4000, replace=False)
        corr = CorrespondenceSet(corr.pixels[keep], corr.points[keep],
                                 corr.weights[keep], corr.width, corr.height)
    result = solve_pnp_ransac(corr, camera,
                              RansacOptions(seed=7, inlier_threshold_px=8.0))
    print(f"consensus solve: {result.inlier_count}/{len(corr)} inliers, "
          f"rms {result.rms:.3f} px, converged={result.converged}")

    print("\n== 5. how close? ==")
    rot = rotation_error(truth.rotation, result.pose.rotation)
    ex, ey, ez = translation_error(truth.translation, result.pose.translation, camera)
    print(f"rotation error {rot:.4f} deg")
    print(f"translation error x {ex:.4f} mm, y {ey:.4f} mm, depth {ez:.4f}%")


if __name__ == "__main__":
    main()
