"""Synthetic training patches, augmentation, and a stand-in predictor.

The patch pipeline mirrors the preprocessing used for correspondence
networks: full frames are scaled down to 192x108 and cropped to 64x64
around the region of interest, with the image and its coordinate-map
label undergoing identical geometry.  Maps are always resampled
nearest-neighbor — interpolating (mu, nu) across the mask boundary
would fabricate correspondences that exist on no surface.

``oracle_predict`` substitutes a trained network with ground truth plus
a chosen corruption (blur-like gaussian noise, missing mask regions, or
gross mislabels), so the full predict -> solve -> evaluate loop runs
end to end on purely synthetic data.

All generators are pure functions of (inputs, seed); dataset samples
derive per-sample sub-seeds as seed XOR index, so parallel and serial
generation agree.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .camera import CameraModel, Pose
from .errors import BehindCameraError, SurfregError
from .geodesic import SurfaceParameterization
from .raster import CoordinateMap, render_coordinate_map, save_map

PATCH_SIZE = 64
RESIZE_W, RESIZE_H = 192, 108

DATASET_FORMAT = "surfreg-dataset"
DATASET_VERSION = 1

NOISE_KINDS = ("gaussian", "dropout", "outlier")


# ---------------------------------------------------------------------------
# domain types

@dataclass
class LabeledPatch:
    """A 64x64 image patch with its coordinate-map label.

    ``provenance`` records where the patch came from and every geometric
    transform applied, enough to reproduce it exactly.
    """

    image: np.ndarray          # (h, w, 3) uint8 BGR
    cmap: CoordinateMap
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3 or self.image.dtype != np.uint8:
            raise SurfregError("patch image must be (h, w, 3) uint8")
        if self.image.shape[:2] != self.cmap.mu.shape:
            raise SurfregError(
                f"image {self.image.shape[:2]} and map {self.cmap.mu.shape} disagree")


@dataclass
class NoiseModel:
    """Predictor corruption: kind, magnitude, and the seed that fixes it.

    gaussian: magnitude is the noise sigma added to (mu, nu);
    dropout/outlier: magnitude is the fraction of valid pixels hit.
    """

    kind: str
    magnitude: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.magnitude < 0:
            raise SurfregError(f"noise magnitude {self.magnitude} cannot be negative")


@dataclass
class AugmentSpec:
    """Augmentation ranges; the defaults are recorded in every manifest."""

    flips: tuple = ("horizontal", "vertical")
    rotation_deg: float = 30.0      # angles drawn uniformly in +-rotation_deg
    translation_px: float = 8.0     # offsets drawn uniformly in +-translation_px

    def to_record(self) -> dict:
        return {"flips": list(self.flips), "rotation_deg": self.rotation_deg,
                "translation_px": self.translation_px}


@dataclass
class PoseSampler:
    """Uniform pose distribution for synthetic scenes.

    Rotation axes are uniform on the sphere with angles in
    [0, max_angle_deg]; translations are uniform per axis.
    """

    max_angle_deg: float = 30.0
    x_mm: float = 6.0               # +- range
    y_mm: float = 3.0               # +- range
    z_mm: tuple = (1100.0, 1500.0)  # (near, far)
    seed: int = 0

    def to_record(self) -> dict:
        return {"max_angle_deg": self.max_angle_deg, "x_mm": self.x_mm,
                "y_mm": self.y_mm, "z_mm": list(self.z_mm), "seed": self.seed}

    def draw(self, rng: np.random.Generator) -> Pose:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = np.radians(rng.uniform(0.0, self.max_angle_deg))
        k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]],
                      [-axis[1], axis[0], 0]])
        rot = np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)
        t = np.array([rng.uniform(-self.x_mm, self.x_mm),
                      rng.uniform(-self.y_mm, self.y_mm),
                      rng.uniform(*self.z_mm)])
        return Pose(rot, t)


# ---------------------------------------------------------------------------
# patch construction

def _nearest_indices(n_src: int, n_dst: int) -> np.ndarray:
    """Source index sampled at each destination pixel center."""
    centers = (np.arange(n_dst) + 0.5) * (n_src / n_dst)
    return np.minimum(centers.astype(np.int64), n_src - 1)


def _resize_map_nearest(cmap: CoordinateMap, width: int, height: int) -> CoordinateMap:
    rows = _nearest_indices(cmap.height, height)
    cols = _nearest_indices(cmap.width, width)
    grid = np.ix_(rows, cols)
    return CoordinateMap(mu=cmap.mu[grid], nu=cmap.nu[grid], valid=cmap.valid[grid],
                         depth=None if cmap.depth is None else cmap.depth[grid])


def make_patch(frame: np.ndarray, cmap: CoordinateMap, bbox, frame_id: str = "") -> LabeledPatch:
    """Scale a frame/map pair down to 192x108 and crop 64x64 at the bbox.

    ``bbox`` is (x0, y0, x1, y1) in original frame pixels, end exclusive.
    The crop centers on the bbox center (clamped so it stays inside the
    resized frame); the image is resized bilinearly, the map
    nearest-neighbor, so surviving map pixels keep their exact values.
    """
    if frame.ndim != 3 or frame.shape[2] != 3 or frame.dtype != np.uint8:
        raise SurfregError("frame must be (h, w, 3) uint8")
    h, w = frame.shape[:2]
    if (h, w) != cmap.mu.shape:
        raise SurfregError(f"frame {h}x{w} and map {cmap.mu.shape} sizes disagree")
    x0, y0, x1, y1 = (float(v) for v in bbox)
    if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
        raise SurfregError(f"bbox {bbox} falls outside the {w}x{h} frame")

    small_img = cv2.resize(frame, (RESIZE_W, RESIZE_H), interpolation=cv2.INTER_LINEAR)
    small_map = _resize_map_nearest(cmap, RESIZE_W, RESIZE_H)

    cx = (x0 + x1) / 2.0 * (RESIZE_W / w)
    cy = (y0 + y1) / 2.0 * (RESIZE_H / h)
    ox = int(np.clip(round(cx - PATCH_SIZE / 2), 0, RESIZE_W - PATCH_SIZE))
    oy = int(np.clip(round(cy - PATCH_SIZE / 2), 0, RESIZE_H - PATCH_SIZE))

    crop_img = np.ascontiguousarray(small_img[oy:oy + PATCH_SIZE, ox:ox + PATCH_SIZE])
    sl = (slice(oy, oy + PATCH_SIZE), slice(ox, ox + PATCH_SIZE))
    crop_map = CoordinateMap(
        mu=small_map.mu[sl].copy(), nu=small_map.nu[sl].copy(),
        valid=small_map.valid[sl].copy(),
        depth=None if small_map.depth is None else small_map.depth[sl].copy())
    provenance = {
        "frame_id": frame_id,
        "bbox": [x0, y0, x1, y1],
        "resized_to": [RESIZE_W, RESIZE_H],
        "crop_origin": [ox, oy],
        "crop_size": PATCH_SIZE,
    }
    return LabeledPatch(image=crop_img, cmap=crop_map, provenance=provenance)


# ---------------------------------------------------------------------------
# augmentation

def transform_patch(patch: LabeledPatch, flip_h: bool = False, flip_v: bool = False,
                    rotation_deg: float = 0.0, translation_px=(0.0, 0.0)) -> LabeledPatch:
    """Apply one spatial transform to image and map in lockstep.

    Flips are exact array reversals.  Rotation (about the patch center,
    counterclockwise in pixel axes) and translation resample the image
    bilinearly and every map channel nearest-neighbor on one shared
    inverse grid; pixels sampled from outside the source become invalid.
    """
    img = patch.image
    mu, nu = patch.cmap.mu, patch.cmap.nu
    valid = patch.cmap.valid
    depth = patch.cmap.depth
    tx, ty = float(translation_px[0]), float(translation_px[1])
    if flip_h:
        img, mu, nu, valid = img[:, ::-1], mu[:, ::-1], nu[:, ::-1], valid[:, ::-1]
        depth = None if depth is None else depth[:, ::-1]
    if flip_v:
        img, mu, nu, valid = img[::-1], mu[::-1], nu[::-1], valid[::-1]
        depth = None if depth is None else depth[::-1]
    img = np.ascontiguousarray(img)
    mu, nu, valid = mu.copy(), nu.copy(), valid.copy()
    depth = None if depth is None else depth.copy()

    if rotation_deg != 0.0 or tx != 0.0 or ty != 0.0:
        h, w = valid.shape
        center = ((w - 1) / 2.0, (h - 1) / 2.0)
        m = cv2.getRotationMatrix2D(center, rotation_deg, 1.0)
        m[0, 2] += tx
        m[1, 2] += ty
        img = cv2.warpAffine(img, m, (w, h), flags=cv2.INTER_LINEAR,
                             borderMode=cv2.BORDER_CONSTANT, borderValue=0)
        inv = np.linalg.inv(m[:, :2])
        ys, xs = np.mgrid[0:h, 0:w]
        dst = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
        src = (dst - m[:, 2]) @ inv.T
        sx = np.rint(src[:, 0]).astype(np.int64)
        sy = np.rint(src[:, 1]).astype(np.int64)
        inside = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)
        sxc, syc = np.clip(sx, 0, w - 1), np.clip(sy, 0, h - 1)
        valid = (inside & valid[syc, sxc]).reshape(h, w)
        mu = np.where(valid.ravel(), mu[syc, sxc], 0.0).reshape(h, w)
        nu = np.where(valid.ravel(), nu[syc, sxc], 0.0).reshape(h, w)
        if depth is not None:
            depth = np.where(valid.ravel(), depth[syc, sxc], 0.0).reshape(h, w)

    provenance = dict(patch.provenance)
    provenance["augment"] = {"flip_h": flip_h, "flip_v": flip_v,
                             "rotation_deg": rotation_deg, "translation_px": [tx, ty]}
    return LabeledPatch(image=img,
                        cmap=CoordinateMap(mu=mu, nu=nu, valid=valid, depth=depth),
                        provenance=provenance)


def augment(patch: LabeledPatch, spec: AugmentSpec = None, count: int = 1,
            seed: int = 0) -> list:
    """Draw ``count`` transformed copies of a patch, image and map in
    lockstep.  Flips are exact array reversals; rotation + translation
    use bilinear sampling for the image and nearest-neighbor for the
    map.  Deterministic given (spec, count, seed); each copy's transform
    parameters land in its provenance."""
    if count < 1:
        raise SurfregError(f"augmentation count {count} must be at least 1")
    spec = spec or AugmentSpec()
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        flip_h = "horizontal" in spec.flips and rng.uniform() < 0.5
        flip_v = "vertical" in spec.flips and rng.uniform() < 0.5
        angle = rng.uniform(-spec.rotation_deg, spec.rotation_deg)
        tx = rng.uniform(-spec.translation_px, spec.translation_px)
        ty = rng.uniform(-spec.translation_px, spec.translation_px)
        aug = transform_patch(patch, flip_h, flip_v, angle, (tx, ty))
        aug.provenance["augment"]["index"] = k
        aug.provenance["augment"]["seed"] = seed
        out.append(aug)
    return out


# ---------------------------------------------------------------------------
# oracle predictor

def oracle_predict(gt_map: CoordinateMap, noise: NoiseModel) -> CoordinateMap:
    """Ground truth corrupted by one failure mode of a real predictor.

    gaussian adds N(0, magnitude^2) to (mu, nu) at valid pixels (clamped
    to [0, 1]); dropout invalidates a magnitude fraction of the valid
    pixels; outlier replaces that fraction with uniform-random values.
    The output carries only (mu, nu, valid), like a network would.
    """
    if noise.kind not in NOISE_KINDS:
        raise SurfregError(f"unknown noise kind {noise.kind!r}; expected one of {NOISE_KINDS}")
    mu = gt_map.mu.copy()
    nu = gt_map.nu.copy()
    valid = gt_map.valid.copy()
    rng = np.random.default_rng(noise.seed)
    ys, xs = np.nonzero(valid)
    n = len(ys)
    if n == 0 or noise.magnitude == 0.0:
        return CoordinateMap(mu=mu, nu=nu, valid=valid)
    if noise.kind == "gaussian":
        mu[ys, xs] = np.clip(mu[ys, xs] + rng.normal(0, noise.magnitude, n), 0, 1)
        nu[ys, xs] = np.clip(nu[ys, xs] + rng.normal(0, noise.magnitude, n), 0, 1)
    else:
        k = min(int(round(noise.magnitude * n)), n)
        hit = rng.choice(n, size=k, replace=False)
        if noise.kind == "dropout":
            valid[ys[hit], xs[hit]] = False
            mu[ys[hit], xs[hit]] = 0.0
            nu[ys[hit], xs[hit]] = 0.0
        else:
            mu[ys[hit], xs[hit]] = rng.uniform(0, 1, k)
            nu[ys[hit], xs[hit]] = rng.uniform(0, 1, k)
    return CoordinateMap(mu=mu, nu=nu, valid=valid)


# ---------------------------------------------------------------------------
# synthetic scenes

def synth_scene(param: SurfaceParameterization, camera: CameraModel,
                sampler: PoseSampler, n: int, out_dir, retry_limit: int = 20,
                split_cycle: tuple = (9, 3)) -> list:
    """Render ``n`` ground-truth (pose, map) samples into ``out_dir``.

    Each sample uses its own generator seeded with sampler.seed XOR
    index; poses whose rendering has no valid pixel are redrawn up to
    ``retry_limit`` times.  Writes maps as 16-bit PNGs plus a versioned
    JSON-lines manifest (header record first, then one record per
    sample).  Samples are tagged train/validation by cycling
    ``split_cycle`` — the familiar nine-train / three-validation frame
    convention — as a manifest field only.
    """
    out_dir = Path(out_dir)
    (out_dir / "maps").mkdir(parents=True, exist_ok=True)
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "n": n,
        "camera": camera.to_record(),
        "sampler": sampler.to_record(),
        "split_cycle": list(split_cycle),
    }
    lines = [json.dumps(header, sort_keys=True)]
    samples = []
    cycle = split_cycle[0] + split_cycle[1]
    for i in range(n):
        rng = np.random.default_rng(sampler.seed ^ i)
        pose, cmap = None, None
        for attempt in range(retry_limit):
            candidate = sampler.draw(rng)
            rendered = render_coordinate_map(param, camera, candidate)
            if rendered.valid.any():
                pose, cmap = candidate, rendered
                break
        if pose is None:
            raise BehindCameraError(
                f"sample {i}: no visible surface after {retry_limit} pose draws")
        rel = f"maps/sample_{i:04d}.png"
        save_map(out_dir / rel, cmap)
        record = {
            "index": i,
            "map": rel,
            "pose": pose.to_record(),
            "seed": sampler.seed ^ i,
            "retries": attempt,
            "split": "train" if (i % cycle) < split_cycle[0] else "val",
        }
        lines.append(json.dumps(record, sort_keys=True))
        samples.append((pose, cmap))
    (out_dir / "manifest.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return samples


def read_manifest(path) -> tuple:
    """Parse a dataset manifest into (header, records)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise SurfregError(f"empty manifest: {path}")
    header = json.loads(lines[0])
    if header.get("format") != DATASET_FORMAT or header.get("version") != DATASET_VERSION:
        raise SurfregError(f"not a {DATASET_FORMAT} v{DATASET_VERSION} manifest: {path}")
    return header, [json.loads(ln) for ln in lines[1:]]
