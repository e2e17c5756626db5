"""Evaluation measures for recovered poses and coordinate-map predictions.

Pose accuracy is reported as the angular distance between rotations
(degrees), per-axis absolute translation differences (mm) for x and y,
and the z difference as a percentage of the focal length — the scale
against which a monocular solve constrains depth.  Map predictions are
scored with binary cross-entropy, mean squared error, and SSIM, plus
their equal-weight combination.

Everything here is a pure function of immutable inputs; evaluations of
separate samples may run in parallel.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .camera import ORTHO_TOL, CameraModel, Pose
from .errors import SurfregError
from .raster import CoordinateMap

BCE_EPS = 1e-7

METRIC_NAMES = ("rot_deg", "ex_mm", "ey_mm", "ez_pct")


# ---------------------------------------------------------------------------
# domain types

@dataclass
class PoseErrorReport:
    """Errors of one estimated pose against its reference.

    ``sample_id`` identifies the compared pose pair; the numbers follow
    the package conventions (degrees, mm, mm, percent of focal).
    """

    sample_id: str
    rot_deg: float
    ex_mm: float
    ey_mm: float
    ez_pct: float

    def __post_init__(self):
        if not 0.0 <= self.rot_deg <= 180.0:
            raise SurfregError(f"rotation error {self.rot_deg} outside [0, 180] degrees")
        if self.ex_mm < 0 or self.ey_mm < 0 or self.ez_pct < 0:
            raise SurfregError("translation errors cannot be negative")


@dataclass
class ErrorSummary:
    """Five-number summary plus mean for one error metric.

    Quartiles use linear interpolation between order statistics (the
    numpy default), so e.g. values 1..5 give Q1=2, median=3, Q3=4.
    """

    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    mean: float
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise SurfregError("a summary needs at least one sample")
        if not self.minimum <= self.q1 <= self.median <= self.q3 <= self.maximum:
            raise SurfregError("summary order statistics are not sorted")


# ---------------------------------------------------------------------------
# pose error metrics

def _check_rotation(r: np.ndarray, name: str) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3) or np.abs(r.T @ r - np.eye(3)).max() > ORTHO_TOL:
        raise SurfregError(f"{name} is not an orthonormal 3x3 rotation")
    return r


def rotation_error(r1: np.ndarray, r2: np.ndarray) -> float:
    """Angular distance between two rotations, in degrees [0, 180]."""
    r1 = _check_rotation(r1, "r1")
    r2 = _check_rotation(r2, "r2")
    if np.array_equal(r1, r2):
        # arccos of the evaluated trace would report ~1e-6 deg for a
        # rotation against itself; equal inputs have exactly zero error
        return 0.0
    c = (np.trace(r1.T @ r2) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def translation_error(t1: np.ndarray, t2: np.ndarray,
                      camera: CameraModel) -> tuple[float, float, float]:
    """Per-axis |Δx|, |Δy| in mm and |Δz| as a percentage of the focal
    length (monocular depth is only constrained relative to focal)."""
    d = np.abs(np.asarray(t1, dtype=np.float64) - np.asarray(t2, dtype=np.float64))
    return float(d[0]), float(d[1]), float(100.0 * d[2] / camera.focal)


def pose_error(sample_id: str, estimate: Pose, reference: Pose,
               camera: CameraModel) -> PoseErrorReport:
    """Bundle rotation and translation errors of two poses into a report."""
    ex, ey, ez = translation_error(estimate.translation, reference.translation, camera)
    return PoseErrorReport(sample_id=sample_id,
                           rot_deg=rotation_error(estimate.rotation, reference.rotation),
                           ex_mm=ex, ey_mm=ey, ez_pct=ez)


# ---------------------------------------------------------------------------
# map losses

def _as_pair(rho, sigma, unit_range=False):
    rho = np.asarray(rho, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if rho.shape != sigma.shape:
        raise SurfregError(f"map shapes disagree: {rho.shape} vs {sigma.shape}")
    if unit_range:
        for name, a in (("rho", rho), ("sigma", sigma)):
            if a.size and (a.min() < 0.0 or a.max() > 1.0):
                raise SurfregError(f"{name} has values outside [0, 1]")
    return rho, sigma


def bce(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Mean binary cross-entropy of prediction sigma against target rho.

    sigma is clamped to [1e-7, 1 - 1e-7] so saturated predictions stay
    finite.
    """
    rho, sigma = _as_pair(rho, sigma, unit_range=True)
    sigma = np.clip(sigma, BCE_EPS, 1.0 - BCE_EPS)
    return float(-np.mean(rho * np.log(sigma) + (1.0 - rho) * np.log1p(-sigma)))


def mse(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Mean squared difference."""
    rho, sigma = _as_pair(rho, sigma)
    return float(np.mean((rho - sigma) ** 2))


def ssim(rho: np.ndarray, sigma: np.ndarray, alpha: float = 1.0, beta: float = 1.0,
         gamma: float = 1.0, c1: float = 1e-4, c2: float = 9e-4, c3: float = None,
         window: int = 7) -> float:
    """Structural similarity: mean over sliding windows of l^a * c^b * s^g.

    Windows are uniform ``window x window`` patches fully inside the
    image; the default constants assume values in [0, 1] (L = 1,
    C1 = (0.01 L)^2, C2 = (0.03 L)^2, C3 = C2 / 2).  The structure term
    can be negative, so non-integer ``gamma`` requires anticorrelated
    windows to be absent.
    """
    rho, sigma = _as_pair(rho, sigma)
    if rho.ndim != 2:
        raise SurfregError("ssim expects single-channel 2D maps")
    if c3 is None:
        c3 = c2 / 2.0
    if c1 <= 0 or c2 <= 0 or c3 <= 0:
        raise SurfregError("ssim stabilization constants must be positive")
    if not 1 <= window <= min(rho.shape):
        raise SurfregError(f"window {window} does not fit a {rho.shape} map")

    m1 = uniform_filter(rho, window)
    m2 = uniform_filter(sigma, window)
    v1 = np.maximum(uniform_filter(rho * rho, window) - m1 * m1, 0.0)
    v2 = np.maximum(uniform_filter(sigma * sigma, window) - m2 * m2, 0.0)
    cov = uniform_filter(rho * sigma, window) - m1 * m2
    lo, hi = window // 2, (window - 1) // 2
    sl = (slice(lo, rho.shape[0] - hi), slice(lo, rho.shape[1] - hi))
    m1, m2, v1, v2, cov = m1[sl], m2[sl], v1[sl], v2[sl], cov[sl]

    s1, s2 = np.sqrt(v1), np.sqrt(v2)
    lum = (2.0 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1)
    con = (2.0 * s1 * s2 + c2) / (v1 + v2 + c2)
    stru = (cov + c3) / (s1 * s2 + c3)
    return float(np.mean(lum**alpha * con**beta * stru**gamma))


def combined_loss(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Equal-weight sum of the three map losses: (bce + mse + (1 - ssim)) / 3."""
    return (bce(rho, sigma) + mse(rho, sigma) + (1.0 - ssim(rho, sigma))) / 3.0


def map_losses(predicted: CoordinateMap, truth: CoordinateMap) -> dict:
    """Score a predicted coordinate map against a reference rendering.

    bce and mse compare the mu and nu channels on the union of the two
    validity masks; ssim needs rectangular support, so it runs on the
    full frames with invalid pixels at zero.  The returned metadata
    records exactly that convention.
    """
    if predicted.mu.shape != truth.mu.shape:
        raise SurfregError(
            f"map shapes disagree: {predicted.mu.shape} vs {truth.mu.shape}")
    union = predicted.valid | truth.valid
    if not union.any():
        raise SurfregError("both maps are entirely invalid; nothing to compare")
    bce_v = mse_v = ssim_v = 0.0
    for channel in ("mu", "nu"):
        p = np.where(predicted.valid, getattr(predicted, channel), 0.0)
        t = np.where(truth.valid, getattr(truth, channel), 0.0)
        bce_v += bce(t[union], p[union]) / 2.0
        mse_v += mse(t[union], p[union]) / 2.0
        ssim_v += ssim(t, p) / 2.0
    return {
        "bce": bce_v,
        "mse": mse_v,
        "ssim": ssim_v,
        "combined": (bce_v + mse_v + (1.0 - ssim_v)) / 3.0,
        "metadata": {
            "channels": ["mu", "nu"],
            "pixel_set": "union-of-valid",
            "ssim_support": "full-frame-invalid-zeroed",
            "ssim_window": 7,
        },
    }


# ---------------------------------------------------------------------------
# distribution summaries and CSV reporting

def summarize(reports: list) -> dict:
    """Five-number summary plus mean for every metric across reports.

    Quartiles interpolate linearly between order statistics.  Returns a
    dict keyed by metric name (``rot_deg``, ``ex_mm``, ``ey_mm``,
    ``ez_pct``).
    """
    if not reports:
        raise SurfregError("cannot summarize an empty report list")
    out = {}
    for name in METRIC_NAMES:
        values = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        q1, med, q3 = np.percentile(values, [25.0, 50.0, 75.0])
        out[name] = ErrorSummary(minimum=float(values.min()), q1=float(q1),
                                 median=float(med), q3=float(q3),
                                 maximum=float(values.max()),
                                 mean=float(values.mean()), count=len(values))
    return out


def write_error_csv(path, reports: list) -> None:
    """One row per sample: ``sample_id,rot_deg,ex_mm,ey_mm,ez_pct``."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", *METRIC_NAMES])
        for r in reports:
            w.writerow([r.sample_id, *(repr(getattr(r, n)) for n in METRIC_NAMES)])


def write_summary_csv(path, summaries: dict) -> None:
    """One row per metric: ``metric,min,q1,median,q3,max,mean,count``."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "min", "q1", "median", "q3", "max", "mean", "count"])
        for name, s in summaries.items():
            w.writerow([name, repr(s.minimum), repr(s.q1), repr(s.median),
                        repr(s.q3), repr(s.maximum), repr(s.mean), s.count])
