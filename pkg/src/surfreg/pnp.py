"""2D-3D correspondences from coordinate maps, and pose recovery by PnP.

A decoded coordinate map assigns surface coordinates (mu, nu) to pixels.
Matching each valid pixel to the region vertex nearest in parameter
space yields pixel-to-millimeter correspondences; the pose is then
recovered by a linear initializer (control-point based, with an
automatic homography fallback for near-planar regions) followed by
damped Gauss-Newton on the reprojection error, with the rotation
updated multiplicatively so no parameterization singularity is hit.

All solvers are pure functions of their inputs; the parameter-space
nearest-neighbor index is built once per parameterization and is
immutable afterwards, so solves may run concurrently.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .camera import CameraModel, Pose
from .errors import (
    CorrespondenceError,
    DegenerateConfigurationError,
    NoConsensusError,
    SurfregError,
)
from .geodesic import SurfaceParameterization
from .mesh import RegionMesh
from .raster import CoordinateMap

CORR_FORMAT = "surfreg-correspondences"
CORR_VERSION = 1

_EIG_COLLINEAR = 1e-10      # middle/largest covariance eigenvalue ratio
_MIN_NONPLANAR = 6          # points required by the control-point initializer
_MIN_PLANAR = 4             # points required by the homography initializer
_MAX_DAMPING = 1e12         # beyond this no step can improve the fit


# ---------------------------------------------------------------------------
# domain types

@dataclass
class CorrespondenceSet:
    """Paired pixel points (u, v) and surface points (x, y, z) mm.

    Weights are confidence values in (0, 1]; the default solver treats
    all positive weights alike.  ``width``/``height`` record the source
    map size so pixel bounds stay checkable after extraction.
    """

    pixels: np.ndarray        # (n, 2) float, pixel centers
    points: np.ndarray        # (n, 3) float, mm
    weights: np.ndarray       # (n,) float in (0, 1]
    width: int
    height: int

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.float64).reshape(-1, 2)
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64).reshape(-1)
        n = len(self.pixels)
        if len(self.points) != n or len(self.weights) != n:
            raise SurfregError(
                f"correspondence arrays disagree: {n} pixels, "
                f"{len(self.points)} points, {len(self.weights)} weights"
            )
        if n and (self.weights.min() <= 0.0 or self.weights.max() > 1.0):
            raise SurfregError("correspondence weights must lie in (0, 1]")
        if n:
            u, v = self.pixels[:, 0], self.pixels[:, 1]
            if u.min() < 0 or v.min() < 0 or u.max() >= self.width or v.max() >= self.height:
                raise SurfregError("correspondence pixels fall outside the image")
        for a in (self.pixels, self.points, self.weights):
            a.setflags(write=False)

    def __len__(self):
        return len(self.pixels)


@dataclass
class PnPResult:
    """Recovered pose plus fit diagnostics.

    ``rms_history`` holds the reprojection RMS after the initializer and
    after every accepted refinement step; it is non-increasing by
    construction of the damping loop.
    """

    pose: Pose
    rms: float
    inlier_count: int
    inlier_ratio: float
    iterations: int
    converged: bool
    inliers: np.ndarray = None
    rms_history: tuple = ()

    def __post_init__(self):
        if self.rms < 0:
            raise SurfregError(f"negative reprojection RMS {self.rms}")
        if not 0.0 <= self.inlier_ratio <= 1.0:
            raise SurfregError(f"inlier ratio {self.inlier_ratio} outside [0, 1]")


@dataclass
class PnPOptions:
    """Damped Gauss-Newton settings."""

    max_iterations: int = 100
    tol: float = 1e-10            # relative RMS decrease that counts as converged
    initial_damping: float = 1e-6
    planar_ratio: float = 1e-4    # smallest/largest eigenvalue below this -> planar init


@dataclass
class RansacOptions:
    """Consensus-search settings; ``seed`` fixes the sampling sequence."""

    iterations: int = 100
    inlier_threshold_px: float = 3.0
    seed: int = 0
    min_sample: int = 6
    min_inliers: int = None       # default: max(min_sample, n // 4)
    refine: PnPOptions = field(default_factory=PnPOptions)


# ---------------------------------------------------------------------------
# correspondence extraction

def _parameter_tree(param: SurfaceParameterization) -> cKDTree:
    """KD-tree over per-vertex (mu, nu), cached on the parameterization."""
    key = (id(param.mu), id(param.nu))
    cache = getattr(param, "_nn_cache", None)
    if cache is not None and cache[0] == key:
        return cache[1]
    tree = cKDTree(np.column_stack([param.mu, param.nu]))
    param._nn_cache = (key, tree)
    return tree


def extract_correspondences(cmap: CoordinateMap, param: SurfaceParameterization,
                            region: RegionMesh) -> CorrespondenceSet:
    """Match every valid pixel to the vertex nearest in (mu, nu).

    The pixel center supplies the 2D point, the matched vertex position
    the 3D point, with weight 1.  Exact nearest-neighbor ties resolve to
    the lowest vertex index.  An all-invalid map yields an empty set.
    """
    if region.n_vertices != len(param.mu):
        raise SurfregError(
            f"parameterization covers {len(param.mu)} vertices, region has {region.n_vertices}"
        )
    ys, xs = np.nonzero(cmap.valid)
    if len(ys) == 0:
        return CorrespondenceSet(np.empty((0, 2)), np.empty((0, 3)), np.empty(0),
                                 cmap.width, cmap.height)
    queries = np.column_stack([cmap.mu[ys, xs], cmap.nu[ys, xs]])
    tree = _parameter_tree(param)
    if region.n_vertices == 1:
        idx = np.zeros(len(queries), dtype=np.int64)
    else:
        dist, near = tree.query(queries, k=2)
        idx = near[:, 0].astype(np.int64)
        tied = dist[:, 0] == dist[:, 1]
        for i in np.flatnonzero(tied):
            # tiny relative slack: ball and k-nearest queries round
            # distances differently at the boundary
            group = tree.query_ball_point(queries[i], dist[i, 0] * (1 + 1e-9) + 1e-300)
            group.extend(near[i])
            idx[i] = min(group)
    pixels = np.column_stack([xs + 0.5, ys + 0.5])
    return CorrespondenceSet(pixels, region.vertices[idx], np.ones(len(idx)),
                             cmap.width, cmap.height)


def save_correspondences(path, corr: CorrespondenceSet) -> None:
    """Write the debug table: header, then one `u v x y z w` row per pair."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"format {CORR_FORMAT} {CORR_VERSION}\n")
        fh.write(f"size {corr.width} {corr.height}\n")
        for (u, v), (x, y, z), w in zip(corr.pixels, corr.points, corr.weights):
            fh.write(f"{u:.17g} {v:.17g} {x:.17g} {y:.17g} {z:.17g} {w:.17g}\n")


def load_correspondences(path) -> CorrespondenceSet:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != f"format {CORR_FORMAT} {CORR_VERSION}":
        raise SurfregError(f"not a {CORR_FORMAT} file: {path}")
    if len(lines) < 2 or not lines[1].startswith("size "):
        raise SurfregError(f"missing size line in {path}")
    width, height = (int(s) for s in lines[1].split()[1:])
    rows = [[float(s) for s in ln.split()] for ln in lines[2:] if ln.strip()]
    data = np.asarray(rows, dtype=np.float64).reshape(-1, 6)
    return CorrespondenceSet(data[:, :2], data[:, 2:5], data[:, 5], width, height)


# ---------------------------------------------------------------------------
# reprojection residual and its Jacobian

def reprojection_residuals(pose: Pose, camera: CameraModel,
                           corr: CorrespondenceSet) -> np.ndarray:
    """Residual vector (2n,): projected minus observed, interleaved u, v.

    Callers are responsible for keeping points in front of the camera;
    the solver treats nonpositive depths as a rejected trial step.
    """
    pc = corr.points @ pose.rotation.T + pose.translation
    r = np.empty(2 * len(corr))
    z = pc[:, 2]
    r[0::2] = camera.focal * pc[:, 0] / z + camera.cx - corr.pixels[:, 0]
    r[1::2] = camera.focal * pc[:, 1] / z + camera.cy - corr.pixels[:, 1]
    return r


def reprojection_jacobian(pose: Pose, camera: CameraModel,
                          corr: CorrespondenceSet) -> np.ndarray:
    """(2n, 6) Jacobian of the residual in the local tangent state.

    Columns 0-2 differentiate along the rotation increment w applied as
    exp([w]x) . R (left multiplication), columns 3-5 along the
    translation increment.
    """
    rp = corr.points @ pose.rotation.T          # R p = p_cam - t
    pc = rp + pose.translation
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    f = camera.focal
    # d(projection)/d(p_cam)
    du = np.zeros((len(corr), 3))
    dv = np.zeros((len(corr), 3))
    du[:, 0] = f / z
    du[:, 2] = -f * x / z**2
    dv[:, 1] = f / z
    dv[:, 2] = -f * y / z**2
    # d(p_cam)/dw = -[R p]x
    dpdw = np.zeros((len(corr), 3, 3))
    dpdw[:, 0, 1] = rp[:, 2]
    dpdw[:, 0, 2] = -rp[:, 1]
    dpdw[:, 1, 0] = -rp[:, 2]
    dpdw[:, 1, 2] = rp[:, 0]
    dpdw[:, 2, 0] = rp[:, 1]
    dpdw[:, 2, 1] = -rp[:, 0]
    J = np.empty((2 * len(corr), 6))
    J[0::2, :3] = np.einsum("nk,nkj->nj", du, dpdw)
    J[1::2, :3] = np.einsum("nk,nkj->nj", dv, dpdw)
    J[0::2, 3:] = du
    J[1::2, 3:] = dv
    return J


def _exp_so3(w: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    K = np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])
    if theta < 1e-12:
        return np.eye(3) + K
    K /= theta
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def _orthonormalize(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d if d else 1.0]) @ vt


# ---------------------------------------------------------------------------
# linear initializers

def _procrustes(world: np.ndarray, cam: np.ndarray):
    """Rigid R, t with R . world + t best matching cam (least squares)."""
    cw, cc = world.mean(axis=0), cam.mean(axis=0)
    h = (cam - cc).T @ (world - cw)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(u @ vt))
    r = u @ np.diag([1.0, 1.0, d if d else 1.0]) @ vt
    return r, cc - r @ cw


def _rms_of(r: np.ndarray, n: int) -> float:
    return float(np.sqrt(r @ r / n))


def _reproj_rms(camera, R, t, pts, pix):
    pc = pts @ R.T + t
    z = pc[:, 2]
    if np.any(z <= 1e-9):
        return np.inf
    du = camera.focal * pc[:, 0] / z + camera.cx - pix[:, 0]
    dv = camera.focal * pc[:, 1] / z + camera.cy - pix[:, 1]
    return float(np.sqrt(np.mean(du**2 + dv**2)))


def _control_point_init(pts, pix, camera):
    """Non-planar initializer: express points in a 4-control-point basis,
    recover the basis in camera frame from the projection constraints'
    null space (one- and two-vector cases), then fit the rigid motion."""
    n = len(pts)
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    evals, evecs = np.linalg.eigh(centered.T @ centered / n)   # ascending
    scales = np.sqrt(np.maximum(evals[::-1], 1e-300))
    ctrl = np.vstack([centroid,
                      centroid + scales[:, None] * evecs[:, ::-1].T])
    basis = np.vstack([ctrl.T, np.ones(4)])
    alpha = np.linalg.solve(basis, np.vstack([pts.T, np.ones(n)])).T   # (n, 4)

    f, cx, cy = camera.focal, camera.cx, camera.cy
    m = np.zeros((2 * n, 12))
    for j in range(4):
        m[0::2, 3 * j + 0] = alpha[:, j] * f
        m[0::2, 3 * j + 2] = alpha[:, j] * (cx - pix[:, 0])
        m[1::2, 3 * j + 1] = alpha[:, j] * f
        m[1::2, 3 * j + 2] = alpha[:, j] * (cy - pix[:, 1])
    # smallest eigenvectors of the 12x12 normal matrix: the null space,
    # sized independently of n (a thin SVD of m would truncate it when
    # m has fewer rows than columns)
    _, evecs = np.linalg.eigh(m.T @ m)
    v1 = evecs[:, 0].reshape(4, 3)
    v2 = evecs[:, 1].reshape(4, 3)

    pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    dw = np.array([np.linalg.norm(ctrl[a] - ctrl[b]) for a, b in pairs])
    candidates = []
    # single null vector: scale it to reproduce control-point distances
    dv1 = np.array([np.linalg.norm(v1[a] - v1[b]) for a, b in pairs])
    if dv1 @ dv1 > 0:
        candidates.append((dv1 @ dw) / (dv1 @ dv1) * v1)
    # two null vectors: distances are quadratic in (b1, b2); solve for
    # (b1^2, b1 b2, b2^2) linearly and take consistent square roots
    e1 = np.array([v1[a] - v1[b] for a, b in pairs])
    e2 = np.array([v2[a] - v2[b] for a, b in pairs])
    lhs = np.column_stack([(e1 * e1).sum(1), 2 * (e1 * e2).sum(1), (e2 * e2).sum(1)])
    sol, *_ = np.linalg.lstsq(lhs, dw**2, rcond=None)
    b1 = np.sqrt(abs(sol[0]))
    b2 = np.sqrt(abs(sol[2]))
    if b1 > 0 or b2 > 0:
        sign = 1.0 if sol[1] >= 0 else -1.0
        candidates.append(b1 * v1 + sign * b2 * v2)
        candidates.append(b1 * v1 - sign * b2 * v2)

    best, best_rms = None, np.inf
    for ctrl_cam in candidates:
        pc = alpha @ ctrl_cam
        if pc[:, 2].mean() < 0:
            pc = -pc
        r, t = _procrustes(pts, pc)
        rms = _reproj_rms(camera, r, t, pts, pix)
        if rms < best_rms:
            best, best_rms = (r, t), rms
    if best is None:
        raise DegenerateConfigurationError("control-point initialization found no pose")
    return best


def _similarity_normalize(xy: np.ndarray):
    """Center and scale 2D points to mean distance sqrt(2) (conditioning)."""
    c = xy.mean(axis=0)
    d = np.linalg.norm(xy - c, axis=1).mean()
    s = np.sqrt(2.0) / d if d > 0 else 1.0
    T = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    return (xy - c) * s, T


def _homography_init(pts, pix, camera):
    """Planar initializer: fit a homography from in-plane coordinates to
    normalized image coordinates and read the pose off its columns."""
    n = len(pts)
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    _, evecs = np.linalg.eigh(centered.T @ centered / n)
    frame = evecs[:, ::-1]                       # columns: major, minor, normal
    frame[:, 2] = np.cross(frame[:, 0], frame[:, 1])
    q = centered @ frame[:, :2]
    mxy = (pix - [camera.cx, camera.cy]) / camera.focal

    qn, tq = _similarity_normalize(q)
    mn, tm = _similarity_normalize(mxy)
    a = np.zeros((2 * n, 9))
    a[0::2, 0:2] = qn
    a[0::2, 2] = 1.0
    a[0::2, 6:8] = -mn[:, :1] * qn
    a[0::2, 8] = -mn[:, 0]
    a[1::2, 3:5] = qn
    a[1::2, 5] = 1.0
    a[1::2, 6:8] = -mn[:, 1:2] * qn
    a[1::2, 8] = -mn[:, 1]
    _, evecs = np.linalg.eigh(a.T @ a)
    h = np.linalg.inv(tm) @ evecs[:, 0].reshape(3, 3) @ tq
    if h[2, 2] < 0:                              # plane origin must sit at z > 0
        h = -h
    l1 = np.linalg.norm(h[:, 0])
    l2 = np.linalg.norm(h[:, 1])
    if l1 <= 0 or l2 <= 0:
        raise DegenerateConfigurationError("homography collapsed; points may be collinear")
    r1 = h[:, 0] / l1
    r2 = h[:, 1] / l2
    r_cp = _orthonormalize(np.column_stack([r1, r2, np.cross(r1, r2)]))
    t_cp = h[:, 2] * 2.0 / (l1 + l2)
    r = r_cp @ frame.T
    return r, t_cp - r @ centroid


# ---------------------------------------------------------------------------
# solvers

def _refine(corr, camera, r0, t0, options):
    """Damped Gauss-Newton from (r0, t0); returns pose, rms trace, flags."""
    n = len(corr)
    R, t = r0, t0
    pose = Pose(_orthonormalize(R), t)
    res = reprojection_residuals(pose, camera, corr)
    cost = float(res @ res)
    history = [_rms_of(res, n)]
    lam = options.initial_damping
    iterations = 0
    converged = False
    while iterations < options.max_iterations:
        iterations += 1
        J = reprojection_jacobian(pose, camera, corr)
        g = J.T @ res
        a = J.T @ J
        try:
            delta = np.linalg.solve(a + lam * np.eye(6), -g)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        r_new = _exp_so3(delta[:3]) @ pose.rotation
        t_new = pose.translation + delta[3:]
        pc_z = (corr.points @ r_new.T + t_new)[:, 2]
        if np.all(pc_z > 1e-9):
            trial = Pose(_orthonormalize(r_new), t_new)
            res_new = reprojection_residuals(trial, camera, corr)
            cost_new = float(res_new @ res_new)
        else:
            cost_new = np.inf
        if cost_new <= cost:
            rel = (history[-1] - _rms_of(res_new, n)) / max(history[-1], 1e-300)
            pose, res, cost = trial, res_new, cost_new
            history.append(_rms_of(res, n))
            lam = max(lam / 10.0, 1e-300)
            if rel < options.tol:
                converged = True
                break
        else:
            lam *= 10.0
            if lam > _MAX_DAMPING:
                converged = True      # no damped step can improve further
                break
    return pose, history, iterations, converged


def solve_pnp(corr: CorrespondenceSet, camera: CameraModel,
              options: PnPOptions = None) -> PnPResult:
    """Recover the pose minimizing squared reprojection error.

    Linear initialization (control-point based for general point sets,
    homography based when the points are nearly planar) followed by
    damped Gauss-Newton; every accepted step lowers the RMS, recorded in
    ``rms_history``.

    Raises
    ------
    CorrespondenceError
        If the set is empty.
    DegenerateConfigurationError
        Fewer points than the initializer needs, or collinear points.
    """
    options = options or PnPOptions()
    if len(corr) == 0:
        raise CorrespondenceError("cannot solve an empty correspondence set")
    keep = corr.weights > 0
    pts = corr.points[keep]
    pix = corr.pixels[keep]
    n = len(pts)
    if n < _MIN_PLANAR:
        raise DegenerateConfigurationError(f"{n} correspondences; at least {_MIN_PLANAR} required")
    centered = pts - pts.mean(axis=0)
    evals = np.linalg.eigvalsh(centered.T @ centered / n)      # ascending
    if evals[2] <= 0 or evals[1] / evals[2] < _EIG_COLLINEAR:
        raise DegenerateConfigurationError("points are collinear; pose is unconstrained")
    planar = evals[0] / evals[2] < options.planar_ratio
    if not planar and n < _MIN_NONPLANAR:
        raise DegenerateConfigurationError(
            f"{n} non-planar correspondences; the initializer needs {_MIN_NONPLANAR}"
        )
    sub = CorrespondenceSet(pix, pts, np.ones(n), corr.width, corr.height)
    if planar:
        r0, t0 = _homography_init(pts, pix, camera)
    else:
        r0, t0 = _control_point_init(pts, pix, camera)
    pose, history, iterations, converged = _refine(sub, camera, r0, t0, options)
    return PnPResult(pose=pose, rms=history[-1], inlier_count=n, inlier_ratio=1.0,
                     iterations=iterations, converged=converged,
                     inliers=keep, rms_history=tuple(history))


def solve_pnp_ransac(corr: CorrespondenceSet, camera: CameraModel,
                     options: RansacOptions = None) -> PnPResult:
    """Consensus variant for correspondence sets containing outliers.

    Minimal samples are drawn with a seeded generator, so results are
    reproducible; the best consensus set is re-refined jointly and
    recorded in ``inliers``.

    Raises
    ------
    NoConsensusError
        If no sampled pose reaches the required inlier count.
    """
    options = options or RansacOptions()
    n = len(corr)
    if n < options.min_sample:
        raise CorrespondenceError(
            f"{n} correspondences; RANSAC needs at least {options.min_sample}"
        )
    need = options.min_inliers
    if need is None:
        need = max(options.min_sample, n // 4)
    rng = np.random.default_rng(options.seed)
    thresh2 = options.inlier_threshold_px**2
    best_mask, best_count, best_rms = None, 0, np.inf
    for _ in range(options.iterations):
        pick = rng.choice(n, size=options.min_sample, replace=False)
        sample = CorrespondenceSet(corr.pixels[pick], corr.points[pick],
                                   corr.weights[pick], corr.width, corr.height)
        try:
            guess = solve_pnp(sample, camera, options.refine)
        except (SurfregError, np.linalg.LinAlgError):
            continue
        pc = corr.points @ guess.pose.rotation.T + guess.pose.translation
        z = pc[:, 2]
        front = z > 1e-9
        err2 = np.full(n, np.inf)
        du = camera.focal * pc[front, 0] / z[front] + camera.cx - corr.pixels[front, 0]
        dv = camera.focal * pc[front, 1] / z[front] + camera.cy - corr.pixels[front, 1]
        err2[front] = du**2 + dv**2
        mask = err2 < thresh2
        count = int(mask.sum())
        rms = float(np.sqrt(err2[mask].mean())) if count else np.inf
        if count > best_count or (count == best_count and rms < best_rms):
            best_mask, best_count, best_rms = mask, count, rms
    if best_mask is None or best_count < need:
        raise NoConsensusError(
            f"best consensus {best_count} of {n} below the required {need}"
        )
    inlier_corr = CorrespondenceSet(corr.pixels[best_mask], corr.points[best_mask],
                                    corr.weights[best_mask], corr.width, corr.height)
    refined = solve_pnp(inlier_corr, camera, options.refine)
    return PnPResult(pose=refined.pose, rms=refined.rms, inlier_count=best_count,
                     inlier_ratio=best_count / n, iterations=refined.iterations,
                     converged=refined.converged, inliers=best_mask,
                     rms_history=refined.rms_history)
