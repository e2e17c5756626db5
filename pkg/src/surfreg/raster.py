"""Software rasterizer for coordinate maps, plus the 16-bit PNG codec.

Coverage is by pixel center with the top-left tie rule, so two triangles
sharing an edge never both claim a boundary pixel.  Interpolation is
perspective-correct (mu/z, nu/z, 1/z).  No anti-aliasing: boundary pixels
carry exact surface values, never blends.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .camera import CameraModel, Pose
from .errors import CodecError, SurfregError
from .geodesic import SurfaceParameterization

NEAR_MM = 1e-6


@dataclass
class CoordinateMap:
    """Dense per-pixel (mu, nu) with validity and optional depth (mm).

    ``face`` and ``bary`` are populated when the renderer is asked to keep
    hit records: the id of the rendered triangle visible at each pixel
    (-1 where invalid) and its perspective-correct barycentric
    coordinates.  Triangle ids index the parameterization's
    interpolation mesh (the seam-split triangulation when one is
    attached, the region faces otherwise).
    """

    mu: np.ndarray
    nu: np.ndarray
    valid: np.ndarray
    depth: np.ndarray = None
    face: np.ndarray = None
    bary: np.ndarray = None

    def __post_init__(self):
        if self.mu.shape != self.nu.shape or self.mu.shape != self.valid.shape:
            raise SurfregError("coordinate map channels disagree in shape")

    @property
    def height(self) -> int:
        return self.mu.shape[0]

    @property
    def width(self) -> int:
        return self.mu.shape[1]


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def render_coordinate_map(param: SurfaceParameterization, camera: CameraModel, pose: Pose,
                          cull_backfaces: bool = True, keep_hits: bool = False) -> CoordinateMap:
    """Z-buffered coordinate map of the parameterized region.

    Rasterizes the parameterization's interpolation mesh, so longitude
    stays single-valued across the meridian seam.  Faces with any vertex
    at camera z <= 0 are dropped rather than clipped; a region fully
    behind the camera renders all-invalid.
    """
    verts, F, mu_v, nu_v = param.interpolation_mesh()
    H, W = camera.height, camera.width
    mu_img = np.zeros((H, W))
    nu_img = np.zeros((H, W))
    valid = np.zeros((H, W), dtype=bool)
    depth_img = np.zeros((H, W))
    face_img = np.full((H, W), -1, dtype=np.int64) if keep_hits else None
    bary_img = np.zeros((H, W, 3)) if keep_hits else None
    out = CoordinateMap(mu=mu_img, nu=nu_img, valid=valid, depth=depth_img,
                        face=face_img, bary=bary_img)

    pc = pose.transform(verts)
    z = pc[:, 2]
    front = np.all(z[F] > NEAR_MM, axis=1)
    if cull_backfaces:
        a, b, c = pc[F[:, 0]], pc[F[:, 1]], pc[F[:, 2]]
        n = np.cross(b - a, c - a)
        towards = np.einsum("ij,ij->i", n, (a + b + c) / 3.0)
        front &= towards < 0
    fidx = np.flatnonzero(front)
    if fidx.size == 0:
        return out

    u = camera.focal * pc[:, 0] / z + camera.cx
    v = camera.focal * pc[:, 1] / z + camera.cy
    tri_u = u[F[fidx]]
    tri_v = v[F[fidx]]

    # orientation-normalize so all edge functions are >= 0 inside
    area = _edge(tri_u[:, 0], tri_v[:, 0], tri_u[:, 1], tri_v[:, 1], tri_u[:, 2], tri_v[:, 2])
    flip = area < 0
    tri_u[flip] = tri_u[flip][:, ::-1]
    tri_v[flip] = tri_v[flip][:, ::-1]
    area = np.abs(area)
    ok = area > 1e-300
    fidx, tri_u, tri_v, area, flip = fidx[ok], tri_u[ok], tri_v[ok], area[ok], flip[ok]
    if fidx.size == 0:
        return out

    x0 = np.clip(np.ceil(tri_u.min(axis=1) - 0.5).astype(np.int64), 0, W - 1)
    x1 = np.clip(np.floor(tri_u.max(axis=1) - 0.5).astype(np.int64), 0, W - 1)
    y0 = np.clip(np.ceil(tri_v.min(axis=1) - 0.5).astype(np.int64), 0, H - 1)
    y1 = np.clip(np.floor(tri_v.max(axis=1) - 0.5).astype(np.int64), 0, H - 1)
    nx = x1 - x0 + 1
    ny = y1 - y0 + 1
    counts = nx * ny
    keep = (counts > 0) & (tri_u.min(axis=1) < W) & (tri_u.max(axis=1) > 0) \
        & (tri_v.min(axis=1) < H) & (tri_v.max(axis=1) > 0)
    fidx, tri_u, tri_v, area, flip = fidx[keep], tri_u[keep], tri_v[keep], area[keep], flip[keep]
    x0, y0, nx, counts = x0[keep], y0[keep], nx[keep], counts[keep]
    if fidx.size == 0:
        return out

    # flatten the ragged (face, bbox-pixel) candidate list
    total = int(counts.sum())
    cand_face = np.repeat(np.arange(fidx.size), counts)
    offs = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    local_x = offs % np.repeat(nx, counts)
    local_y = offs // np.repeat(nx, counts)
    px = (np.repeat(x0, counts) + local_x) + 0.5
    py = (np.repeat(y0, counts) + local_y) + 0.5

    au, av = tri_u[cand_face, 0], tri_v[cand_face, 0]
    bu, bv = tri_u[cand_face, 1], tri_v[cand_face, 1]
    cu, cv = tri_u[cand_face, 2], tri_v[cand_face, 2]
    w0 = _edge(bu, bv, cu, cv, px, py)
    w1 = _edge(cu, cv, au, av, px, py)
    w2 = _edge(au, av, bu, bv, px, py)

    def top_left(sx, sy, ex, ey):
        dy = ey - sy
        dx = ex - sx
        return (dy < 0) | ((dy == 0) & (dx > 0))

    cover = ((w0 > 0) | ((w0 == 0) & top_left(bu, bv, cu, cv))) \
        & ((w1 > 0) | ((w1 == 0) & top_left(cu, cv, au, av))) \
        & ((w2 > 0) | ((w2 == 0) & top_left(au, av, bu, bv)))

    cand_face = cand_face[cover]
    if cand_face.size == 0:
        return out
    px, py = px[cover], py[cover]
    b0 = w0[cover] / area[cand_face]
    b1 = w1[cover] / area[cand_face]
    b2 = w2[cover] / area[cand_face]

    # vertex ids in the same (possibly reversed) order as tri_u/tri_v
    order_vids = F[fidx].copy()
    order_vids[flip] = order_vids[flip][:, ::-1]
    va, vb, vc = order_vids[:, 0], order_vids[:, 1], order_vids[:, 2]
    inv_z = 1.0 / z

    iza = inv_z[va][cand_face]
    izb = inv_z[vb][cand_face]
    izc = inv_z[vc][cand_face]
    iz = b0 * iza + b1 * izb + b2 * izc
    mu_p = (b0 * mu_v[va][cand_face] * iza + b1 * mu_v[vb][cand_face] * izb
            + b2 * mu_v[vc][cand_face] * izc) / iz
    nu_p = (b0 * nu_v[va][cand_face] * iza + b1 * nu_v[vb][cand_face] * izb
            + b2 * nu_v[vc][cand_face] * izc) / iz
    depth = 1.0 / iz

    pix = (py.astype(np.int64) * W + px.astype(np.int64))
    order = np.lexsort((cand_face, depth, pix))
    pix_sorted = pix[order]
    first = np.ones(len(pix_sorted), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    sel = order[first]

    rows = pix[sel] // W
    cols = pix[sel] % W
    valid[rows, cols] = True
    mu_img[rows, cols] = np.clip(mu_p[sel], 0.0, 1.0)
    nu_img[rows, cols] = np.clip(nu_p[sel], 0.0, 1.0)
    depth_img[rows, cols] = depth[sel]
    if keep_hits:
        face_img[rows, cols] = fidx[cand_face[sel]]
        bw = np.stack([b0[sel] * iza[sel], b1[sel] * izb[sel], b2[sel] * izc[sel]], axis=1)
        bw /= bw.sum(axis=1, keepdims=True)
        # express in the face's own vertex order
        perm = _order_permutation(F[fidx[cand_face[sel]]], order_vids[cand_face[sel]])
        bary_img[rows, cols] = np.take_along_axis(bw, perm, axis=1)
    return out


def _order_permutation(face_vids, ordered_vids):
    """perm such that ordered_bary[perm] lines up with face_vids order."""
    perm = np.empty_like(face_vids)
    for k in range(3):
        perm[:, k] = np.argmax(ordered_vids == face_vids[:, [k]], axis=1)
    return perm


MAX16 = 65535


def encode_map(cmap: CoordinateMap) -> bytes:
    """16-bit RGB PNG: R = mu, G = nu scaled to 0..65535, B = validity."""
    H, W = cmap.mu.shape
    img = np.zeros((H, W, 3), dtype=np.uint16)  # BGR for the PNG writer
    val = cmap.valid
    img[..., 0] = np.where(val, MAX16, 0)
    img[..., 1] = np.where(val, np.round(np.clip(cmap.nu, 0, 1) * MAX16), 0).astype(np.uint16)
    img[..., 2] = np.where(val, np.round(np.clip(cmap.mu, 0, 1) * MAX16), 0).astype(np.uint16)
    good, buf = cv2.imencode(".png", img)
    if not good:
        raise CodecError("PNG encoding failed")
    return buf.tobytes()


def decode_map(data: bytes) -> CoordinateMap:
    arr = cv2.imdecode(np.frombuffer(data, dtype=np.uint8), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise CodecError("not a decodable image")
    if arr.dtype != np.uint16:
        raise CodecError(f"coordinate maps are 16-bit, got {arr.dtype}")
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise CodecError(f"coordinate maps have 3 channels, got shape {arr.shape}")
    valid = arr[..., 0] == MAX16
    mu = np.where(valid, arr[..., 2] / MAX16, 0.0)
    nu = np.where(valid, arr[..., 1] / MAX16, 0.0)
    return CoordinateMap(mu=mu, nu=nu, valid=valid)


def save_map(path, cmap: CoordinateMap) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_map(cmap))


def load_map(path) -> CoordinateMap:
    with open(path, "rb") as fh:
        return decode_map(fh.read())


def render_overlay(param: SurfaceParameterization, camera: CameraModel, pose: Pose,
                   frame: np.ndarray, opacity: float) -> np.ndarray:
    """Alpha-blend the rendered region over a background frame.

    ``frame`` is uint8 RGB (H, W, 3) matching the camera size.  Covered
    pixels show the coordinate coloring (mu in red, nu in green) blended
    at the given opacity; returns uint8 RGBA.
    """
    H, W = camera.height, camera.width
    frame = np.asarray(frame)
    if frame.shape != (H, W, 3) or frame.dtype != np.uint8:
        raise SurfregError(
            f"frame must be uint8 ({H}, {W}, 3) to match the camera, got {frame.dtype} {frame.shape}"
        )
    if not 0.0 <= opacity <= 1.0:
        raise SurfregError(f"opacity {opacity} outside [0, 1]")
    cmap = render_coordinate_map(param, camera, pose)
    fg = np.zeros((H, W, 3), dtype=np.float64)
    fg[..., 0] = cmap.mu * 255.0
    fg[..., 1] = cmap.nu * 255.0
    fg[..., 2] = 60.0
    out = np.empty((H, W, 4), dtype=np.uint8)
    blend = frame.astype(np.float64)
    m = cmap.valid
    blend[m] = (1.0 - opacity) * blend[m] + opacity * fg[m]
    out[..., :3] = np.rint(np.clip(blend, 0, 255)).astype(np.uint8)
    out[..., 3] = 255
    return out


def overlay_png_bytes(param: SurfaceParameterization, camera: CameraModel, pose: Pose,
                      frame: np.ndarray, opacity: float) -> bytes:
    """PNG encoding of :func:`render_overlay`; the single code path shared
    by the CLI and the HTTP service, so both emit byte-identical files."""
    good, buf = cv2.imencode(".png", render_overlay(param, camera, pose, frame, opacity))
    if not good:
        raise CodecError("PNG encoding of the overlay failed")
    return buf.tobytes()
