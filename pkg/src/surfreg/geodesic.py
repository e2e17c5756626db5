"""Geodesic distance fields and latitude/longitude surface coordinates.

Distances are first-arrival times of a unit-speed front (fast marching on
the triangle surface).  Latitude comes from the two pole distance fields;
longitude from the distance to the left and right banks of the pole-to-pole
meridian, made measurable by cutting the surface open along that curve.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GeodesicError, RegionError, SurfregError
from .mesh import RegionMesh, TriangleMesh


@dataclass
class GeodesicTolerances:
    """Numerical knobs for marching, tracing, and cutting."""

    acute_slack: float = 1e-12        # wedge angle slack when deciding obtuse
    max_unfold_depth: int = 16
    causality_slack: float = 1e-9     # relative slack on update >= support values
    trace_step_frac: float = 1e-9     # steps below this fraction of mesh scale count as stalls
    snap_frac: float = 1e-9           # barycentric snap to edges/vertices
    max_trace_steps_per_face: int = 60


DEFAULT_TOLERANCES = GeodesicTolerances()


@dataclass
class DistanceField:
    """Per-vertex first-arrival distance over a region.

    ``accept_order`` and ``cause_values`` are solver diagnostics: the
    order vertices were finalized, and for each vertex the largest
    already-final value feeding its final update (0 for sources).
    """

    region: RegionMesh
    values: np.ndarray
    sources: np.ndarray
    accept_order: np.ndarray = field(repr=False, default=None)
    cause_values: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        for a in (self.values, self.sources, self.accept_order, self.cause_values):
            if a is not None:
                a.setflags(write=False)


@dataclass
class GeodesicPath:
    """Polyline on the surface, each sample tagged with a containing face
    and barycentric coordinates.

    ``kind_code`` distinguishes samples sitting on a vertex (0, id in
    ``kind_a``) from samples interior to an edge (1, endpoints in
    ``kind_a``/``kind_b``, parameter from a toward b in ``kind_t``).
    """

    points: np.ndarray
    faces: np.ndarray
    barys: np.ndarray
    kind_code: np.ndarray
    kind_a: np.ndarray
    kind_b: np.ndarray
    kind_t: np.ndarray

    def __len__(self):
        return len(self.points)

    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


@dataclass
class SurfaceParameterization:
    """Per-vertex (mu, nu) in [0,1]^2 over a region, with the poles and
    meridian that generated it.

    Longitude wraps around at the meridian, so the per-vertex ``nu``
    cannot be linearly interpolated across faces touching it.  When the
    parameterization was produced by :func:`parameterize` (or loaded),
    ``cut``/``cut_mu``/``cut_nu`` carry the seam-split triangulation on
    which interpolation is single-valued; :meth:`interpolation_mesh`
    returns whichever triangulation is safe to sample.
    """

    region: RegionMesh
    mu: np.ndarray
    nu: np.ndarray
    alpha: int
    beta: int
    meridian: GeodesicPath
    cut: "MeridianCut" = None
    cut_mu: np.ndarray = None
    cut_nu: np.ndarray = None

    def __post_init__(self):
        self.mu.setflags(write=False)
        self.nu.setflags(write=False)
        for a in (self.cut_mu, self.cut_nu):
            if a is not None:
                a.setflags(write=False)

    def interpolation_mesh(self):
        """(vertices, faces, mu, nu) safe for barycentric interpolation:
        the seam-split triangulation when attached, else the region."""
        if self.cut is not None:
            return (self.cut.region.vertices, self.cut.region.faces,
                    self.cut_mu, self.cut_nu)
        return (self.region.vertices, self.region.faces, self.mu, self.nu)


# ---------------------------------------------------------------------------
# fast marching

class _MarchData:
    """Per-region stencil tables for the eikonal update.

    For every vertex: its edge neighbors with lengths, and a list of
    two-support planar stencils (obtuse wedges pre-split by unfolding
    adjacent triangles; wedges that cannot be unfolded fall back to the
    edge terms only).
    """

    def __init__(self, region: RegionMesh, tol: GeodesicTolerances):
        v = region.vertices
        f = region.faces
        n = region.n_vertices

        nbr_sets: list[dict[int, float]] = [dict() for _ in range(n)]
        for a, b, c in f.tolist():
            for x, y in ((a, b), (b, c), (c, a)):
                if y not in nbr_sets[x]:
                    d = float(np.linalg.norm(v[x] - v[y]))
                    nbr_sets[x][y] = d
                    nbr_sets[y][x] = d
        self.neighbors = [list(s.items()) for s in nbr_sets]

        edge_faces: dict[tuple[int, int], list[int]] = {}
        for fi, (a, b, c) in enumerate(f.tolist()):
            for x, y in ((a, b), (b, c), (c, a)):
                edge_faces.setdefault((x, y) if x < y else (y, x), []).append(fi)
        self._edge_faces = edge_faces

        # stencils[c] = list of (ia, ib, xa0, xa1, xb0, xb1, ra, rb) where
        # (xa, xb) are planar support positions seen from c at the origin and
        # ra/rb their radii: the straight chord from c to the support across
        # the (possibly unfolded) wedge, a valid surface path in its own right
        self.stencils: list[list[tuple]] = [[] for _ in range(n)]
        flist = f.tolist()
        for fi, tri in enumerate(flist):
            for k in range(3):
                c = tri[k]
                a = tri[(k + 1) % 3]
                b = tri[(k + 2) % 3]
                pc, pa, pb = v[c], v[a], v[b]
                ea = pa - pc
                eb = pb - pc
                la = float(np.linalg.norm(ea))
                lb = float(np.linalg.norm(eb))
                if la < 1e-300 or lb < 1e-300:
                    continue
                cosang = float(np.dot(ea, eb)) / (la * lb)
                cosang = max(-1.0, min(1.0, cosang))
                ang = math.acos(cosang)
                xa = (la, 0.0)
                xb = (lb * cosang, lb * math.sin(ang))
                if ang <= math.pi / 2 + tol.acute_slack:
                    self.stencils[c].append((a, b, xa[0], xa[1], xb[0], xb[1], la, lb))
                else:
                    for (ia, pa2, ib, pb2) in self._split_wedge(fi, a, xa, b, xb, tol.max_unfold_depth, tol):
                        self.stencils[c].append((ia, ib, pa2[0], pa2[1], pb2[0], pb2[1],
                                                 math.hypot(pa2[0], pa2[1]),
                                                 math.hypot(pb2[0], pb2[1])))

        # support_of[s] = stencils where vertex s is one of the two supports.
        # Split wedges have supports reached by unfolding that are not edge
        # neighbors of the center, so the update must be driven from the
        # supports themselves: a stencil fires when its later support is
        # accepted, whichever of the two that turns out to be.
        support_of: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for c, sts in enumerate(self.stencils):
            for si, st in enumerate(sts):
                support_of[st[0]].append((c, si))
                if st[1] != st[0]:
                    support_of[st[1]].append((c, si))
        self.support_of = support_of

        self.mesh_scale = float(np.linalg.norm(v.max(axis=0) - v.min(axis=0)))

    def other_face(self, fi: int, x: int, y: int):
        lst = self._edge_faces.get((x, y) if x < y else (y, x), ())
        for g in lst:
            if g != fi:
                return g
        return None

    def _split_wedge(self, fi, u, xu, vtx, xv, depth, tol):
        """Split the wedge (u -> vtx) seen from the stencil center at the
        origin into acute sub-wedges by unfolding across edge (u, vtx)."""
        cross = xu[0] * xv[1] - xu[1] * xv[0]
        dot = xu[0] * xv[0] + xu[1] * xv[1]
        ang = math.atan2(abs(cross), dot)
        if ang <= math.pi / 2 + tol.acute_slack:
            return [(u, xu, vtx, xv)]
        if depth <= 0:
            return []
        g = self.other_face(fi, u, vtx)
        if g is None:
            return []
        tri = self._faces_list[g]
        d = tri[0] + tri[1] + tri[2] - u - vtx
        xd = _unfold_point(xu, xv,
                           float(np.linalg.norm(self._verts[d] - self._verts[u])),
                           float(np.linalg.norm(self._verts[d] - self._verts[vtx])))
        if xd is None:
            return []
        # require the unfolded vertex strictly inside the wedge
        c1 = xu[0] * xd[1] - xu[1] * xd[0]
        c2 = xd[0] * xv[1] - xd[1] * xv[0]
        if cross < 0:
            c1, c2 = -c1, -c2
        if c1 <= 0 or c2 <= 0:
            return []
        left = self._split_wedge(g, u, xu, d, xd, depth - 1, tol)
        right = self._split_wedge(g, d, xd, vtx, xv, depth - 1, tol)
        if not left or not right:
            return []
        return left + right

    # set before stencil construction
    _faces_list: list
    _verts: np.ndarray


def _unfold_point(xu, xv, du, dv):
    """2D position of the far vertex across segment (xu, xv), at distances
    du/dv from the endpoints, on the side away from the origin."""
    ex = xv[0] - xu[0]
    ey = xv[1] - xu[1]
    L2 = ex * ex + ey * ey
    if L2 < 1e-300:
        return None
    L = math.sqrt(L2)
    ex /= L
    ey /= L
    along = (du * du - dv * dv + L2) / (2 * L)
    h2 = du * du - along * along
    if h2 <= 0:
        return None
    h = math.sqrt(h2)
    # perpendicular pointing away from the origin
    nx, ny = -ey, ex
    if nx * (0.0 - xu[0]) + ny * (0.0 - xu[1]) > 0:
        nx, ny = -nx, -ny
    return (xu[0] + along * ex + h * nx, xu[1] + along * ey + h * ny)


def _march_data(region: RegionMesh, tol: GeodesicTolerances) -> _MarchData:
    cached = getattr(region, "_march_cache", None)
    if cached is not None and cached[0] is tol:
        return cached[1]
    md = _MarchData.__new__(_MarchData)
    md._faces_list = region.faces.tolist()
    md._verts = region.vertices
    _MarchData.__init__(md, region, tol)
    region._march_cache = (tol, md)
    return md


def _two_point_update(xa0, xa1, xb0, xb1, ta, tb, slack):
    """Planar front arrival time at the origin from supports at (xa, xb)
    carrying times ta/tb.  None when the front would not cross through
    the wedge (caller falls back to the edge terms)."""
    det = xa0 * xb1 - xa1 * xb0
    if abs(det) < 1e-300:
        return None
    # rows of inv([[xa],[xb]])
    i00 = xb1 / det
    i01 = -xa1 / det
    i10 = -xb0 / det
    i11 = xa0 / det
    w0 = i00 + i01
    w1 = i10 + i11
    z0 = i00 * ta + i01 * tb
    z1 = i10 * ta + i11 * tb
    ww = w0 * w0 + w1 * w1
    wz = w0 * z0 + w1 * z1
    zz = z0 * z0 + z1 * z1
    disc = wz * wz - ww * (zz - 1.0)
    if disc < 0 or ww < 1e-300:
        return None
    p = (wz + math.sqrt(disc)) / ww
    hi = ta if ta > tb else tb
    if p + slack * (1.0 + abs(hi)) < hi:
        return None
    # characteristic must come from inside the wedge: -n in cone(xa, xb)
    n0 = z0 - p * w0
    n1 = z1 - p * w1
    m0 = (-n0 * xb1 + n1 * xb0) / det
    m1 = (-xa0 * n1 + xa1 * n0) / det
    eps = -1e-12
    if m0 < eps or m1 < eps:
        return None
    return p


def fast_march(region: RegionMesh, sources, tolerances: GeodesicTolerances = DEFAULT_TOLERANCES) -> DistanceField:
    """March a unit-speed front from the sources across the region.

    ``sources`` is either an array of region-local vertex indices (their
    distance is exactly 0) or a :class:`GeodesicPath`, in which case the
    front starts from the curve itself: vertices of every face the path
    crosses are seeded with their exact in-face distance to the nearest
    path segment.

    Raises
    ------
    GeodesicError
        If some vertex is unreachable from the sources.
    """
    md = _march_data(region, tolerances)
    n = region.n_vertices
    values = np.full(n, np.inf)
    cause = np.zeros(n)

    if isinstance(sources, GeodesicPath):
        seeds = _path_band_seeds(region, sources)
        if not seeds:
            raise GeodesicError("path source touches no faces")
        snap = 1e-12 * md.mesh_scale
        seeds = {v: (0.0 if d < snap else d) for v, d in seeds.items()}
        # the source set proper is the vertices the curve passes through;
        # the rest of the band only seeds the front with its exact offset
        source_ids = np.array(sorted(v for v, d in seeds.items() if d == 0.0), dtype=np.int64)
        if source_ids.size == 0:
            raise GeodesicError("path source passes through no vertex")
        init = seeds
    else:
        source_ids = np.unique(np.asarray(sources, dtype=np.int64))
        if source_ids.size == 0:
            raise GeodesicError("empty source set")
        if source_ids.min() < 0 or source_ids.max() >= n:
            raise GeodesicError(f"source vertex {int(source_ids.max())} outside region 0..{n - 1}")
        init = {int(s): 0.0 for s in source_ids}

    T = values  # alias, plain python access below
    heap = []
    for s, d0 in init.items():
        T[s] = d0
        heapq.heappush(heap, (d0, s))

    accepted = np.zeros(n, dtype=bool)
    order = []
    neighbors = md.neighbors
    stencils = md.stencils
    support_of = md.support_of
    slack = tolerances.causality_slack
    acc = accepted  # local names for speed
    pop = heapq.heappop
    push = heapq.heappush

    while heap:
        tv, vtx = pop(heap)
        if acc[vtx]:
            continue
        acc[vtx] = True
        order.append(vtx)
        for c, elen in neighbors[vtx]:
            if acc[c]:
                continue
            cand = tv + elen
            if cand < T[c]:
                T[c] = cand
                cause[c] = tv
                push(heap, (cand, c))
        for c, si in support_of[vtx]:
            if acc[c]:
                continue
            ia, ib, xa0, xa1, xb0, xb1, ra, rb = stencils[c][si]
            other = ib if ia == vtx else ia
            # chord straight to the just-accepted support across the wedge;
            # for split wedges this reaches through the unfolded strip, which
            # the plane-wave term cannot express when the front is sharply
            # curved there (e.g. right next to a point source)
            cand = tv + (rb if ia == other else ra)
            if cand < T[c]:
                T[c] = cand
                cause[c] = tv
                push(heap, (cand, c))
            if not acc[other]:
                continue
            ta = T[ia]
            tb = T[ib]
            p = _two_point_update(xa0, xa1, xb0, xb1, ta, tb, slack)
            if p is not None and p < T[c]:
                T[c] = p
                cause[c] = ta if ta > tb else tb
                push(heap, (p, c))

    if not acc.all():
        missing = int(np.flatnonzero(~acc)[0])
        raise GeodesicError(f"vertex {missing} unreachable from sources")

    return DistanceField(region=region, values=values, sources=source_ids,
                         accept_order=np.asarray(order, dtype=np.int64),
                         cause_values=cause)


def _path_band_seeds(region: RegionMesh, path: GeodesicPath) -> dict[int, float]:
    v = region.vertices
    f = region.faces
    seeds: dict[int, float] = {}
    pts = path.points
    for i in range(len(pts) - 1):
        a = pts[i]
        b = pts[i + 1]
        for fi in {int(path.faces[i]), int(path.faces[i + 1])}:
            for vid in f[fi]:
                d = _point_segment_distance(v[vid], a, b)
                if d < seeds.get(int(vid), np.inf):
                    seeds[int(vid)] = float(d)
    return seeds


def _point_segment_distance(p, a, b):
    ab = b - a
    denom = float(np.dot(ab, ab))
    if denom < 1e-300:
        return float(np.linalg.norm(p - a))
    t = float(np.dot(p - a, ab)) / denom
    t = max(0.0, min(1.0, t))
    return float(np.linalg.norm(p - (a + t * ab)))


# ---------------------------------------------------------------------------
# meridian tracing

def _face_gradient(v, tri, t0, t1, t2):
    e1 = v[tri[1]] - v[tri[0]]
    e2 = v[tri[2]] - v[tri[0]]
    g11 = float(np.dot(e1, e1))
    g12 = float(np.dot(e1, e2))
    g22 = float(np.dot(e2, e2))
    det = g11 * g22 - g12 * g12
    if det < 1e-300:
        return None
    b1 = t1 - t0
    b2 = t2 - t0
    c1 = (g22 * b1 - g12 * b2) / det
    c2 = (g11 * b2 - g12 * b1) / det
    return c1 * e1 + c2 * e2


def _bary_of_point(v, tri, p):
    e1 = v[tri[1]] - v[tri[0]]
    e2 = v[tri[2]] - v[tri[0]]
    d = p - v[tri[0]]
    g11 = float(np.dot(e1, e1))
    g12 = float(np.dot(e1, e2))
    g22 = float(np.dot(e2, e2))
    det = g11 * g22 - g12 * g12
    b1 = (g22 * float(np.dot(d, e1)) - g12 * float(np.dot(d, e2))) / det
    b2 = (g11 * float(np.dot(d, e2)) - g12 * float(np.dot(d, e1))) / det
    return np.array([1.0 - b1 - b2, b1, b2])


def _direction_in_bary(v, tri, d):
    """Barycentric velocity of a straight march with 3D velocity d."""
    e1 = v[tri[1]] - v[tri[0]]
    e2 = v[tri[2]] - v[tri[0]]
    g11 = float(np.dot(e1, e1))
    g12 = float(np.dot(e1, e2))
    g22 = float(np.dot(e2, e2))
    det = g11 * g22 - g12 * g12
    b1 = (g22 * float(np.dot(d, e1)) - g12 * float(np.dot(d, e2))) / det
    b2 = (g11 * float(np.dot(d, e2)) - g12 * float(np.dot(d, e1))) / det
    return np.array([-b1 - b2, b1, b2])


class _PathBuilder:
    """Accumulates path samples plus, between consecutive samples, the face
    their connecting segment lies in.  Each sample is then tagged with the
    face of its outgoing segment (the last with its incoming one), so the
    tagged face always contains the sample and its successor."""

    def __init__(self, region, scale):
        self.region = region
        self.scale = scale
        self.events = []   # (code, a, b, t, point)
        self.gaps = []     # face of segment before events[i+1]

    def add_vertex(self, incoming_face, vid):
        self._add(incoming_face, (0, int(vid), -1, 0.0, self.region.vertices[vid].copy()))

    def add_edge_point(self, incoming_face, u, vtx, t, p):
        self._add(incoming_face, (1, int(u), int(vtx), float(t), np.asarray(p, dtype=float).copy()))

    def _add(self, incoming_face, ev):
        if self.events:
            last = self.events[-1]
            same = (ev[0] == last[0]
                    and ((ev[0] == 0 and ev[1] == last[1])
                         or (ev[0] == 1 and {ev[1], ev[2]} == {last[1], last[2]}
                             and np.linalg.norm(ev[4] - last[4]) < 1e-12 * self.scale)))
            if same:
                return
            if incoming_face is None:
                raise GeodesicError("internal: path segment without a face")
            self.gaps.append(int(incoming_face))
        self.events.append(ev)

    @property
    def last_vertex(self):
        ev = self.events[-1] if self.events else None
        return ev[1] if ev is not None and ev[0] == 0 else None

    def build(self) -> GeodesicPath:
        n = len(self.events)
        if n < 2 or len(self.gaps) != n - 1:
            raise GeodesicError("internal: malformed path")
        faces = np.asarray(self.gaps + [self.gaps[-1]], dtype=np.int64)
        points = np.asarray([e[4] for e in self.events], dtype=float)
        barys = np.zeros((n, 3))
        for i, (code, a, b, t, _) in enumerate(self.events):
            tri = list(self.region.faces[faces[i]])
            if code == 0:
                barys[i, tri.index(a)] = 1.0
            else:
                barys[i, tri.index(a)] = 1.0 - t
                barys[i, tri.index(b)] = t
        return GeodesicPath(
            points=points,
            faces=faces,
            barys=barys,
            kind_code=np.asarray([e[0] for e in self.events], dtype=np.int8),
            kind_a=np.asarray([e[1] for e in self.events], dtype=np.int64),
            kind_b=np.asarray([e[2] for e in self.events], dtype=np.int64),
            kind_t=np.asarray([e[3] for e in self.events], dtype=float),
        )


def trace_meridian(field_from_beta: DistanceField, alpha: int,
                   tolerances: GeodesicTolerances = DEFAULT_TOLERANCES) -> GeodesicPath:
    """Steepest-descent polyline from ``alpha`` to the field's source.

    The field must have a single source vertex (beta).  Descent marches
    straight segments through faces of the piecewise-linear field; when
    the direction stalls at a vertex, the walk hops to the adjacent
    vertex with the smallest field value.
    """
    region = field_from_beta.region
    T = field_from_beta.values
    if field_from_beta.sources.size != 1:
        raise GeodesicError("meridian tracing needs a single-source field")
    beta = int(field_from_beta.sources[0])
    alpha = int(alpha)
    if alpha == beta:
        raise GeodesicError("alpha equals beta")
    if not 0 <= alpha < region.n_vertices:
        raise GeodesicError(f"alpha {alpha} outside region")

    md = _march_data(region, tolerances)
    v = region.vertices
    f = region.faces
    vert_faces: list[list[int]] = [[] for _ in range(region.n_vertices)]
    for fi, tri in enumerate(f.tolist()):
        for x in tri:
            vert_faces[x].append(fi)

    scale = md.mesh_scale
    tiny = tolerances.trace_step_frac * scale
    snap = tolerances.snap_frac
    max_steps = tolerances.max_trace_steps_per_face * region.n_faces

    pb = _PathBuilder(region, scale)
    pb.add_vertex(None, alpha)

    def face_with_both(x, y):
        for fi in vert_faces[x]:
            if y in f[fi]:
                return fi
        return None

    # state: ("vertex", vid) or ("face", fi, point, bary, direction)
    state = ("vertex", alpha)
    steps = 0
    last_point = v[alpha]

    while steps < max_steps:
        steps += 1
        if state[0] == "vertex":
            vid = state[1]
            if vid == beta:
                break
            # finish if beta is one hop away through a shared face
            fb = face_with_both(vid, beta)
            if fb is not None:
                pb.add_vertex(fb, beta)
                break
            best = None
            for fi in vert_faces[vid]:
                tri = f[fi]
                g = _face_gradient(v, tri, T[tri[0]], T[tri[1]], T[tri[2]])
                if g is None:
                    continue
                gn = float(np.linalg.norm(g))
                if gn < 1e-300:
                    continue
                d = -g
                db = _direction_in_bary(v, tri, d)
                k = list(tri).index(vid)
                others = [j for j in range(3) if j != k]
                # descending into the face: both off-vertex coordinates grow
                if db[others[0]] >= -1e-14 and db[others[1]] >= -1e-14 and (best is None or gn > best[0]):
                    best = (gn, fi, d)
            if best is not None:
                _, fi, d = best
                tri = f[fi]
                bary = np.zeros(3)
                bary[list(tri).index(vid)] = 1.0
                state = ("face", fi, v[vid].astype(float), bary, d)
                continue
            # stall: hop along the cheapest edge
            nxt = min(md.neighbors[vid], key=lambda cl: T[cl[0]])
            if T[nxt[0]] >= T[vid]:
                raise GeodesicError(
                    f"descent stalled at vertex {vid} (value {T[vid]:.6g}), last position {v[vid]}"
                )
            w = nxt[0]
            pb.add_vertex(face_with_both(vid, w), w)
            state = ("vertex", w)
            last_point = v[w]
            continue

        _, fi, p, bary, d = state
        tri = f[fi]
        if beta in tri:
            pb.add_vertex(fi, beta)
            break
        db = _direction_in_bary(v, tri, d)
        # largest step keeping all barycentrics nonnegative
        s_max = np.inf
        hit = -1
        for j in range(3):
            if db[j] < -1e-18:
                s = -bary[j] / db[j]
                if s < s_max:
                    s_max = s
                    hit = j
        if not np.isfinite(s_max) or hit < 0:
            raise GeodesicError(f"descent direction degenerate in face {fi}, last position {p}")
        q_bary = bary + s_max * db
        q_bary[hit] = 0.0
        q_bary = np.clip(q_bary, 0.0, None)
        ssum = q_bary.sum()
        if ssum <= 0:
            raise GeodesicError(f"degenerate exit in face {fi}, last position {p}")
        q_bary /= ssum
        q = q_bary[0] * v[tri[0]] + q_bary[1] * v[tri[1]] + q_bary[2] * v[tri[2]]
        step_len = float(np.linalg.norm(q - p))

        # vertex hit: two barycentrics vanish
        small = q_bary < snap
        if small.sum() >= 2:
            w = int(tri[int(np.argmax(q_bary))])
            pb.add_vertex(fi, w)
            state = ("vertex", w)
            last_point = v[w]
            continue

        ju, jv = [j for j in range(3) if j != hit]
        u, w = int(tri[ju]), int(tri[jv])
        t = float(q_bary[jv])
        nxt = md.other_face(fi, u, w)
        if nxt is None:
            # boundary edge: slide to the lower-value endpoint
            tgt = u if T[u] <= T[w] else w
            pb.add_vertex(fi, tgt)
            state = ("vertex", tgt)
            last_point = v[tgt]
            continue
        tri2 = f[nxt]
        g2 = _face_gradient(v, tri2, T[tri2[0]], T[tri2[1]], T[tri2[2]])
        if g2 is None:
            tgt = u if T[u] <= T[w] else w
            pb.add_vertex(fi, tgt)
            state = ("vertex", tgt)
            last_point = v[tgt]
            continue
        d2 = -g2
        db2 = _direction_in_bary(v, tri2, d2)
        k_in = [j for j in range(3) if tri2[j] not in (u, w)][0]
        if db2[k_in] <= 1e-14 or step_len < tiny:
            # next face points back across the edge (or we are creeping):
            # slide along the edge toward the lower-value endpoint
            tgt = u if T[u] <= T[w] else w
            pb.add_vertex(fi, tgt)
            state = ("vertex", tgt)
            last_point = v[tgt]
            continue
        pb.add_edge_point(fi, u, w, t, q)
        bary2 = _bary_of_point(v, tri2, q)
        bary2 = np.clip(bary2, 0.0, None)
        bary2 /= bary2.sum()
        state = ("face", nxt, q, bary2, d2)
        last_point = q
    else:
        raise GeodesicError(f"meridian trace did not converge, last position {last_point}")

    path = pb.build()
    # exact endpoints by construction; assert to catch regressions early
    if path.kind_code[0] != 0 or int(path.kind_a[0]) != alpha:
        raise GeodesicError("traced path does not start at alpha")
    if path.kind_code[-1] != 0 or int(path.kind_a[-1]) != beta:
        raise GeodesicError("traced path does not end at beta")
    return path


# ---------------------------------------------------------------------------
# cutting along the meridian

@dataclass
class MeridianCut:
    """Region cut open along the meridian.

    Vertex layout of ``region``: the original region vertices keep their
    indices, path samples interior to edges are appended next, and the
    right-bank duplicates come last.  The left bank reuses the original
    indices of vertices on the path.
    """

    region: RegionMesh
    left_sources: np.ndarray
    right_sources: np.ndarray
    n_original: int
    n_inserted: int
    n_duplicated: int
    on_path: np.ndarray  # over original vertices
    chain: np.ndarray    # cut-local ids along the path, alpha..beta
    duplicate_of: dict   # right-bank id -> left-bank id


def cut_along_meridian(region: RegionMesh, meridian: GeodesicPath) -> MeridianCut:
    """Open the surface along the meridian so the curve becomes boundary.

    Every path sample interior to an edge is first inserted as a real
    vertex (splitting the incident faces); the path is then a vertex
    chain, and each interior chain vertex is duplicated.  Faces on the
    right bank of the directed path are rewired to the duplicates.  The
    bank of a face holding a chain edge follows the face winding: the
    face traversing the edge opposite to the path direction is the left
    bank.
    """
    n0 = region.n_vertices
    verts = [region.vertices[i].copy() for i in range(n0)]
    faces: list[list[int] | None] = [list(t) for t in region.faces.tolist()]
    edge_faces: dict[tuple[int, int], set[int]] = {}

    def ekey(x, y):
        return (x, y) if x < y else (y, x)

    for fi, tri in enumerate(faces):
        for j in range(3):
            edge_faces.setdefault(ekey(tri[j], tri[(j + 1) % 3]), set()).add(fi)

    def split_edge(u, w, pos):
        """Insert a vertex at ``pos`` on edge (u, w); returns its id."""
        nid = len(verts)
        verts.append(np.asarray(pos, dtype=float).copy())
        incident = list(edge_faces.pop(ekey(u, w), ()))
        if not incident:
            raise GeodesicError(f"cut: path sample on missing edge ({u},{w})")
        for fi in incident:
            tri = faces[fi]
            faces[fi] = None
            for e in edge_faces.values():
                e.discard(fi)
            k = tri.index(u) if (tri[(tri.index(u) + 1) % 3] == w) else tri.index(w)
            a = tri[k]
            b = tri[(k + 1) % 3]
            c = tri[(k + 2) % 3]
            for nt in ([a, nid, c], [nid, b, c]):
                nfi = len(faces)
                faces.append(nt)
                for j in range(3):
                    edge_faces.setdefault(ekey(nt[j], nt[(j + 1) % 3]), set()).add(nfi)
        return nid

    # walk the path, inserting edge samples; original-edge splits are
    # tracked so repeated samples on one edge land in the right sub-edge
    splits: dict[tuple[int, int], list[tuple[float, int]]] = {}
    chain = []
    for i in range(len(meridian)):
        if meridian.kind_code[i] == 0:
            chain.append(int(meridian.kind_a[i]))
            continue
        u = int(meridian.kind_a[i])
        w = int(meridian.kind_b[i])
        t = float(meridian.kind_t[i])
        key = ekey(u, w)
        ts = t if key == (u, w) else 1.0 - t
        done = splits.setdefault(key, [])
        lo_t, lo_id = 0.0, key[0]
        hi_t, hi_id = 1.0, key[1]
        for (tt, vid) in done:
            if tt <= ts and tt > lo_t:
                lo_t, lo_id = tt, vid
            if tt >= ts and tt < hi_t:
                hi_t, hi_id = tt, vid
        if hi_t <= lo_t:
            raise GeodesicError("cut: coincident path samples on one edge")
        nid = split_edge(lo_id, hi_id, meridian.points[i])
        done.append((ts, nid))
        chain.append(nid)

    dedup = [chain[0]]
    for c in chain[1:]:
        if c != dedup[-1]:
            dedup.append(c)
    chain = dedup
    if len(chain) < 2:
        raise GeodesicError("cut: meridian collapsed to a point")

    # bank of every face along the chain
    side: dict[int, str] = {}

    def directed_face(x, y):
        out = []
        for fi in edge_faces.get(ekey(x, y), ()):
            tri = faces[fi]
            j = tri.index(x)
            if tri[(j + 1) % 3] == y:
                out.append(fi)
        return out

    for a, b in zip(chain[:-1], chain[1:]):
        if ekey(a, b) not in edge_faces:
            raise GeodesicError(f"cut: chain link ({a},{b}) is not a mesh edge")
        for fi in directed_face(a, b):
            if side.get(fi, "R") != "R":
                raise GeodesicError("cut: inconsistent bank labels (path self-touch?)")
            side[fi] = "R"
        for fi in directed_face(b, a):
            if side.get(fi, "L") != "L":
                raise GeodesicError("cut: inconsistent bank labels (path self-touch?)")
            side[fi] = "L"

    vert_faces: dict[int, list[int]] = {}
    for fi, tri in enumerate(faces):
        if tri is None:
            continue
        for x in tri:
            vert_faces.setdefault(x, []).append(fi)

    chain_edges = {ekey(a, b) for a, b in zip(chain[:-1], chain[1:])}
    interior = chain[1:-1]
    dup_of: dict[int, int] = {}
    for idx, w in enumerate(interior):
        incident = vert_faces.get(w, [])
        # split the fan at the two chain edges
        adj: dict[int, set[int]] = {fi: set() for fi in incident}
        by_edge: dict[tuple[int, int], list[int]] = {}
        for fi in incident:
            tri = faces[fi]
            for x in tri:
                if x != w:
                    by_edge.setdefault(ekey(w, x), []).append(fi)
        for e, fis in by_edge.items():
            if e in chain_edges:
                continue
            for i1 in fis:
                for i2 in fis:
                    if i1 != i2:
                        adj[i1].add(i2)
        comps = []
        seen = set()
        for fi in incident:
            if fi in seen:
                continue
            comp = []
            stack = [fi]
            seen.add(fi)
            while stack:
                x = stack.pop()
                comp.append(x)
                for y in adj[x]:
                    if y not in seen:
                        seen.add(y)
                        stack.append(y)
            comps.append(comp)
        if len(comps) != 2:
            raise GeodesicError(
                f"cut: fan around chain vertex {w} splits into {len(comps)} parts; "
                "the meridian touches the region boundary in a disconnecting way"
            )
        for comp in comps:
            labels = {side[fi] for fi in comp if fi in side}
            if len(labels) != 1:
                raise GeodesicError(f"cut: ambiguous bank for fan at vertex {w}")
            lab = labels.pop()
            for fi in comp:
                prev = side.get(fi)
                if prev is not None and prev != lab:
                    raise GeodesicError(f"cut: conflicting bank for face {fi}")
                side[fi] = lab

    # duplicate interior chain vertices for the right bank
    for w in interior:
        nid = len(verts)
        verts.append(verts[w].copy())
        dup_of[nid] = w
        for fi in vert_faces.get(w, []):
            if side.get(fi) == "R":
                tri = faces[fi]
                faces[fi] = [nid if x == w else x for x in tri]

    alive = [tri for tri in faces if tri is not None]
    cut_mesh = TriangleMesh(np.asarray(verts), np.asarray(alive, dtype=np.int64))
    try:
        cut_region = RegionMesh(cut_mesh, np.arange(cut_mesh.n_vertices))
    except RegionError as e:
        raise GeodesicError(f"cut produced an unusable surface: {e}") from None

    left = np.asarray(chain, dtype=np.int64)
    right = np.asarray([chain[0]] + sorted(dup_of) + [chain[-1]], dtype=np.int64)
    on_path = np.zeros(n0, dtype=bool)
    for c in chain:
        if c < n0:
            on_path[c] = True
    return MeridianCut(
        region=cut_region,
        left_sources=left,
        right_sources=right,
        n_original=n0,
        n_inserted=len(verts) - n0 - len(interior),
        n_duplicated=len(interior),
        on_path=on_path,
        chain=np.asarray(chain, dtype=np.int64),
        duplicate_of=dup_of,
    )


# ---------------------------------------------------------------------------
# the latitude/longitude parameterization

def _seam_fields(region: RegionMesh, meridian: GeodesicPath, mu: np.ndarray,
                 tolerances: GeodesicTolerances):
    """Cut the region along the meridian and compute (mu, nu) on the cut
    vertices, where longitude is single-valued: 0 on the left bank of
    the seam, 1 on the right-bank duplicates."""
    cut = cut_along_meridian(region, meridian)
    fl = fast_march(cut.region, cut.left_sources, tolerances)
    fr = fast_march(cut.region, cut.right_sources, tolerances)
    both = fl.values + fr.values
    ok = both > 0
    cut_nu = np.full(cut.region.n_vertices, 0.5)
    cut_nu[ok] = fl.values[ok] / both[ok]
    np.clip(cut_nu, 0.0, 1.0, out=cut_nu)

    # latitude: originals keep theirs; a vertex inserted on an edge
    # interpolates the endpoints of the sample that created it (edge
    # samples map to inserted ids in walk order); duplicates copy their
    # source
    n0 = cut.n_original
    cut_mu = np.empty(cut.region.n_vertices)
    cut_mu[:n0] = mu
    nid = n0
    for i in range(len(meridian)):
        if meridian.kind_code[i] == 1:
            a = int(meridian.kind_a[i])
            b = int(meridian.kind_b[i])
            t = float(meridian.kind_t[i])
            cut_mu[nid] = (1.0 - t) * mu[a] + t * mu[b]
            nid += 1
    if nid != n0 + cut.n_inserted:
        raise GeodesicError(
            f"cut bookkeeping: {nid - n0} edge samples vs {cut.n_inserted} inserted vertices"
        )
    for dup, src in cut.duplicate_of.items():
        cut_mu[dup] = cut_mu[src]
    np.clip(cut_mu, 0.0, 1.0, out=cut_mu)
    return cut, cut_mu, cut_nu


def parameterize(region: RegionMesh, alpha: int, beta: int,
                 tolerances: GeodesicTolerances = DEFAULT_TOLERANCES) -> SurfaceParameterization:
    """Geodesic latitude/longitude coordinates over the region.

    Latitude of a vertex is d_alpha / (d_alpha + d_beta) from the two
    pole distance fields; longitude is d_left / (d_left + d_right) from
    the fields marched off the two banks of the meridian on the cut
    surface.  Vertices on the meridian itself sit on the left bank and
    get longitude 0; the poles, where longitude is undefined, get 0.5.
    """
    alpha = int(alpha)
    beta = int(beta)
    if alpha == beta:
        raise GeodesicError("alpha equals beta")
    for p in (alpha, beta):
        if not 0 <= p < region.n_vertices:
            raise GeodesicError(f"pole {p} outside region")

    fa = fast_march(region, [alpha], tolerances)
    fb = fast_march(region, [beta], tolerances)
    denom = fa.values + fb.values
    if denom.min() <= 0:
        raise GeodesicError("coincident poles: d_alpha + d_beta vanishes")
    mu = fa.values / denom

    meridian = trace_meridian(fb, alpha, tolerances)
    np.clip(mu, 0.0, 1.0, out=mu)
    cut, cut_mu, cut_nu = _seam_fields(region, meridian, mu, tolerances)

    n = region.n_vertices
    nu = cut_nu[:n].copy()
    nu[cut.on_path] = 0.0
    nu[[alpha, beta]] = 0.5

    return SurfaceParameterization(region=region, mu=mu, nu=nu,
                                   alpha=alpha, beta=beta, meridian=meridian,
                                   cut=cut, cut_mu=cut_mu, cut_nu=cut_nu)


def interpolate_on_path(param: SurfaceParameterization, values: np.ndarray) -> np.ndarray:
    """Barycentric interpolation of a per-vertex quantity at each
    meridian sample (used to check latitude growth along the path)."""
    f = param.region.faces[param.meridian.faces]
    return (values[f] * param.meridian.barys).sum(axis=1)


def transfer_parameterization(source: SurfaceParameterization, target_mesh: TriangleMesh) -> SurfaceParameterization:
    """Carry a parameterization to a point-corresponded mesh instance.

    Works purely by vertex index: the target must have exactly as many
    vertices as the source's parent mesh.  Geometry is re-derived on the
    target; (mu, nu) values are copied unchanged.
    """
    parent = source.region.parent
    if target_mesh.n_vertices != parent.n_vertices:
        raise SurfregError(
            f"vertex count mismatch: source parent has {parent.n_vertices}, "
            f"target has {target_mesh.n_vertices}"
        )
    region = RegionMesh(target_mesh, source.region.vertex_ids)
    f = region.faces[source.meridian.faces]
    pts = np.einsum("kj,kjd->kd", source.meridian.barys, region.vertices[f])
    meridian = GeodesicPath(points=pts, faces=source.meridian.faces.copy(),
                            barys=source.meridian.barys.copy(),
                            kind_code=source.meridian.kind_code.copy(),
                            kind_a=source.meridian.kind_a.copy(),
                            kind_b=source.meridian.kind_b.copy(),
                            kind_t=source.meridian.kind_t.copy())
    cut = cut_mu = cut_nu = None
    if source.cut is not None:
        # the cut is combinatorial given the meridian, so rebuilding it on
        # the target yields the same vertex layout; values move verbatim
        cut = cut_along_meridian(region, meridian)
        if cut.region.n_vertices != source.cut.region.n_vertices:
            raise SurfregError(
                "transferred meridian cuts the target differently than the source"
            )
        cut_mu = source.cut_mu.copy()
        cut_nu = source.cut_nu.copy()
    return SurfaceParameterization(region=region, mu=source.mu.copy(), nu=source.nu.copy(),
                                   alpha=source.alpha, beta=source.beta, meridian=meridian,
                                   cut=cut, cut_mu=cut_mu, cut_nu=cut_nu)


# ---------------------------------------------------------------------------
# serialization: text table with a versioned header

FORMAT_NAME = "surfreg-parameterization"
FORMAT_VERSION = 1


def save_parameterization(path, param: SurfaceParameterization,
                          tolerances: GeodesicTolerances = DEFAULT_TOLERANCES) -> None:
    m = param.meridian
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"format {FORMAT_NAME} {FORMAT_VERSION}\n")
        fh.write(f"alpha {param.alpha}\n")
        fh.write(f"beta {param.beta}\n")
        fh.write(f"tolerance.acute_slack {tolerances.acute_slack:.17g}\n")
        fh.write(f"tolerance.causality_slack {tolerances.causality_slack:.17g}\n")
        fh.write(f"tolerance.snap_frac {tolerances.snap_frac:.17g}\n")
        fh.write(f"tolerance.max_unfold_depth {tolerances.max_unfold_depth}\n")
        fh.write(f"meridian {len(m)}\n")
        for i in range(len(m)):
            fh.write(
                f"m {m.faces[i]} {m.barys[i, 0]:.17g} {m.barys[i, 1]:.17g} {m.barys[i, 2]:.17g} "
                f"{m.points[i, 0]:.17g} {m.points[i, 1]:.17g} {m.points[i, 2]:.17g} "
                f"{int(m.kind_code[i])} {int(m.kind_a[i])} {int(m.kind_b[i])} {m.kind_t[i]:.17g}\n"
            )
        fh.write(f"vertices {param.region.n_vertices}\n")
        for i in range(param.region.n_vertices):
            fh.write(f"v {i} {param.mu[i]:.17g} {param.nu[i]:.17g}\n")


def load_parameterization(path, region: RegionMesh) -> SurfaceParameterization:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    it = iter(enumerate(lines, start=1))

    def fail(lineno, msg):
        raise SurfregError(f"{path}:{lineno}: {msg}")

    lineno, first = next(it)
    parts = first.split()
    if len(parts) != 3 or parts[0] != "format" or parts[1] != FORMAT_NAME:
        fail(lineno, f"not a {FORMAT_NAME} file")
    if int(parts[2]) != FORMAT_VERSION:
        fail(lineno, f"unsupported version {parts[2]}")

    alpha = beta = None
    meridian_rows = []
    n_meridian = n_vertices = None
    mu = nu = None
    tol_fields = {}
    for lineno, raw in it:
        parts = raw.split()
        if not parts:
            continue
        key = parts[0]
        if key == "alpha":
            alpha = int(parts[1])
        elif key == "beta":
            beta = int(parts[1])
        elif key.startswith("tolerance."):
            name = key.split(".", 1)[1]
            if name in GeodesicTolerances.__dataclass_fields__:
                kind = GeodesicTolerances.__dataclass_fields__[name].type
                tol_fields[name] = int(parts[1]) if kind in (int, "int") else float(parts[1])
        elif key == "meridian":
            n_meridian = int(parts[1])
        elif key == "m":
            meridian_rows.append(parts[1:])
        elif key == "vertices":
            n_vertices = int(parts[1])
            if n_vertices != region.n_vertices:
                fail(lineno, f"file has {n_vertices} vertices, region has {region.n_vertices}")
            mu = np.empty(n_vertices)
            nu = np.empty(n_vertices)
        elif key == "v":
            i = int(parts[1])
            mu[i] = float(parts[2])
            nu[i] = float(parts[3])
        else:
            fail(lineno, f"unknown record {key!r}")
    if alpha is None or beta is None or mu is None or n_meridian != len(meridian_rows):
        raise SurfregError(f"{path}: incomplete parameterization file")

    rows = np.asarray(meridian_rows, dtype=object)
    meridian = GeodesicPath(
        points=np.asarray([[float(r[4]), float(r[5]), float(r[6])] for r in rows]),
        faces=np.asarray([int(r[0]) for r in rows], dtype=np.int64),
        barys=np.asarray([[float(r[1]), float(r[2]), float(r[3])] for r in rows]),
        kind_code=np.asarray([int(r[7]) for r in rows], dtype=np.int8),
        kind_a=np.asarray([int(r[8]) for r in rows], dtype=np.int64),
        kind_b=np.asarray([int(r[9]) for r in rows], dtype=np.int64),
        kind_t=np.asarray([float(r[10]) for r in rows]),
    )
    # the seam-split interpolation data is fully determined by region,
    # meridian, and tolerances, so rebuild it instead of storing it
    cut, cut_mu, cut_nu = _seam_fields(region, meridian, mu,
                                       GeodesicTolerances(**tol_fields))
    return SurfaceParameterization(region=region, mu=mu, nu=nu, alpha=alpha, beta=beta,
                                   meridian=meridian, cut=cut, cut_mu=cut_mu, cut_nu=cut_nu)
