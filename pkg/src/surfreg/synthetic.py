"""Synthetic surfaces for tests, demos, and benchmarks.

The icosphere places its first vertex at +z and its last at -z so the
two sphere poles have stable indices across subdivision levels.  The
open patch is an elongated, curved, millimeter-scale surface standing in
for an anatomical landmark region; its outward normals face -z so the
surface is visible to a camera looking along +z under an identity
rotation.
"""

from __future__ import annotations

import numpy as np

from .mesh import TriangleMesh, RegionMesh


def icosphere(subdivisions: int = 0, radius: float = 1.0) -> TriangleMesh:
    """Subdivided icosahedron with polar vertices on the z axis.

    Vertex 0 is the north pole, vertex 11 the south pole, at every
    subdivision level.
    """
    lat = np.arctan(0.5)
    upper = np.arange(5) * (2 * np.pi / 5)
    lower = upper + np.pi / 5
    verts = [np.array([0.0, 0.0, 1.0])]
    verts += [np.array([np.cos(a) * np.cos(lat), np.sin(a) * np.cos(lat), np.sin(lat)]) for a in upper]
    verts += [np.array([np.cos(a) * np.cos(lat), np.sin(a) * np.cos(lat), -np.sin(lat)]) for a in lower]
    verts.append(np.array([0.0, 0.0, -1.0]))
    v = np.array(verts)

    faces = []
    for i in range(5):
        j = (i + 1) % 5
        u0, u1 = 1 + i, 1 + j
        l0, l1 = 6 + i, 6 + j
        faces.append([0, u0, u1])          # polar cap
        faces.append([u0, l0, u1])         # upper band
        faces.append([u1, l0, l1])         # lower band
        faces.append([11, l1, l0])         # south cap
    f = np.array(faces, dtype=np.int64)

    for _ in range(subdivisions):
        v, f = _subdivide_on_sphere(v, f)

    return TriangleMesh(v * radius, f)


def _subdivide_on_sphere(v, f):
    cache: dict[tuple[int, int], int] = {}
    verts = [p for p in v]

    def midpoint(a, b):
        key = (a, b) if a < b else (b, a)
        idx = cache.get(key)
        if idx is None:
            m = verts[a] + verts[b]
            m /= np.linalg.norm(m)
            idx = len(verts)
            verts.append(m)
            cache[key] = idx
        return idx

    out = []
    for a, b, c in f:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out += [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
    return np.array(verts), np.array(out, dtype=np.int64)


def sphere_region(mesh: TriangleMesh) -> RegionMesh:
    """The whole icosphere as a region (poles keep indices 0 and 11)."""
    return RegionMesh(mesh, np.arange(mesh.n_vertices))


def grid_mesh(ni: int, nj: int, extent_i: float, extent_j: float, height=None) -> TriangleMesh:
    """Regular (ni x nj)-vertex grid triangulated into 2*(ni-1)*(nj-1)
    faces, centered at the origin.

    ``height`` is an optional callable z(s, t) over the unit square;
    omitted it yields a flat z = 0 sheet.  Winding is chosen so outward
    normals point toward -z for a flat sheet.
    """
    s = np.linspace(0.0, 1.0, ni)
    t = np.linspace(0.0, 1.0, nj)
    ss, tt = np.meshgrid(s, t, indexing="ij")
    x = (ss - 0.5) * extent_i
    y = (tt - 0.5) * extent_j
    z = np.zeros_like(x) if height is None else np.asarray(height(ss, tt), dtype=np.float64)
    v = np.column_stack([x.ravel(), y.ravel(), z.ravel()])

    idx = np.arange(ni * nj).reshape(ni, nj)
    a = idx[:-1, :-1].ravel()
    b = idx[1:, :-1].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[:-1, 1:].ravel()
    f = np.concatenate([np.column_stack([a, c, b]), np.column_stack([a, d, c])])
    return TriangleMesh(v, f)


def landmark_patch(ni: int = 81, nj: int = 41, length_mm: float = 9.0, width_mm: float = 4.0,
                   depth_mm: float = 2.0, bend_mm: float = 1.0):
    """Open, curved, elongated patch at ossicle scale.

    A rounded dome bulging toward -z with a gentle lateral bend, roughly
    the footprint of a small bony process.  Returns the region (covering
    the whole patch) plus the two pole vertex indices at the ends of the
    long axis.

    Returns
    -------
    region : RegionMesh
    alpha : int
        Pole vertex at the s = 0 end (region-local index).
    beta : int
        Pole vertex at the s = 1 end.
    """
    def height(ss, tt):
        dome = -depth_mm * np.sin(np.pi * ss) ** 0.8 * np.sin(np.pi * tt)
        return dome

    mesh = grid_mesh(ni, nj, length_mm, width_mm, height)
    # lateral bend along the long axis, applied after triangulation so the
    # index layout matches the flat grid
    v = mesh.vertices.copy()
    ss = (v[:, 0] / length_mm) + 0.5
    v[:, 1] += bend_mm * np.sin(np.pi * ss)
    mesh = TriangleMesh(v, mesh.faces)

    region = RegionMesh(mesh, np.arange(mesh.n_vertices))
    mid_j = nj // 2
    alpha = int(0 * nj + mid_j)
    beta = int((ni - 1) * nj + mid_j)
    return region, alpha, beta


def split_square(extent: float = 1.0) -> TriangleMesh:
    """Unit square split by the (0,0)-(1,1) diagonal; two faces."""
    v = np.array([
        [0.0, 0.0, 0.0],
        [extent, 0.0, 0.0],
        [extent, extent, 0.0],
        [0.0, extent, 0.0],
    ])
    f = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int64)
    return TriangleMesh(v, f)
