"""Triangle meshes, region extraction, and OBJ/PLY I/O.

Vertex positions are stored in millimeters everywhere and loaders never
rescale.  Vertex order is preserved exactly as stored on disk because
parameterizations transfer across morphed mesh instances purely by vertex
index.  Duplicate vertex positions are allowed and never welded for the
same reason.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import MeshFormatError, RegionError


class TriangleMesh:
    """Indexed triangle surface.

    Parameters
    ----------
    vertices : (n, 3) array_like
        Vertex positions in millimeters.
    faces : (m, 3) array_like
        Vertex-index triples with consistent winding.
    labels : (n,) array_like, optional
        Per-vertex integer labels.

    Notes
    -----
    Instances are immutable after construction (the arrays are marked
    read-only), so concurrent reads from multiple threads are safe.
    """

    def __init__(self, vertices, faces, labels=None):
        v = np.ascontiguousarray(vertices, dtype=np.float64)
        f = np.ascontiguousarray(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshFormatError(f"vertices must be (n, 3), got {v.shape}")
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshFormatError(f"faces must be (m, 3), got {f.shape}")
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                bad = int(np.flatnonzero((f < 0).any(axis=1) | (f >= len(v)).any(axis=1))[0])
                raise MeshFormatError(
                    f"face {bad} references vertex outside 0..{len(v) - 1}: {f[bad].tolist()}"
                )
            degen = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 2] == f[:, 0])
            if degen.any():
                bad = int(np.flatnonzero(degen)[0])
                raise MeshFormatError(f"face {bad} references the same vertex twice: {f[bad].tolist()}")
        self.vertices = v
        self.faces = f
        self.labels = None if labels is None else np.asarray(labels).copy()
        for a in (self.vertices, self.faces, self.labels):
            if a is not None:
                a.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def __repr__(self):
        return f"TriangleMesh({self.n_vertices} vertices, {self.n_faces} faces)"


def orientation_is_consistent(faces) -> bool:
    """True if every interior edge is traversed in opposite directions
    by its two incident faces (and no directed edge repeats)."""
    f = np.asarray(faces)
    if f.size == 0:
        return True
    directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    keys = directed[:, 0].astype(np.int64) * (f.max() + 1) + directed[:, 1]
    # A repeated directed edge means two faces traverse it the same way.
    return len(np.unique(keys)) == len(keys)


class RegionMesh:
    """A connected sub-surface of a parent mesh, re-indexed locally.

    The region keeps a bidirectional index map so per-vertex data can
    move between parent and region numbering.  Faces are exactly the
    parent faces whose three corners are all selected.
    """

    def __init__(self, parent: TriangleMesh, vertex_ids):
        ids = np.unique(np.asarray(vertex_ids, dtype=np.int64))
        if ids.size == 0:
            raise RegionError("empty vertex selection")
        if ids.min() < 0 or ids.max() >= parent.n_vertices:
            raise RegionError(
                f"selection contains vertex {int(ids.min() if ids.min() < 0 else ids.max())} "
                f"outside 0..{parent.n_vertices - 1}"
            )
        to_region = np.full(parent.n_vertices, -1, dtype=np.int64)
        to_region[ids] = np.arange(ids.size)
        keep = (to_region[parent.faces] >= 0).all(axis=1)
        faces = to_region[parent.faces[keep]]
        if faces.size == 0:
            raise RegionError("selection induces no faces")
        if not orientation_is_consistent(faces):
            raise RegionError("region faces are not consistently oriented")

        self.parent = parent
        self.vertex_ids = ids                      # region index -> parent index
        self.to_region = to_region                 # parent index -> region index or -1
        self.faces = faces                         # region-local indices
        self.parent_face_ids = np.flatnonzero(keep)
        self.vertices = parent.vertices[ids]

        n_comp, sizes = _edge_components(ids.size, faces)
        if n_comp != 1:
            raise RegionError(
                f"region is not edge-connected: {n_comp} components "
                f"(sizes {sorted(sizes, reverse=True)})"
            )
        for a in (self.vertex_ids, self.to_region, self.faces, self.parent_face_ids, self.vertices):
            a.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_ids)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def __repr__(self):
        return f"RegionMesh({self.n_vertices} vertices, {self.n_faces} faces)"


def _edge_components(n_vertices, faces):
    """Connected components of the vertex graph induced by face edges.

    Vertices outside any face each count as their own component.
    """
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    adj = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n_vertices, n_vertices))
    n_comp, labels = connected_components(adj, directed=False)
    sizes = np.bincount(labels).tolist()
    return n_comp, sizes


def extract_region(mesh: TriangleMesh, vertex_ids) -> RegionMesh:
    """Select a sub-surface: the faces whose three vertices are all in
    ``vertex_ids``.

    Raises
    ------
    RegionError
        If the selection induces no faces or is not a single
        edge-connected component.
    """
    return RegionMesh(mesh, vertex_ids)


# ---------------------------------------------------------------------------
# region selection files: one 0-based vertex index per line, '#' comments

def load_region_ids(path) -> np.ndarray:
    ids = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                ids.append(int(line))
            except ValueError:
                raise MeshFormatError(f"{path}:{lineno}: not a vertex index: {line!r}") from None
    return np.asarray(ids, dtype=np.int64)


def save_region_ids(path, vertex_ids) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# 0-based vertex indices, one per line\n")
        for i in np.asarray(vertex_ids).ravel():
            fh.write(f"{int(i)}\n")


# ---------------------------------------------------------------------------
# OBJ

def load_obj(path) -> TriangleMesh:
    """Read ``v x y z`` and ``f i j k`` records (1-based indices).

    Other record types are ignored.  Faces with more or fewer than three
    corners are rejected: fan-triangulation would silently change the
    index structure that parameterization transfer depends on.
    """
    vertices, faces = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise MeshFormatError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError:
                    raise MeshFormatError(f"{path}:{lineno}: bad vertex coordinate") from None
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise MeshFormatError(
                        f"{path}:{lineno}: only triangle faces are accepted, got {len(parts) - 1} corners"
                    )
                idx = []
                for tok in parts[1:]:
                    head = tok.split("/", 1)[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise MeshFormatError(f"{path}:{lineno}: bad face index {tok!r}") from None
                    if i <= 0:
                        raise MeshFormatError(f"{path}:{lineno}: face indices must be positive, got {i}")
                    idx.append(i - 1)
                faces.append(idx)
    try:
        return TriangleMesh(np.asarray(vertices, dtype=np.float64).reshape(-1, 3),
                            np.asarray(faces, dtype=np.int64).reshape(-1, 3))
    except MeshFormatError as e:
        raise MeshFormatError(f"{path}: {e}") from None


def save_obj(path, mesh: TriangleMesh) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


# ---------------------------------------------------------------------------
# PLY (ascii and binary_little_endian)

_PLY_SCALARS = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def load_ply(path) -> TriangleMesh:
    """Read a PLY mesh: ``vertex`` element with float x, y, z properties
    (extra scalar properties are skipped) and a ``face`` element whose
    index lists must have exactly three entries."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"ply"):
        raise MeshFormatError(f"{path}: not a PLY file")
    end = data.find(b"end_header\n")
    if end < 0:
        raise MeshFormatError(f"{path}: missing end_header")
    header = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[end + len(b"end_header\n"):]

    fmt = None
    elements = []  # (name, count, [(prop_name, kind)]) where kind is dtype str or ("list", ct, it)
    for line in header[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MeshFormatError(f"{path}: property before element in header")
            if parts[1] == "list":
                elements[-1][2].append((parts[4], ("list", _PLY_SCALARS[parts[2]], _PLY_SCALARS[parts[3]])))
            else:
                if parts[1] not in _PLY_SCALARS:
                    raise MeshFormatError(f"{path}: unsupported property type {parts[1]!r}")
                elements[-1][2].append((parts[2], _PLY_SCALARS[parts[1]]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise MeshFormatError(f"{path}: unsupported format {fmt!r}")

    vertices = faces = None
    offset = 0
    tokens = None
    tok_pos = 0
    if fmt == "ascii":
        tokens = body.split()

    for name, count, props in elements:
        if fmt == "ascii":
            if name == "vertex":
                names = [p[0] for p in props]
                if any(isinstance(p[1], tuple) for p in props):
                    raise MeshFormatError(f"{path}: list property on vertex element")
                ncols = len(props)
                need = count * ncols
                vals = np.array(tokens[tok_pos:tok_pos + need], dtype=np.float64).reshape(count, ncols)
                tok_pos += need
                try:
                    cols = [names.index(c) for c in ("x", "y", "z")]
                except ValueError:
                    raise MeshFormatError(f"{path}: vertex element lacks x, y, z") from None
                vertices = vals[:, cols]
            elif name == "face":
                rows = []
                for _ in range(count):
                    n = int(tokens[tok_pos]); tok_pos += 1
                    if n != 3:
                        raise MeshFormatError(f"{path}: face with {n} indices (triangles only)")
                    rows.append([int(t) for t in tokens[tok_pos:tok_pos + 3]])
                    tok_pos += 3
                faces = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
            else:
                if any(isinstance(p[1], tuple) for p in props):
                    raise MeshFormatError(f"{path}: cannot skip list element {name!r} in ascii")
                tok_pos += count * len(props)
        else:
            if name == "vertex":
                if any(isinstance(p[1], tuple) for p in props):
                    raise MeshFormatError(f"{path}: list property on vertex element")
                dt = np.dtype([(p[0], "<" + p[1]) for p in props])
                arr = np.frombuffer(body, dtype=dt, count=count, offset=offset)
                offset += dt.itemsize * count
                try:
                    vertices = np.column_stack([arr["x"], arr["y"], arr["z"]]).astype(np.float64)
                except KeyError:
                    raise MeshFormatError(f"{path}: vertex element lacks x, y, z") from None
            elif name == "face":
                lists = [p for p in props if isinstance(p[1], tuple)]
                if len(props) != 1 or len(lists) != 1:
                    raise MeshFormatError(f"{path}: face element must hold a single index list")
                _, (_, ct, it) = lists[0]
                csz, isz = np.dtype(ct).itemsize, np.dtype(it).itemsize
                rows = np.empty((count, 3), dtype=np.int64)
                for r in range(count):
                    (n,) = struct.unpack_from("<" + {1: "B", 2: "H", 4: "I"}[csz], body, offset)
                    offset += csz
                    if n != 3:
                        raise MeshFormatError(f"{path}: face {r} has {n} indices (triangles only)")
                    rows[r] = np.frombuffer(body, dtype="<" + it, count=3, offset=offset)
                    offset += 3 * isz
                faces = rows
            else:
                dt = np.dtype([(p[0], "<" + p[1]) for p in props if not isinstance(p[1], tuple)])
                if len(dt) != len(props):
                    raise MeshFormatError(f"{path}: cannot skip list element {name!r}")
                offset += dt.itemsize * count

    if vertices is None:
        raise MeshFormatError(f"{path}: no vertex element")
    if faces is None:
        faces = np.zeros((0, 3), dtype=np.int64)
    try:
        return TriangleMesh(vertices, faces)
    except MeshFormatError as e:
        raise MeshFormatError(f"{path}: {e}") from None


def save_ply(path, mesh: TriangleMesh, binary: bool = True) -> None:
    header = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {mesh.n_vertices}",
        "property double x",
        "property double y",
        "property double z",
        f"element face {mesh.n_faces}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
            for f in mesh.faces:
                fh.write(struct.pack("<Biii", 3, int(f[0]), int(f[1]), int(f[2])))
        else:
            lines = [f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}" for v in mesh.vertices]
            lines += [f"3 {f[0]} {f[1]} {f[2]}" for f in mesh.faces]
            fh.write(("\n".join(lines) + "\n").encode("ascii"))


def load_mesh(path, format: str | None = None) -> TriangleMesh:
    """Load an OBJ or PLY triangle mesh.

    ``format`` may be ``"OBJ"`` or ``"PLY"``; when omitted it is inferred
    from the file suffix.
    """
    p = Path(path)
    if format is None:
        format = p.suffix.lstrip(".").upper()
    fmt = format.upper()
    if fmt == "OBJ":
        return load_obj(p)
    if fmt == "PLY":
        return load_ply(p)
    raise MeshFormatError(f"unknown mesh format {format!r} for {path}")


def save_mesh(path, mesh: TriangleMesh, format: str | None = None, binary: bool = True) -> None:
    p = Path(path)
    if format is None:
        format = p.suffix.lstrip(".").upper()
    fmt = format.upper()
    if fmt == "OBJ":
        save_obj(p, mesh)
    elif fmt == "PLY":
        save_ply(p, mesh, binary=binary)
    else:
        raise MeshFormatError(f"unknown mesh format {format!r} for {path}")
