"""Triangle meshes: container, load-time cleaning, primitives and file I/O.

Supported formats are Wavefront OBJ (with the common ``v x y z r g b``
vertex-color extension, ``vt`` texture coordinates and a ``map_Kd`` texture
in the referenced MTL) and PLY (ascii and binary_little_endian).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import AssetError, DegenerateInputError

MIN_TRIANGLE_AREA = 1e-12


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    colors: np.ndarray | None = None  # (N, 3) float in [0, 1]
    uv: np.ndarray | None = None  # (N, 2), v measured upward as in OBJ
    texture: np.ndarray | None = None  # (H, W, 3) uint8
    texture_path: str | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise AssetError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if self.colors is not None:
            object.__setattr__(self, "colors", np.asarray(self.colors, dtype=np.float64).reshape(-1, 3))
        if self.uv is not None:
            object.__setattr__(self, "uv", np.asarray(self.uv, dtype=np.float64).reshape(-1, 2))

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def surface_area(self) -> float:
        return float(self.triangle_areas().sum())

    def cleaned(self) -> TriangleMesh:
        """Drop triangles with area <= 1e-12 m² or repeated indices."""
        t = self.triangles
        ok = (t[:, 0] != t[:, 1]) & (t[:, 1] != t[:, 2]) & (t[:, 0] != t[:, 2])
        ok &= self.triangle_areas() > MIN_TRIANGLE_AREA
        return replace(self, triangles=t[ok])

    def transformed(self, T) -> TriangleMesh:
        return replace(self, vertices=T.apply(self.vertices))

    def centroid(self) -> np.ndarray:
        """Area-weighted surface centroid."""
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        w = self.triangle_areas()
        return ((a + b + c) / 3.0 * w[:, None]).sum(axis=0) / w.sum()

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        used = self.vertices[np.unique(self.triangles)] if len(self.triangles) else self.vertices
        return used.min(axis=0), used.max(axis=0)

    def with_color(self, rgb) -> TriangleMesh:
        return replace(self, colors=np.tile(np.asarray(rgb, dtype=np.float64), (len(self.vertices), 1)))


def merge(meshes: list[TriangleMesh]) -> TriangleMesh:
    verts, tris, cols = [], [], []
    base = 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + base)
        cols.append(m.colors if m.colors is not None else np.full((len(m.vertices), 3), 0.7))
        base += len(m.vertices)
    return TriangleMesh(np.concatenate(verts), np.concatenate(tris), np.concatenate(cols))


# ---------------------------------------------------------------------------
# Primitives


def box(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Closed, outward-oriented box."""
    size = np.asarray(size, dtype=np.float64)
    corners = np.array([[(i >> k) & 1 for k in range(3)] for i in range(8)], dtype=np.float64)
    v = (corners - 0.5) * size + np.asarray(center, dtype=np.float64)
    quads = [
        (0, 2, 3, 1),  # z-
        (4, 5, 7, 6),  # z+
        (0, 1, 5, 4),  # y-
        (2, 6, 7, 3),  # y+
        (0, 4, 6, 2),  # x-
        (1, 3, 7, 5),  # x+
    ]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return TriangleMesh(v, np.array(tris))


def extrude(polygon, height: float) -> TriangleMesh:
    """Prism from a counter-clockwise simple polygon in the xy-plane, z in [0, height].

    Caps are ear-clipped, so non-convex outlines (L shapes, notches) work.
    """
    poly = np.asarray(polygon, dtype=np.float64)
    n = len(poly)
    bottom = np.column_stack([poly, np.zeros(n)])
    top = np.column_stack([poly, np.full(n, height)])
    v = np.vstack([bottom, top])
    cap = _ear_clip(poly)
    tris = [(c, b, a) for a, b, c in cap]  # bottom faces -z
    tris += [(a + n, b + n, c + n) for a, b, c in cap]
    for i in range(n):
        j = (i + 1) % n
        tris += [(i, j, j + n), (i, j + n, i + n)]
    return TriangleMesh(v, np.array(tris))


def _ear_clip(poly: np.ndarray) -> list[tuple[int, int, int]]:
    idx = list(range(len(poly)))
    out = []

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    guard = 0
    while len(idx) > 3 and guard < 10_000:
        guard += 1
        for k in range(len(idx)):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            a, b, c = poly[i0], poly[i1], poly[i2]
            if cross(a, b, c) <= 0:
                continue
            inside = False
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                p = poly[j]
                if cross(a, b, p) >= 0 and cross(b, c, p) >= 0 and cross(c, a, p) >= 0:
                    inside = True
                    break
            if not inside:
                out.append((i0, i1, i2))
                idx.pop(k)
                break
    out.append(tuple(idx))
    return out


def icosphere(radius: float = 1.0, subdivisions: int = 2) -> TriangleMesh:
    t = (1.0 + 5**0.5) / 2.0
    v = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    f = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriangleMesh(np.array(verts) * radius, np.array(faces))


def quad(size_x: float, size_y: float, center=(0.0, 0.0, 0.0), uv_repeat: float = 1.0) -> TriangleMesh:
    """Upward-facing rectangle in the plane z = center[2], with uv coordinates."""
    cx, cy, cz = center
    hx, hy = size_x / 2.0, size_y / 2.0
    v = np.array([[cx - hx, cy - hy, cz], [cx + hx, cy - hy, cz], [cx + hx, cy + hy, cz], [cx - hx, cy + hy, cz]])
    uv = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]) * uv_repeat
    return TriangleMesh(v, np.array([[0, 1, 2], [0, 2, 3]]), uv=uv)


# ---------------------------------------------------------------------------
# File I/O


def load_mesh(path: str | os.PathLike) -> TriangleMesh:
    path = Path(path)
    if not path.exists():
        raise AssetError(f"mesh file not found: {path}")
    suffix = path.suffix.lower()
    try:
        if suffix == ".obj":
            mesh = _load_obj(path)
        elif suffix == ".ply":
            mesh = _load_ply(path)
        else:
            raise AssetError(f"unsupported mesh format: {path.suffix}")
    except AssetError:
        raise
    except (ValueError, IndexError, KeyError, OSError) as exc:
        raise AssetError(f"cannot parse mesh {path}: {exc}") from exc
    if mesh.is_empty:
        raise AssetError(f"mesh has no triangles: {path}")
    return mesh.cleaned()


def save_mesh(mesh: TriangleMesh, path: str | os.PathLike, binary: bool = False) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        _save_obj(mesh, path)
    elif suffix == ".ply":
        _save_ply(mesh, path, binary=binary)
    else:
        raise AssetError(f"unsupported mesh format: {path.suffix}")


def _load_obj(path: Path) -> TriangleMesh:
    positions, colors, texcoords, faces = [], [], [], []
    texture_path = None
    for raw in path.read_text(encoding="utf-8").splitlines():
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        if tag == "v":
            positions.append([float(x) for x in parts[1:4]])
            if len(parts) >= 7:
                colors.append([float(x) for x in parts[4:7]])
        elif tag == "vt":
            texcoords.append([float(x) for x in parts[1:3]])
        elif tag == "f":
            corners = []
            for item in parts[1:]:
                fields = item.split("/")
                vi = int(fields[0])
                vi = vi - 1 if vi > 0 else len(positions) + vi
                ti = None
                if len(fields) > 1 and fields[1]:
                    ti = int(fields[1])
                    ti = ti - 1 if ti > 0 else len(texcoords) + ti
                corners.append((vi, ti))
            for k in range(1, len(corners) - 1):
                faces.append((corners[0], corners[k], corners[k + 1]))
        elif tag == "mtllib":
            texture_path = _texture_from_mtl(path.parent / " ".join(parts[1:]))

    positions = np.array(positions, dtype=np.float64).reshape(-1, 3)
    has_colors = len(colors) == len(positions) and len(colors) > 0
    has_uv = len(texcoords) > 0 and all(c[1] is not None for f in faces for c in f)
    if not has_uv:
        tris = np.array([[c[0] for c in f] for f in faces], dtype=np.int64).reshape(-1, 3)
        return TriangleMesh(positions, tris, np.array(colors) if has_colors else None)

    # split vertices on distinct (position, texcoord) pairs
    key_to_index: dict[tuple[int, int], int] = {}
    tris = []
    for f in faces:
        tri = []
        for key in f:
            if key not in key_to_index:
                key_to_index[key] = len(key_to_index)
            tri.append(key_to_index[key])
        tris.append(tri)
    keys = list(key_to_index)
    vi = np.array([k[0] for k in keys])
    ti = np.array([k[1] for k in keys])
    texture = None
    if texture_path is not None and Path(texture_path).exists():
        texture = np.array(Image.open(texture_path).convert("RGB"))
    return TriangleMesh(
        positions[vi],
        np.array(tris),
        np.array(colors)[vi] if has_colors else None,
        np.array(texcoords)[ti],
        texture,
        str(texture_path) if texture_path else None,
    )


def _texture_from_mtl(mtl: Path) -> Path | None:
    if not mtl.exists():
        return None
    for line in mtl.read_text(encoding="utf-8").splitlines():
        parts = line.split()
        if parts and parts[0] == "map_Kd":
            return mtl.parent / parts[-1]
    return None


def _save_obj(mesh: TriangleMesh, path: Path) -> None:
    lines = [f"# {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles"]
    if mesh.texture is not None:
        tex_name = path.stem + "_texture.png"
        Image.fromarray(np.asarray(mesh.texture, dtype=np.uint8)).save(path.parent / tex_name)
        mtl_name = path.stem + ".mtl"
        (path.parent / mtl_name).write_text(f"newmtl material0\nmap_Kd {tex_name}\n", encoding="utf-8")
        lines += [f"mtllib {mtl_name}", "usemtl material0"]
    rows = mesh.vertices.tolist() if mesh.colors is None else np.hstack([mesh.vertices, mesh.colors]).tolist()
    lines += ["v " + " ".join(map(repr, r)) for r in rows]
    if mesh.uv is not None:
        lines += ["vt " + " ".join(map(repr, t)) for t in mesh.uv.tolist()]
        lines += [f"f {a + 1}/{a + 1} {b + 1}/{b + 1} {c + 1}/{c + 1}" for a, b, c in mesh.triangles]
    else:
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _load_ply(path: Path) -> TriangleMesh:
    data = path.read_bytes()
    end = data.index(b"end_header")
    end = data.index(b"\n", end) + 1
    header = data[:end].decode("ascii").splitlines()
    fmt = None
    elements: list[tuple[str, int, list]] = []
    for line in header:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            elements[-1][2].append(parts[1:])
    if fmt not in ("ascii", "binary_little_endian"):
        raise AssetError(f"unsupported PLY format {fmt}")

    body = data[end:]
    vertex_data = None
    faces = None
    if fmt == "ascii":
        tokens = body.decode("ascii").split()
        pos = 0
        for name, count, props in elements:
            if name == "face":
                tris = []
                for _ in range(count):
                    k = int(tokens[pos])
                    idx = [int(x) for x in tokens[pos + 1 : pos + 1 + k]]
                    pos += 1 + k
                    tris += [(idx[0], idx[i], idx[i + 1]) for i in range(1, k - 1)]
                faces = np.array(tris, dtype=np.int64).reshape(-1, 3)
            else:
                width = len(props)
                block = np.array(tokens[pos : pos + count * width], dtype=np.float64).reshape(count, width)
                pos += count * width
                if name == "vertex":
                    vertex_data = {p[-1]: block[:, i] for i, p in enumerate(props)}
    else:
        offset = 0
        for name, count, props in elements:
            if name == "face":
                count_t = np.dtype(_PLY_TYPES[props[0][1]])
                index_t = np.dtype(_PLY_TYPES[props[0][2]])
                tris = []
                for _ in range(count):
                    k = int(np.frombuffer(body, count_t.newbyteorder("<"), 1, offset)[0])
                    offset += count_t.itemsize
                    idx = np.frombuffer(body, index_t.newbyteorder("<"), k, offset).astype(np.int64)
                    offset += k * index_t.itemsize
                    tris += [(idx[0], idx[i], idx[i + 1]) for i in range(1, k - 1)]
                faces = np.array(tris, dtype=np.int64).reshape(-1, 3)
            else:
                dt = np.dtype([(p[-1], "<" + _PLY_TYPES[p[0]]) for p in props])
                block = np.frombuffer(body, dt, count, offset)
                offset += count * dt.itemsize
                if name == "vertex":
                    vertex_data = {k: block[k].astype(np.float64) for k in dt.names}
    if vertex_data is None or faces is None:
        raise AssetError(f"PLY without vertex or face element: {path}")
    v = np.column_stack([vertex_data["x"], vertex_data["y"], vertex_data["z"]])
    colors = None
    if all(k in vertex_data for k in ("red", "green", "blue")):
        colors = np.column_stack([vertex_data["red"], vertex_data["green"], vertex_data["blue"]]) / 255.0
    uv = None
    if "u" in vertex_data and "v" in vertex_data:
        uv = np.column_stack([vertex_data["u"], vertex_data["v"]])
    return TriangleMesh(v, faces, colors, uv)


def _save_ply(mesh: TriangleMesh, path: Path, binary: bool = False) -> None:
    n = len(mesh.vertices)
    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0", f"element vertex {n}"]
    header += ["property double x", "property double y", "property double z"]
    if mesh.colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    if mesh.uv is not None:
        header += ["property double u", "property double v"]
        fields += [("u", "<f8"), ("v", "<f8")]
    header += [f"element face {len(mesh.triangles)}", "property list uchar int vertex_indices", "end_header"]

    rows = np.zeros(n, dtype=fields)
    rows["x"], rows["y"], rows["z"] = mesh.vertices.T
    if mesh.colors is not None:
        rgb = np.clip(np.floor(mesh.colors * 255.0 + 0.5), 0, 255).astype(np.uint8)
        rows["red"], rows["green"], rows["blue"] = rgb.T
    if mesh.uv is not None:
        rows["u"], rows["v"] = mesh.uv.T

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(rows.tobytes())
            faces = np.zeros(len(mesh.triangles), dtype=[("k", "u1"), ("idx", "<i4", (3,))])
            faces["k"] = 3
            faces["idx"] = mesh.triangles
            fh.write(faces.tobytes())
        else:
            out = []
            for r in rows:
                out.append(" ".join(repr(float(x)) if np.issubdtype(type(x), np.floating) else str(int(x)) for x in r))
            out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
            fh.write(("\n".join(out) + "\n").encode("ascii"))


def require_nonempty(mesh: TriangleMesh) -> None:
    if mesh.is_empty:
        raise DegenerateInputError("mesh has no triangles")
