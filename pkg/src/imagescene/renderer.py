"""Deterministic software rasterizer.

Produces color, camera-space depth and a per-pixel id map. Rules:

- Pixel (i, j) is sampled at its center (i + 0.5, j + 0.5).
- Fill rule: a center exactly on an edge belongs to the triangle for which
  that edge is a top or left edge (clockwise winding in the y-down image),
  so a pixel on an edge shared by two triangles is drawn exactly once.
- Depth is 1 / (barycentric interpolation of 1/z), exact for planar
  triangles. Attributes are interpolated perspective-correctly.
- z-buffer: the smallest depth wins; equal depths go to the item drawn
  first, then to the lower triangle index. The plane primitive counts as
  drawn before every mesh.
- Triangles crossing the near plane are clipped in camera space.

Everything is vectorized over fragments and resolved with a stable sort,
so results do not depend on batching.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .geometry import Intrinsics, Plane, RigidTransform, SimilarityTransform
from .mesh import TriangleMesh

SHADING_MODES = ("flat", "vertex-color", "textured")
BACKGROUND_POLICIES = ("invalid-depth", "far-plane")
NO_HIT = -1


@dataclass(frozen=True)
class RenderSettings:
    width: int
    height: int
    shading: str = "vertex-color"
    background_policy: str = "invalid-depth"
    near: float = 1e-3
    far: float = 100.0
    background_color: tuple = (0, 0, 0)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ConfigurationError("render dimensions must be positive")
        if self.shading not in SHADING_MODES:
            raise ConfigurationError(f"shading must be one of {SHADING_MODES}")
        if self.background_policy not in BACKGROUND_POLICIES:
            raise ConfigurationError(f"background_policy must be one of {BACKGROUND_POLICIES}")
        if not 0 < self.near < self.far:
            raise ConfigurationError("need 0 < near < far")

    @classmethod
    def for_intrinsics(cls, K: Intrinsics, **kw) -> RenderSettings:
        return cls(K.width, K.height, **kw)


@dataclass(frozen=True)
class RenderItem:
    mesh: TriangleMesh
    pose: SimilarityTransform | RigidTransform = field(default_factory=SimilarityTransform)
    id: int = 1
    color: tuple | None = None  # overrides vertex colors when set


@dataclass(frozen=True)
class PlanePrimitive:
    plane: Plane  # world frame
    id: int = 0
    color: tuple = (0.5, 0.5, 0.5)


@dataclass
class RenderOutput:
    color: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) float64, camera-space Z; 0 where nothing was hit
    ids: np.ndarray  # (H, W) int64, NO_HIT where nothing was hit
    faces: np.ndarray | None = None  # (H, W) triangle index within the hit mesh, -1 for plane or no hit

    def instance_mask(self, background_id: int = 0) -> np.ndarray:
        """Label raster with ids > background_id kept and everything else 0."""
        return np.where(self.ids > background_id, self.ids, 0)


def to_uint8(rgb: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(np.asarray(rgb) * 255.0 + 0.5), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# Triangle soup assembly


@dataclass
class _Soup:
    cam: np.ndarray  # (T, 3, 3) camera-space corners
    color: np.ndarray  # (T, 3, 3)
    uv: np.ndarray  # (T, 3, 2)
    texture: np.ndarray  # (T,) index into texture list, -1 = none
    item: np.ndarray  # (T,) draw order
    ids: np.ndarray  # (T,)
    face: np.ndarray  # (T,) triangle index within its item's mesh


_FIELDS = ("cam", "color", "uv", "texture", "item", "ids", "face")


def _assemble(items, camera_from_world: RigidTransform) -> tuple[_Soup, list[np.ndarray]]:
    cams, cols, uvs, texs, order, ids, faces = [], [], [], [], [], [], []
    textures: list[np.ndarray] = []
    for k, it in enumerate(items):
        mesh = it.mesh
        if mesh.is_empty:
            continue
        v = camera_from_world.apply(it.pose.apply(mesh.vertices))
        tri = mesh.triangles
        cams.append(v[tri])
        if it.color is not None:
            c = np.broadcast_to(np.asarray(it.color, dtype=np.float64), (len(tri), 3, 3))
        elif mesh.colors is not None:
            c = mesh.colors[tri]
        else:
            c = np.full((len(tri), 3, 3), 0.7)
        cols.append(np.asarray(c, dtype=np.float64))
        if mesh.uv is not None and mesh.texture is not None:
            uvs.append(mesh.uv[tri])
            texs.append(np.full(len(tri), len(textures)))
            textures.append(np.asarray(mesh.texture, dtype=np.uint8))
        else:
            uvs.append(np.zeros((len(tri), 3, 2)))
            texs.append(np.full(len(tri), -1))
        order.append(np.full(len(tri), k))
        ids.append(np.full(len(tri), it.id))
        faces.append(np.arange(len(tri)))
    if not cams:
        empty = np.zeros((0, 3, 3))
        none = np.zeros(0, int)
        return _Soup(empty, empty, np.zeros((0, 3, 2)), none, none, none, none), textures
    return (
        _Soup(
            np.concatenate(cams),
            np.concatenate(cols),
            np.concatenate(uvs),
            np.concatenate(texs),
            np.concatenate(order),
            np.concatenate(ids),
            np.concatenate(faces),
        ),
        textures,
    )


def _clip_near(s: _Soup, near: float) -> _Soup:
    z = s.cam[:, :, 2]
    inside = z >= near
    keep = inside.all(axis=1)
    straddle = inside.any(axis=1) & ~keep
    if not straddle.any():
        return _Soup(*(getattr(s, f)[keep] for f in _FIELDS))

    extra = {k: [] for k in _FIELDS + ("src",)}
    for t in np.nonzero(straddle)[0]:
        poly = []
        for a in range(3):
            b = (a + 1) % 3
            pa, pb = s.cam[t, a], s.cam[t, b]
            if pa[2] >= near:
                poly.append((pa, s.color[t, a], s.uv[t, a]))
            if (pa[2] >= near) != (pb[2] >= near):
                w = (near - pa[2]) / (pb[2] - pa[2])
                p = pa + w * (pb - pa)
                p[2] = near
                poly.append((p, s.color[t, a] + w * (s.color[t, b] - s.color[t, a]), s.uv[t, a] + w * (s.uv[t, b] - s.uv[t, a])))
        for k in range(1, len(poly) - 1):
            corners = (poly[0], poly[k], poly[k + 1])
            extra["cam"].append(np.array([c[0] for c in corners]))
            extra["color"].append(np.array([c[1] for c in corners]))
            extra["uv"].append(np.array([c[2] for c in corners]))
            extra["texture"].append(s.texture[t])
            extra["item"].append(s.item[t])
            extra["ids"].append(s.ids[t])
            extra["face"].append(s.face[t])
            extra["src"].append(t)
    # keep the soup in source order so depth ties follow draw order
    src = np.concatenate([np.nonzero(keep)[0], np.array(extra["src"], dtype=np.int64)])
    merged = _Soup(
        np.concatenate([s.cam[keep], np.array(extra["cam"]).reshape(-1, 3, 3)]),
        np.concatenate([s.color[keep], np.array(extra["color"]).reshape(-1, 3, 3)]),
        np.concatenate([s.uv[keep], np.array(extra["uv"]).reshape(-1, 3, 2)]),
        np.concatenate([s.texture[keep], np.array(extra["texture"], dtype=np.int64)]),
        np.concatenate([s.item[keep], np.array(extra["item"], dtype=np.int64)]),
        np.concatenate([s.ids[keep], np.array(extra["ids"], dtype=np.int64)]),
        np.concatenate([s.face[keep], np.array(extra["face"], dtype=np.int64)]),
    )
    perm = np.argsort(src, kind="stable")
    return _Soup(*(getattr(merged, f)[perm] for f in _FIELDS))


# ---------------------------------------------------------------------------
# Rasterization


def _fragments(screen: np.ndarray, width: int, height: int, chunk_elements: int = 2_000_000):
    """All (triangle, pixel) pairs whose pixel center is covered, per the fill rule.

    ``screen`` is (T, 3, 2) in continuous pixel coordinates with positive
    orientation. Returns triangle index, column, row, and the three edge values.
    """
    x, y = screen[:, :, 0], screen[:, :, 1]
    i0 = np.ceil(x.min(axis=1) - 0.5).astype(np.int64)
    i1 = np.floor(x.max(axis=1) - 0.5).astype(np.int64)
    j0 = np.ceil(y.min(axis=1) - 0.5).astype(np.int64)
    j1 = np.floor(y.max(axis=1) - 0.5).astype(np.int64)
    i0, j0 = np.maximum(i0, 0), np.maximum(j0, 0)
    i1, j1 = np.minimum(i1, width - 1), np.minimum(j1, height - 1)
    live = (i1 >= i0) & (j1 >= j0)
    size = np.maximum(i1 - i0 + 1, j1 - j0 + 1)
    window = np.where(live, 1 << np.ceil(np.log2(np.maximum(size, 1))).astype(np.int64), 0)

    # edge k runs from corner k+1 to corner k+2 and bounds barycentric weight k
    ax = np.stack([x[:, 1], x[:, 2], x[:, 0]], axis=1)
    ay = np.stack([y[:, 1], y[:, 2], y[:, 0]], axis=1)
    bx = np.stack([x[:, 2], x[:, 0], x[:, 1]], axis=1)
    by = np.stack([y[:, 2], y[:, 0], y[:, 1]], axis=1)
    dx, dy = bx - ax, by - ay
    top_left = (dy < 0) | ((dy == 0) & (dx > 0))
    # Evaluate every edge from its lexicographically smaller endpoint and
    # negate afterwards, so an edge shared by two triangles yields exactly
    # opposite values and the fill rule can assign on-edge centers once.
    rev = (ax > bx) | ((ax == bx) & (ay > by))
    ax, bx = np.where(rev, bx, ax), np.where(rev, ax, bx)
    ay, by = np.where(rev, by, ay), np.where(rev, ay, by)
    dx, dy = bx - ax, by - ay
    sign = np.where(rev, -1.0, 1.0)

    out_t, out_i, out_j, out_e = [], [], [], []
    for ws in np.unique(window[live]):
        tris = np.nonzero(window == ws)[0]
        oy, ox = np.divmod(np.arange(ws * ws), ws)
        step = max(1, chunk_elements // (ws * ws))
        for start in range(0, len(tris), step):
            t = tris[start : start + step]
            ii = i0[t, None] + ox[None, :]
            jj = j0[t, None] + oy[None, :]
            ok = (ii <= i1[t, None]) & (jj <= j1[t, None])
            px = ii + 0.5
            py = jj + 0.5
            e = dx[t, :, None] * (py[:, None, :] - ay[t, :, None]) - dy[t, :, None] * (px[:, None, :] - ax[t, :, None])
            e *= sign[t, :, None]
            cover = (e > 0) | ((e == 0) & top_left[t, :, None])
            ok &= cover.all(axis=1)
            tt, kk = np.nonzero(ok)
            out_t.append(t[tt])
            out_i.append(ii[tt, kk])
            out_j.append(jj[tt, kk])
            out_e.append(e[tt, :, kk])
    if not out_t:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0, int), np.zeros((0, 3))
    return np.concatenate(out_t), np.concatenate(out_i), np.concatenate(out_j), np.concatenate(out_e)


def rasterize(
    items,
    K: Intrinsics,
    camera_from_world: RigidTransform,
    settings: RenderSettings,
    plane: PlanePrimitive | None = None,
) -> RenderOutput:
    """Render meshes (and optionally an infinite plane) seen from a camera."""
    if (settings.width, settings.height) != (K.width, K.height):
        raise ConfigurationError("render settings and intrinsics disagree on image size")
    W, H = settings.width, settings.height
    n_pix = W * H
    soup, textures = _assemble(list(items), camera_from_world)
    soup = _clip_near(soup, settings.near)

    z = soup.cam[:, :, 2]
    screen = np.empty(soup.cam.shape[:2] + (2,))
    if len(z):
        screen[:, :, 0] = K.fx * soup.cam[:, :, 0] / z + K.cx
        screen[:, :, 1] = K.fy * soup.cam[:, :, 1] / z + K.cy
        area = (screen[:, 1, 0] - screen[:, 0, 0]) * (screen[:, 2, 1] - screen[:, 0, 1]) - (
            screen[:, 1, 1] - screen[:, 0, 1]
        ) * (screen[:, 2, 0] - screen[:, 0, 0])
        flip = area < 0
        # reorder corners to positive orientation (swap 1 and 2)
        for arr in (screen, soup.cam, soup.color, soup.uv):
            arr[flip, 1], arr[flip, 2] = arr[flip, 2].copy(), arr[flip, 1].copy()
        area = np.abs(area)
        z = soup.cam[:, :, 2]
        nondeg = area > 0
    else:
        area = np.zeros(0)
        nondeg = np.zeros(0, bool)

    tri_idx = np.nonzero(nondeg)[0]
    t, ci, cj, e = _fragments(screen[tri_idx], W, H)
    t = tri_idx[t]
    w = e / area[t, None]
    inv_z = (w / z[t]).sum(axis=1)
    frag_depth = 1.0 / inv_z
    frag_pix = cj * W + ci
    in_range = (frag_depth >= settings.near) & (frag_depth <= settings.far)
    t, w, inv_z, frag_depth, frag_pix = t[in_range], w[in_range], inv_z[in_range], frag_depth[in_range], frag_pix[in_range]
    frag_rank = t + 1  # plane fragments use rank 0

    if plane is not None:
        p_depth, p_pix = _plane_fragments(plane.plane, K, camera_from_world, settings)
        frag_depth = np.concatenate([p_depth, frag_depth])
        frag_pix = np.concatenate([p_pix, frag_pix])
        frag_rank = np.concatenate([np.zeros(len(p_pix), np.int64), frag_rank])
        t = np.concatenate([np.full(len(p_pix), -1), t])
        w = np.concatenate([np.zeros((len(p_pix), 3)), w])
        inv_z = np.concatenate([1.0 / np.maximum(p_depth, 1e-300), inv_z])

    order = np.lexsort((frag_rank, frag_depth, frag_pix))
    first = np.ones(len(order), bool)
    first[1:] = frag_pix[order[1:]] != frag_pix[order[:-1]]
    win = order[first]

    depth = np.zeros(n_pix)
    ids = np.full(n_pix, NO_HIT, dtype=np.int64)
    faces = np.full(n_pix, -1, dtype=np.int64)
    color = np.tile(np.asarray(settings.background_color, dtype=np.float64) / 255.0, (n_pix, 1))
    if settings.background_policy == "far-plane":
        depth[:] = settings.far

    wp = frag_pix[win]
    wt = t[win]
    depth[wp] = frag_depth[win]

    is_plane = wt < 0
    if plane is not None and is_plane.any():
        ids[wp[is_plane]] = plane.id
        color[wp[is_plane]] = plane.color

    m = ~is_plane
    mt, mw, mz = wt[m], w[win][m], inv_z[win][m]
    ids[wp[m]] = soup.ids[mt]
    faces[wp[m]] = soup.face[mt]
    # perspective-correct weights
    pw = mw / z[mt] / mz[:, None]
    if settings.shading == "flat":
        rgb = soup.color[mt].mean(axis=1)
    else:
        rgb = np.einsum("nk,nkc->nc", pw, soup.color[mt])
    if settings.shading == "textured":
        tex_id = soup.texture[mt]
        for k, tex in enumerate(textures):
            sel = tex_id == k
            if not sel.any():
                continue
            uv = np.einsum("nk,nkc->nc", pw[sel], soup.uv[mt[sel]])
            th, tw = tex.shape[:2]
            col = np.floor(uv[:, 0] * tw).astype(np.int64) % tw
            row = np.floor((1.0 - uv[:, 1]) * th).astype(np.int64) % th
            rgb[sel] = tex[row, col] / 255.0
    color[wp[m]] = rgb

    return RenderOutput(to_uint8(color).reshape(H, W, 3), depth.reshape(H, W), ids.reshape(H, W), faces.reshape(H, W))


def _plane_fragments(plane: Plane, K: Intrinsics, camera_from_world: RigidTransform, settings: RenderSettings):
    pc = plane.transformed(camera_from_world)
    rays = K.pixel_rays().reshape(-1, 3)
    denom = rays @ pc.normal
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = pc.offset / denom
    ok = (denom != 0) & np.isfinite(lam) & (lam >= settings.near) & (lam <= settings.far)
    pix = np.nonzero(ok)[0]
    # ray z component is 1, so the ray parameter is the camera-space depth
    return lam[ok], pix


# ---------------------------------------------------------------------------
# Scene-level entry points


def scene_items(scene, include_objects: bool = True, include_background: bool = True):
    """Render items for a SceneConfig; object ids are mask labels, background id 0."""
    items = []
    plane = None
    if include_background and scene.background is not None:
        bg = scene.background
        if bg.plane_primitive:
            plane = PlanePrimitive(scene.supported_plane, 0, tuple(bg.color))
        else:
            items.append(RenderItem(scene.background_mesh(), SimilarityTransform(), 0))
    if include_objects:
        for obj in scene.objects:
            items.append(RenderItem(scene.object_mesh(obj), obj.pose, obj.label, None))
    return items, plane


def render(scene, settings: RenderSettings | None = None, include_objects: bool = True, include_background: bool = True, extra_items=()) -> RenderOutput:
    """Render a SceneConfig from its recovered camera."""
    K = scene.intrinsics
    settings = settings or RenderSettings.for_intrinsics(K)
    items, plane = scene_items(scene, include_objects, include_background)
    items = items + list(extra_items)
    return rasterize(items, K, scene.world_from_camera.inverse(), settings, plane)
