"""Core geometric types and coordinate conventions.

Conventions
-----------
- Camera frame: +X right, +Y down, +Z forward. Depth is camera-space Z.
- Pixel (column i, row j) samples the continuous image point
  ``(u, v) = (i + 0.5, j + 0.5)``.
- World frame after gravity alignment: Z up, supported plane at z = 0.
- Quaternions are stored (w, x, y, z) with w >= 0.
- Lengths in meters, angles in radians.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Quaternion helpers


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    # w >= 0 picks one of the two antipodal representatives
    sign = np.where(q[..., :1] < 0, -1.0, 1.0)
    return q * sign


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion; accepts (..., 4)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def matrix_to_quat(m) -> np.ndarray:
    """Shepperd's method: branch on the largest of (trace, diagonal) for stability."""
    m = np.asarray(m, dtype=np.float64)
    batch = m.shape[:-2]
    m = m.reshape(-1, 3, 3)
    tr = m[:, 0, 0] + m[:, 1, 1] + m[:, 2, 2]
    diag = np.stack([tr, m[:, 0, 0], m[:, 1, 1], m[:, 2, 2]], axis=1)
    pick = np.argmax(diag, axis=1)
    q = np.empty((m.shape[0], 4))

    i = pick == 0
    s = np.sqrt(1.0 + tr[i]) * 2
    q[i] = np.stack(
        [0.25 * s, (m[i, 2, 1] - m[i, 1, 2]) / s, (m[i, 0, 2] - m[i, 2, 0]) / s, (m[i, 1, 0] - m[i, 0, 1]) / s],
        axis=1,
    )
    i = pick == 1
    s = np.sqrt(1.0 + m[i, 0, 0] - m[i, 1, 1] - m[i, 2, 2]) * 2
    q[i] = np.stack(
        [(m[i, 2, 1] - m[i, 1, 2]) / s, 0.25 * s, (m[i, 0, 1] + m[i, 1, 0]) / s, (m[i, 0, 2] + m[i, 2, 0]) / s],
        axis=1,
    )
    i = pick == 2
    s = np.sqrt(1.0 + m[i, 1, 1] - m[i, 0, 0] - m[i, 2, 2]) * 2
    q[i] = np.stack(
        [(m[i, 0, 2] - m[i, 2, 0]) / s, (m[i, 0, 1] + m[i, 1, 0]) / s, 0.25 * s, (m[i, 1, 2] + m[i, 2, 1]) / s],
        axis=1,
    )
    i = pick == 3
    s = np.sqrt(1.0 + m[i, 2, 2] - m[i, 0, 0] - m[i, 1, 1]) * 2
    q[i] = np.stack(
        [(m[i, 1, 0] - m[i, 0, 1]) / s, (m[i, 0, 2] + m[i, 2, 0]) / s, (m[i, 1, 2] + m[i, 2, 1]) / s, 0.25 * s],
        axis=1,
    )
    return quat_normalize(q).reshape(batch + (4,))


def axis_angle_to_quat(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return quat_normalize(np.concatenate([[np.cos(half)], np.sin(half) * axis]))


def rotation_angle(ra: np.ndarray, rb: np.ndarray) -> float:
    """Geodesic angle between two rotation matrices, radians."""
    c = (np.trace(ra @ rb.T) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def skew(k) -> np.ndarray:
    k = np.asarray(k, dtype=np.float64)
    return np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])


# ---------------------------------------------------------------------------
# Transforms


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (unit quaternion, wxyz) followed by translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64)
        if q.shape != (4,) or not np.all(np.isfinite(q)):
            raise ConfigurationError(f"rotation must be a finite 4-vector, got {q!r}")
        n = np.linalg.norm(q)
        if n == 0:
            raise ConfigurationError("zero quaternion")
        t = np.asarray(self.translation, dtype=np.float64)
        if t.shape != (3,):
            raise ConfigurationError(f"translation must be a 3-vector, got shape {t.shape}")
        object.__setattr__(self, "rotation", _frozen(quat_normalize(q)))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_matrix(cls, rotation: np.ndarray, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        return cls(matrix_to_quat(rotation), translation)

    @classmethod
    def from_homogeneous(cls, m: np.ndarray) -> RigidTransform:
        m = np.asarray(m, dtype=np.float64)
        return cls.from_matrix(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def as_homogeneous(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.matrix
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> RigidTransform:
        r = self.matrix
        q = self.rotation * np.array([1.0, -1.0, -1.0, -1.0])
        return RigidTransform(q, -r.T @ self.translation)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.matrix.T + self.translation

    def apply_vector(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.matrix.T

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)

    def to_dict(self) -> dict:
        return {"rotation_wxyz": [float(v) for v in self.rotation], "translation": [float(v) for v in self.translation]}

    @classmethod
    def from_dict(cls, d: dict) -> RigidTransform:
        return cls(d["rotation_wxyz"], d["translation"])


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform equivalent to applying ``b`` first, then ``a``."""
    q = quat_multiply(a.rotation, b.rotation)
    return RigidTransform(q, a.matrix @ b.translation + a.translation)


@dataclass(frozen=True)
class SimilarityTransform:
    """x -> R (s x) + t."""

    rigid: RigidTransform = field(default_factory=RigidTransform)
    scale: float = 1.0

    def __post_init__(self):
        s = float(self.scale)
        if not (s > 0 and np.isfinite(s)):
            raise ConfigurationError(f"scale must be positive, got {s}")
        object.__setattr__(self, "scale", s)

    @classmethod
    def from_parts(cls, rotation: np.ndarray, translation, scale: float = 1.0) -> SimilarityTransform:
        return cls(RigidTransform.from_matrix(rotation, translation), scale)

    @property
    def rotation(self) -> np.ndarray:
        return self.rigid.rotation

    @property
    def translation(self) -> np.ndarray:
        return self.rigid.translation

    @property
    def matrix(self) -> np.ndarray:
        return self.rigid.matrix

    def as_homogeneous(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rigid.matrix * self.scale
        m[:3, 3] = self.rigid.translation
        return m

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return (self.scale * p) @ self.rigid.matrix.T + self.rigid.translation

    def inverse(self) -> SimilarityTransform:
        r = self.rigid.matrix
        q = self.rigid.rotation * np.array([1.0, -1.0, -1.0, -1.0])
        return SimilarityTransform(RigidTransform(q, -(r.T @ self.rigid.translation) / self.scale), 1.0 / self.scale)

    def __matmul__(self, other: SimilarityTransform) -> SimilarityTransform:
        # (a ∘ b)(x) = Ra sa (Rb sb x + tb) + ta
        q = quat_multiply(self.rigid.rotation, other.rigid.rotation)
        t = self.scale * (self.rigid.matrix @ other.rigid.translation) + self.rigid.translation
        return SimilarityTransform(RigidTransform(q, t), self.scale * other.scale)

    def to_dict(self) -> dict:
        return {**self.rigid.to_dict(), "scale": self.scale}

    @classmethod
    def from_dict(cls, d: dict) -> SimilarityTransform:
        return cls(RigidTransform.from_dict(d), d.get("scale", 1.0))


def transform_point(T: SimilarityTransform | RigidTransform, x) -> np.ndarray:
    return T.apply(x)


# ---------------------------------------------------------------------------
# Camera, plane, box


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigurationError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigurationError("principal point outside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def pixel_rays(self) -> np.ndarray:
        """(H, W, 3) camera-frame directions K^-1 [u, v, 1] at every pixel center."""
        u = np.arange(self.width) + 0.5
        v = np.arange(self.height) + 0.5
        uu, vv = np.meshgrid(u, v)
        return np.stack([(uu - self.cx) / self.fx, (vv - self.cy) / self.fy, np.ones_like(uu)], axis=-1)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("fx", "fy", "cx", "cy", "width", "height")}

    @classmethod
    def from_dict(cls, d: dict) -> Intrinsics:
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class Plane:
    """{x : normal . x = offset}."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        norm = np.linalg.norm(n)
        if norm == 0 or not np.isfinite(norm):
            raise ConfigurationError("plane normal must be nonzero")
        object.__setattr__(self, "normal", _frozen(n / norm))
        object.__setattr__(self, "offset", float(self.offset) / norm)

    def signed_distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.normal - self.offset

    def flipped(self) -> Plane:
        return Plane(-self.normal, -self.offset)

    def transformed(self, T: RigidTransform) -> Plane:
        n = T.apply_vector(self.normal)
        return Plane(n, self.offset + float(n @ T.translation))

    def to_dict(self) -> dict:
        return {"normal": [float(v) for v in self.normal], "offset": self.offset}

    @classmethod
    def from_dict(cls, d: dict) -> Plane:
        return cls(d["normal"], d["offset"])


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64)
        hi = np.asarray(self.max, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(lo > hi):
            raise ConfigurationError(f"invalid box min={lo} max={hi}")
        object.__setattr__(self, "min", _frozen(lo))
        object.__setattr__(self, "max", _frozen(hi))

    @classmethod
    def from_points(cls, points) -> Aabb:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(p) == 0:
            raise ConfigurationError("cannot bound an empty point set")
        return cls(p.min(axis=0), p.max(axis=0))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    def corners(self) -> np.ndarray:
        idx = np.array([[(i >> k) & 1 for k in range(3)] for i in range(8)])
        return np.where(idx == 0, self.min, self.max)

    def inflated(self, margin: float) -> Aabb:
        return Aabb(self.min - margin, self.max + margin)

    def union(self, other: Aabb) -> Aabb:
        return Aabb(np.minimum(self.min, other.min), np.maximum(self.max, other.max))

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return np.all((p >= self.min - tol) & (p <= self.max + tol), axis=-1)

    def closest_point(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=np.float64), self.min, self.max)

    def transformed(self, T) -> Aabb:
        """Bound of the transformed box (tight for the 8 corners)."""
        return Aabb.from_points(T.apply(self.corners()))

    def to_dict(self) -> dict:
        return {"min": [float(v) for v in self.min], "max": [float(v) for v in self.max]}

    @classmethod
    def from_dict(cls, d: dict) -> Aabb:
        return cls(d["min"], d["max"])
