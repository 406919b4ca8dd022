"""Physical properties: category lookup, optional remote estimator, mass from volume.

Remote protocol
---------------
One HTTP POST to the configured endpoint with a JSON body::

    {"category": "mug", "context": "white ceramic mug on a desk"}

and a JSON reply::

    {"density": 700.0,            # kg/m^3, or "mass": kg
     "static_friction": 0.5,
     "dynamic_friction": 0.4,     # optional, defaults to 0.8 * static
     "restitution": 0.2}          # optional

Any transport failure, timeout, malformed body or out-of-range value is
logged and the lookup falls through to the builtin table, then to defaults.
"""

from __future__ import annotations

import json
import logging
import math
import os
import urllib.error
import urllib.request
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import ConfigurationError, DegenerateGeometryError
from .mesh import TriangleMesh

log = logging.getLogger(__name__)

ENDPOINT_ENV = "IMAGESCENE_PROPS_ENDPOINT"
DEFAULT_TIMEOUT = 10.0
DEFAULT_DENSITY = 500.0
DEFAULT_FRICTION = 0.5
DEFAULT_RESTITUTION = 0.2
DYNAMIC_FRICTION_RATIO = 0.8
MAX_FRICTION = 2.0


@dataclass(frozen=True)
class PhysicalProperties:
    density: float | None = None  # kg/m^3
    mass: float | None = None  # kg, takes precedence over density when set
    static_friction: float = DEFAULT_FRICTION
    dynamic_friction: float | None = None
    restitution: float = DEFAULT_RESTITUTION

    def __post_init__(self):
        if not ((self.density or 0) > 0 or (self.mass or 0) > 0):
            raise ConfigurationError("need a positive density or mass")
        sf = float(np.clip(self.static_friction, 0.0, MAX_FRICTION))
        df = sf * DYNAMIC_FRICTION_RATIO if self.dynamic_friction is None else self.dynamic_friction
        object.__setattr__(self, "static_friction", sf)
        object.__setattr__(self, "dynamic_friction", float(np.clip(df, 0.0, MAX_FRICTION)))
        object.__setattr__(self, "restitution", float(np.clip(self.restitution, 0.0, 1.0)))

    def to_dict(self) -> dict:
        d = {
            "static_friction": self.static_friction,
            "dynamic_friction": self.dynamic_friction,
            "restitution": self.restitution,
        }
        if self.density is not None:
            d["density"] = float(self.density)
        if self.mass is not None:
            d["mass"] = float(self.mass)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> PhysicalProperties:
        return cls(
            density=d.get("density"),
            mass=d.get("mass"),
            static_friction=d.get("static_friction", DEFAULT_FRICTION),
            dynamic_friction=d.get("dynamic_friction"),
            restitution=d.get("restitution", DEFAULT_RESTITUTION),
        )


@dataclass(frozen=True)
class PropertyRequest:
    category: str
    context: str | None = None


@dataclass(frozen=True)
class PropertyResponse:
    properties: PhysicalProperties
    provenance: str  # "remote" | "table" | "default"


# ---------------------------------------------------------------------------
# Table


@lru_cache(maxsize=None)
def _builtin_table() -> dict:
    text = resources.files("imagescene").joinpath("data/materials.json").read_text(encoding="utf-8")
    return {k: v for k, v in json.loads(text).items() if not k.startswith("_")}


def load_table(path=None) -> dict:
    """Category -> raw entry dict. ``path`` overrides the builtin table."""
    if path is None:
        return _builtin_table()
    with open(path, encoding="utf-8") as fh:
        return {k: v for k, v in json.load(fh).items() if not k.startswith("_")}


def _normalize(category: str) -> str:
    return " ".join(category.lower().replace("_", " ").replace("-", " ").split())


def lookup(category: str, table: dict | None = None) -> PhysicalProperties | None:
    table = _builtin_table() if table is None else table
    key = _normalize(category)
    entry = table.get(key)
    if entry is None and key.endswith("s"):
        entry = table.get(key[:-1])
    if entry is None:
        return None
    return PhysicalProperties(
        density=entry.get("density"),
        mass=entry.get("mass"),
        static_friction=entry["static_friction"],
        dynamic_friction=entry.get("dynamic_friction"),
        restitution=entry.get("restitution", DEFAULT_RESTITUTION),
    )


# ---------------------------------------------------------------------------
# Remote estimator


class RemoteEstimator:
    """Blocking JSON-over-HTTP client for an external property estimator."""

    def __init__(self, endpoint: str, timeout: float = DEFAULT_TIMEOUT):
        self.endpoint = endpoint
        self.timeout = timeout

    @classmethod
    def from_env(cls) -> RemoteEstimator | None:
        endpoint = os.environ.get(ENDPOINT_ENV)
        return cls(endpoint) if endpoint else None

    def __call__(self, request: PropertyRequest) -> dict:
        body = json.dumps({"category": request.category, "context": request.context}).encode("utf-8")
        req = urllib.request.Request(
            self.endpoint, data=body, headers={"Content-Type": "application/json"}, method="POST"
        )
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return json.loads(resp.read().decode("utf-8"))


def validate_remote(payload) -> PhysicalProperties:
    """Strict schema check; raises ValueError on anything out of range."""
    if not isinstance(payload, dict):
        raise ValueError("response is not an object")

    def number(key, lo, hi, required=False):
        if key not in payload or payload[key] is None:
            if required:
                raise ValueError(f"missing {key}")
            return None
        v = payload[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ValueError(f"{key} is not a finite number")
        if not lo <= v <= hi:
            raise ValueError(f"{key}={v} outside [{lo}, {hi}]")
        return float(v)

    density = number("density", 1e-6, 1e5)
    mass = number("mass", 1e-9, 1e5)
    if density is None and mass is None:
        raise ValueError("need density or mass")
    return PhysicalProperties(
        density=density,
        mass=mass,
        static_friction=number("static_friction", 0.0, MAX_FRICTION, required=True),
        dynamic_friction=number("dynamic_friction", 0.0, MAX_FRICTION),
        restitution=number("restitution", 0.0, 1.0) if "restitution" in payload else DEFAULT_RESTITUTION,
    )


def default_properties() -> PhysicalProperties:
    return PhysicalProperties(density=DEFAULT_DENSITY, static_friction=DEFAULT_FRICTION)


def estimate_properties(
    category: str,
    client=None,
    context: str | None = None,
    table: dict | None = None,
) -> PropertyResponse:
    """Remote estimate if available and valid, else table entry, else defaults. Never raises."""
    if client is not None:
        try:
            props = validate_remote(client(PropertyRequest(category, context)))
            return PropertyResponse(props, "remote")
        except (OSError, urllib.error.URLError, ValueError, TimeoutError) as exc:
            log.warning("remote property estimate for %r rejected: %s", category, exc)
    props = lookup(category, table)
    if props is not None:
        return PropertyResponse(props, "table")
    return PropertyResponse(default_properties(), "default")


# ---------------------------------------------------------------------------
# Mass


def is_watertight(mesh: TriangleMesh) -> bool:
    """Closed and consistently oriented: each directed edge appears once and its reverse once."""
    t = mesh.triangles
    if len(t) == 0:
        return False
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    n = len(mesh.vertices)
    key = directed[:, 0] * n + directed[:, 1]
    rev = directed[:, 1] * n + directed[:, 0]
    uniq, counts = np.unique(key, return_counts=True)
    if np.any(counts != 1):
        return False
    return bool(np.isin(rev, uniq).all())


def signed_volume(mesh: TriangleMesh) -> float:
    """Divergence-theorem sum of signed tetrahedra against the origin."""
    a, b, c = (mesh.vertices[mesh.triangles[:, k]] for k in range(3))
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def mesh_volume(mesh: TriangleMesh) -> tuple[float, str]:
    """(volume, method) where method is "divergence" or "convex-hull"."""
    if is_watertight(mesh):
        return signed_volume(mesh), "divergence"
    used = mesh.vertices[np.unique(mesh.triangles)] if len(mesh.triangles) else mesh.vertices
    try:
        return float(ConvexHull(used).volume), "convex-hull"
    except (QhullError, ValueError) as exc:
        raise DegenerateGeometryError(f"cannot compute a volume: {exc}") from exc


def mass_from_density(mesh: TriangleMesh, scale: float, density: float) -> float:
    if not density > 0:
        raise ConfigurationError("density must be positive")
    volume, _ = mesh_volume(mesh)
    if not volume > 0:
        raise DegenerateGeometryError(f"computed volume {volume} is not positive")
    return float(density * scale**3 * volume)
