"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures
to distinct process exit statuses without a lookup table.
"""

from __future__ import annotations


class SceneError(Exception):
    exit_code = 1


class ConfigurationError(SceneError):
    """Inconsistent dimensions, unknown presets, invalid parameter values."""

    exit_code = 2


class InputError(SceneError):
    """A required input file is missing or unreadable."""

    exit_code = 3


class PreconditionError(SceneError):
    exit_code = 2


class DegenerateInputError(SceneError):
    """Too few points, collinear samples, empty meshes, zero extent."""

    exit_code = 4


class DegenerateGeometryError(DegenerateInputError):
    exit_code = 4


class BehindCameraError(SceneError):
    exit_code = 4


class LowConfidenceError(SceneError):
    """RANSAC found a plane, but with too few inliers to trust it."""

    exit_code = 8

    def __init__(self, message: str, plane=None, inlier_count: int = 0):
        super().__init__(message)
        self.plane = plane
        self.inlier_count = inlier_count


class RegistrationFailedError(SceneError):
    exit_code = 5

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NoPlacementError(SceneError):
    exit_code = 6

    def __init__(self, message: str, violated: str = "", margin: float = float("nan")):
        super().__init__(message)
        self.violated = violated
        self.margin = margin


class AssetError(SceneError):
    """A mesh referenced by the scene cannot be loaded."""

    exit_code = 7

    def __init__(self, message: str, object_id: str | None = None):
        super().__init__(message)
        self.object_id = object_id


class StageError(SceneError):
    """Wraps an error raised inside one pipeline stage."""

    def __init__(self, stage: str, cause: SceneError):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = cause.exit_code
