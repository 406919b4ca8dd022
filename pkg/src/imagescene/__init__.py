"""Metric scene recovery from a single RGB-D view, robot base placement, and depth-gated compositing.

Typical use::

    from imagescene import PipelineConfig, recover
    scene = recover(PipelineConfig.load("config.json"))
"""

from .background import BackgroundBuildConfig, background_depth, complete_holes, mesh_from_depth_grid
from .compositor import BlendConfig, blend_frame, blend_mask, blend_sequence
from .errors import (
    AssetError,
    BehindCameraError,
    ConfigurationError,
    DegenerateGeometryError,
    DegenerateInputError,
    InputError,
    LowConfidenceError,
    NoPlacementError,
    PreconditionError,
    RegistrationFailedError,
    SceneError,
    StageError,
)
from .geometry import Aabb, Intrinsics, Plane, RigidTransform, SimilarityTransform
from .gravity import RansacConfig, align_scene, ransac_plane, rodrigues_to_z
from .mesh import TriangleMesh, load_mesh, save_mesh
from .pipeline import PipelineConfig, blend, place_robot, recover, roundtrip
from .placement import PlacementCandidate, RobotProfile, load_profile, sample_placements, verify_placement
from .properties import PhysicalProperties, estimate_properties, mass_from_density
from .registration import IcpConfig, RegistrationResult, estimate_scale, icp_register, refine_visible, sample_surface
from .renderer import RenderSettings, rasterize, render
from .scene import SceneConfig, SceneObject
from .synth import synth_scene
from .unprojection import PointCloud, partition, project, unproject

__version__ = "0.1.0"
