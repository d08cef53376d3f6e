"""Deformable signed-distance renderer built around a hierarchical distance
query: KNN world distance far from the body, warped canonical distance near
it, sphere tracing, distance-field soft shadows, GGX shading and a
least-squares light-probe fit."""

from .errors import (ConfigError, DegenerateWarpError, EmptyNeighborhoodError, FormatError, HdqError,
                     InvalidNormalError, InvariantError, NotOnSurfaceError, SolverError)
from .hdq import HdqConfig, HdqState, distance, query, surface_normal
from .puppet import DisplacementField, Material, Primitive, PuppetScene
from .render import Camera, RenderConfig, ablate, bench, render_frame
from .rig import Pose, Skeleton
from .shade import LightProbe, brdf_eval, shade, texel_direction
from .trace import Rays, TraceConfig, hard_visibility, intersect, soft_visibility

__version__ = "0.1.0"
