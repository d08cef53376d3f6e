"""Hierarchical distance query: coarse KNN distance, inverse warp, fine
canonical distance and their smooth blend, plus world-space normals."""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NotOnSurfaceError
from .knn import build_index, coarse_distance, gs_knn
from .puppet import (PuppetScene, TemplateCloud, bake_template, canonical_gradient, canonical_sdf,
                     displacement, pose_template)
from .rig import (DEGENERATE_CONDITION, Pose, blend_weights, inverse_blend, nearest_rotation,
                  pose_transforms, rotate_normal_to_world)

VARIANTS = ("full", "coarse-only", "fine-only")
SURFACE_TOLERANCE = 5e-3
JITTER = 1e-5


@dataclass(frozen=True)
class HdqConfig:
    cutoff: float = 0.1
    blend_scale: float = 0.1
    vis_cutoff: float = 0.025
    k: int = 10
    blend_radius: float = 0.075
    geodesic_threshold: float = 0.1

    def __post_init__(self):
        for name in ("cutoff", "blend_scale", "vis_cutoff", "blend_radius", "geodesic_threshold"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"HdqConfig.{name} must be positive")
        if self.k < 1:
            raise ConfigError("HdqConfig.k must be >= 1")
        if self.vis_cutoff > self.cutoff:
            raise ConfigError("visibility cutoff must not exceed the surface cutoff")


class HdqState:
    """Everything a query needs for one pose: transforms, posed template and
    its index.  Read-only after construction apart from the S-evaluation
    tally."""

    def __init__(self, scene: PuppetScene, pose: Pose = None, template: TemplateCloud = None,
                 samples_per_primitive=2000):
        self.scene = scene
        self.pose = pose if pose is not None else Pose.identity(scene.skeleton.n_bones)
        self.transforms = pose_transforms(scene.skeleton, self.pose)
        self.template = template if template is not None else bake_template(scene, samples_per_primitive)
        self.posed = pose_template(self.template, self.transforms)
        self.index = build_index(self.posed)
        self._lock = threading.Lock()
        self._fine = 0

    def with_pose(self, pose: Pose) -> "HdqState":
        return HdqState(self.scene, pose, self.template)

    @property
    def fine_evaluations(self):
        return self._fine

    def reset_counter(self):
        with self._lock:
            self._fine = 0

    def _tally(self, n):
        with self._lock:
            self._fine += int(n)

    def bounds(self):
        return self.posed.bounds()


@dataclass(frozen=True, eq=False)
class DistanceSample:
    """Batched query result.  ``d_fine``/``x_can`` are NaN where the fine
    query was skipped; ``rotation`` is only filled on request."""

    d_coarse: np.ndarray
    d_fine: np.ndarray
    d: np.ndarray
    x_can: np.ndarray
    rotation: np.ndarray
    fine: np.ndarray
    degenerate: np.ndarray

    def describe(self, i=0):
        def get(a):
            return np.asarray(a).reshape(-1, *np.shape(a)[np.ndim(self.d):])[i]
        lines = [
            f"d_coarse: {get(self.d_coarse):+.6f}",
            f"d_fine: {get(self.d_fine):+.6f}",
            f"d_blended: {get(self.d):+.6f}",
            f"fine_evaluated: {bool(get(self.fine))}",
            f"degenerate_warp: {bool(get(self.degenerate))}",
            f"x_canonical: {np.array2string(get(self.x_can), precision=6)}",
        ]
        if self.rotation is not None:
            lines.append(f"R_world: {np.array2string(get(self.rotation), precision=5).replace(chr(10), '')}")
        return "\n".join(lines)


def blend(d_fine, d_coarse, scale):
    """Smooth blend of fine and coarse distances, evaluated verbatim (no clamping)."""
    t = d_fine / scale
    return d_fine * (1 - t) + d_coarse * t


def query(x, state: HdqState, cfg: HdqConfig = HdqConfig(), cutoff=None, variant="full",
          with_rotation=False) -> DistanceSample:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown HDQ variant {variant!r}")
    x = np.asarray(x, dtype=float)
    shape = x.shape[:-1]
    xf = x.reshape(-1, 3)
    n = len(xf)
    cutoff = cfg.cutoff if cutoff is None else cutoff

    knn = gs_knn(xf, state.index, state.posed, cfg.k, cfg.geodesic_threshold)
    d_coarse = coarse_distance(knn)
    if variant == "full":
        fine = d_coarse <= cutoff
    elif variant == "fine-only":
        fine = np.ones(n, dtype=bool)
    else:
        fine = np.zeros(n, dtype=bool)

    d = d_coarse.copy()
    d_fine = np.full(n, np.nan)
    x_can = np.full((n, 3), np.nan)
    rot = np.full((n, 3, 3), np.nan) if with_rotation else None
    degenerate = np.zeros(n, dtype=bool)

    sel = np.flatnonzero(fine)
    if len(sel):
        w = blend_weights(knn.distances[sel], knn.weights[sel], cfg.blend_radius)
        xc, a_inv, cond = inverse_blend(xf[sel], w, state.transforms)
        bad = ~(cond <= DEGENERATE_CONDITION)
        good = sel[~bad]
        degenerate[sel[bad]] = True
        fine[sel[bad]] = False
        xc = xc[~bad]
        xc = xc + displacement(state.scene.displacement, state.pose, xc)
        df = canonical_sdf(state.scene, xc)
        state._tally(len(sel))
        d_fine[good] = df
        x_can[good] = xc
        if variant == "full":
            d[good] = blend(df, d_coarse[good], cfg.blend_scale)
        else:
            d[good] = df
        if with_rotation and len(good):
            rot[good] = nearest_rotation(a_inv[~bad])

    return DistanceSample(
        d_coarse.reshape(shape), d_fine.reshape(shape), d.reshape(shape),
        x_can.reshape(shape + (3,)),
        None if rot is None else rot.reshape(shape + (3, 3)),
        fine.reshape(shape), degenerate.reshape(shape))


def distance(x, state, cfg=HdqConfig(), cutoff=None, variant="full"):
    """Blended world distance only."""
    return query(x, state, cfg, cutoff, variant).d


def surface_normal(x_s, state: HdqState, cfg: HdqConfig = HdqConfig(), strict=True):
    """World normals at surface points.

    Returns ``(normals, ok)``.  Points that are not on the surface (fine query
    skipped or ``|d| >= 5e-3``) are reported through ``ok``; with ``strict``
    they raise ``NotOnSurfaceError`` instead.  Gradient singularities are
    retried once after a tiny deterministic jitter.
    """
    x = np.asarray(x_s, dtype=float)
    shape = x.shape[:-1]
    xf = x.reshape(-1, 3)
    s = query(xf, state, cfg, with_rotation=True)
    ok = s.fine & (np.abs(s.d) < SURFACE_TOLERANCE)
    if strict and not np.all(ok):
        bad = int((~ok).sum())
        raise NotOnSurfaceError(f"{bad} point(s) are not on the surface")
    normals = np.full(xf.shape, np.nan)
    idx = np.flatnonzero(ok)
    if len(idx):
        g, singular = canonical_gradient(state.scene, s.x_can[idx])
        rot = s.rotation[idx]
        if np.any(singular):
            j = idx[singular]
            s2 = query(xf[j] + JITTER / np.sqrt(3), state, cfg, with_rotation=True)
            retry_ok = s2.fine
            g2, sing2 = canonical_gradient(state.scene, np.where(retry_ok[:, None], s2.x_can, 0.0))
            g[singular] = np.where(retry_ok[:, None], g2, g[singular])
            rot[singular] = np.where(retry_ok[:, None, None], s2.rotation, rot[singular])
        normals[idx] = rotate_normal_to_world(g, rot)
    return normals.reshape(shape + (3,)), ok.reshape(shape)


# ---------------------------------------------------------------------------
# brute-force reference
# ---------------------------------------------------------------------------

def dense_surface_samples(state: HdqState, samples_per_primitive=60000):
    """Forward-skinned dense canonical surface samples ``(positions, normals)``."""
    dense = bake_template(state.scene, samples_per_primitive)
    posed = pose_template(dense, state.transforms)
    return posed.positions, posed.normals


def brute_force_distance(x, samples, normals, chunk=256):
    """Signed distance to the nearest sample by exhaustive scan.

    The sign comes from the nearest sample's normal.  Independent of the
    kd-tree so it can check it.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    samples = np.asarray(samples, dtype=float)
    s2 = np.sum(samples * samples, axis=1)
    nearest = np.empty(len(x), dtype=int)
    for start in range(0, len(x), chunk):
        xs = x[start:start + chunk]
        d2 = s2[None, :] - 2 * xs @ samples.T
        nearest[start:start + chunk] = np.argmin(d2, axis=1)
    diff = x - samples[nearest]
    dist = np.linalg.norm(diff, axis=1)
    side = np.einsum("ni,ni->n", diff, normals[nearest])
    return np.where(side < 0, -dist, dist)
