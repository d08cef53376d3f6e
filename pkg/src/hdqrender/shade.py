"""Equirectangular light probe, GGX microfacet BRDF and the discrete
rendering sum over probe texels."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError
from .hdq import HdqConfig, HdqState, query
from .puppet import Material, material_at

__all__ = [
    "PROBE_H", "PROBE_W", "LightProbe", "Material", "ShadingPoint", "texel_direction", "texel_grid",
    "brdf_eval", "brdf", "sample_material", "sample_material_batch", "material_offsets",
    "transfer_rows", "shade", "UNIFORM_BRDF",
]

PROBE_H, PROBE_W = 16, 32
UNIFORM_BRDF = 0.8


def texel_direction(row, col, H=PROBE_H, W=PROBE_W):
    """Centre direction and solid angle of one probe texel (+z is up).

    The solid angle is that of the texel's latitude band split evenly in
    azimuth, so the texels tile the sphere exactly.
    """
    if not (0 <= row < H and 0 <= col < W):
        raise IndexError(f"texel ({row}, {col}) outside {H}x{W} probe")
    theta = np.pi * (row + 0.5) / H
    phi = 2 * np.pi * (col + 0.5) / W
    omega = np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
    d_omega = (2 * np.pi / W) * (np.cos(np.pi * row / H) - np.cos(np.pi * (row + 1) / H))
    return omega, float(d_omega)


@lru_cache(maxsize=8)
def _grid(H, W):
    rows, cols = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    theta = np.pi * (rows + 0.5) / H
    phi = 2 * np.pi * (cols + 0.5) / W
    dirs = np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], -1)
    band = np.cos(np.pi * rows / H) - np.cos(np.pi * (rows + 1) / H)
    d_omega = (2 * np.pi / W) * band
    dirs = dirs.reshape(-1, 3)
    d_omega = d_omega.reshape(-1)
    dirs.flags.writeable = False
    d_omega.flags.writeable = False
    return dirs, d_omega


def texel_grid(H=PROBE_H, W=PROBE_W):
    """All texel directions ``(H*W, 3)`` and solid angles ``(H*W,)``, row-major."""
    return _grid(int(H), int(W))


class LightProbe:
    """Non-negative linear radiance on an ``H x W x 3`` equirectangular grid."""

    def __init__(self, radiance):
        r = np.array(radiance, dtype=float)
        if r.ndim != 3 or r.shape[2] != 3:
            raise ConfigError(f"probe must be H x W x 3, got {r.shape}")
        if not np.all(np.isfinite(r)):
            raise ConfigError("probe radiance must be finite")
        if np.any(r < 0):
            raise ConfigError("probe radiance must be non-negative")
        r.flags.writeable = False
        self.radiance = r

    @classmethod
    def uniform(cls, value=1.0, H=PROBE_H, W=PROBE_W):
        return cls(np.broadcast_to(np.asarray(value, dtype=float), (H, W, 3)))

    @classmethod
    def dome(cls, value=1.0, H=PROBE_H, W=PROBE_W):
        """Constant upper hemisphere, black below the horizon."""
        r = np.zeros((H, W, 3))
        r[: H // 2] = value
        return cls(r)

    @property
    def shape(self):
        return self.radiance.shape[:2]

    @property
    def directions(self):
        return texel_grid(*self.shape)[0]

    @property
    def solid_angles(self):
        return texel_grid(*self.shape)[1]

    def flat(self):
        """Radiance as ``(H*W, 3)`` in texel order."""
        return self.radiance.reshape(-1, 3)

    def scaled(self, c):
        return LightProbe(self.radiance * c)

    def __add__(self, other):
        return LightProbe(self.radiance + other.radiance)

    def __repr__(self):
        return f"LightProbe({self.shape[0]}x{self.shape[1]}, mean={self.radiance.mean():.4g})"


@dataclass(frozen=True, eq=False)
class ShadingPoint:
    x: np.ndarray
    normal: np.ndarray
    wo: np.ndarray
    material: Material

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        wo = np.asarray(self.wo, dtype=float)
        for v, name in ((n, "normal"), (wo, "view direction")):
            if abs(np.linalg.norm(v) - 1) > 1e-6:
                raise ConfigError(f"{name} must be unit length")
        if n @ wo <= 0:
            raise ConfigError("shading point is back-facing")
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "wo", wo)


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def brdf(albedo, roughness, n, wi, wo, f0=Material.F0, specular=True):
    """Vectorised diffuse + GGX specular BRDF, ``(..., 3)``; 0 below either horizon."""
    albedo = np.asarray(albedo, dtype=float)
    rough = np.asarray(roughness, dtype=float)
    n, wi, wo = (np.asarray(v, dtype=float) for v in (n, wi, wo))
    cos_i = _dot(n, wi)
    cos_o = _dot(n, wo)
    up = (cos_i > 0) & (cos_o > 0)
    f = albedo / np.pi * np.ones_like(cos_i)[..., None]
    if specular:
        a2 = (rough ** 2) ** 2
        h = wi + wo
        h = h / np.linalg.norm(h, axis=-1, keepdims=True)
        cos_h = _dot(n, h)
        D = a2 / (np.pi * (cos_h ** 2 * (a2 - 1) + 1) ** 2)
        ci = np.clip(cos_i, 1e-12, None)
        co = np.clip(cos_o, 1e-12, None)
        g1_i = 2 * ci / (ci + np.sqrt(a2 + (1 - a2) * ci ** 2))
        g1_o = 2 * co / (co + np.sqrt(a2 + (1 - a2) * co ** 2))
        F = f0 + (1 - f0) * (1 - np.clip(_dot(h, wo), 0, 1)) ** 5
        spec = F * D * g1_i * g1_o / (4 * ci * co)
        f = f + spec[..., None]
    return np.where(up[..., None], f, 0.0)


def brdf_eval(mat: Material, n, wi, wo, specular=True, f0=None):
    """BRDF of one material per channel.  ``specular=False`` leaves the
    Lambertian term alone; ``f0`` overrides the fixed Fresnel (test hook)."""
    return brdf(mat.albedo, mat.roughness, n, wi, wo, Material.F0 if f0 is None else f0, specular)


def transfer_rows(normals, wo, albedo, roughness, vis=None, H=PROBE_H, W=PROBE_W, uniform_brdf=None,
                  f0=Material.F0, specular=True):
    """Per-point texel weights ``f * V * cos * dω``, shape ``(P, H*W, 3)``.

    ``vis`` is ``None`` (unoccluded) or a ``(P, H*W)`` array; only entries
    above the shading horizon are read.  ``uniform_brdf`` replaces the
    material BRDF by a constant.
    """
    dirs, d_omega = texel_grid(H, W)
    n = np.asarray(normals, dtype=float)[:, None, :]
    cos = np.einsum("pi,ti->pt", np.asarray(normals, dtype=float), dirs)
    lit = cos > 0
    if uniform_brdf is None:
        wo_ = np.asarray(wo, dtype=float)[:, None, :]
        f = brdf(np.asarray(albedo, dtype=float)[:, None, :], np.asarray(roughness, dtype=float)[:, None],
                 n, dirs[None], wo_, f0, specular)
    else:
        f = np.full(cos.shape + (3,), float(uniform_brdf))
    w = np.where(lit, cos, 0.0) * d_omega
    if vis is not None:
        w = w * np.where(lit, vis, 0.0)
    return f * w[..., None]


def shade(point: ShadingPoint, probe: LightProbe, vis=None, uniform_brdf=None):
    """Outgoing radiance at one point.

    ``vis(omega, solid_angle) -> [0, 1]`` is only called for texels above
    the horizon; ``None`` means fully visible.
    """
    H, W = probe.shape
    dirs, d_omega = texel_grid(H, W)
    v = None
    if vis is not None:
        cos = dirs @ point.normal
        v = np.zeros(len(dirs))
        for i in np.flatnonzero(cos > 0):
            v[i] = vis(dirs[i], d_omega[i])
        v = v[None]
    rows = transfer_rows(point.normal[None], point.wo[None], [point.material.albedo],
                         [point.material.roughness], v, H, W, uniform_brdf)[0]
    return np.einsum("tc,tc->c", rows, probe.flat())


# ---------------------------------------------------------------------------
# material lookup near the hit
# ---------------------------------------------------------------------------

def material_offsets(n_samples=3, t_step=0.005):
    """Depth offsets of the material samples, centred on the hit.

    ``n_samples`` points spaced ``2 * t_step / n_samples`` apart, so a single
    sample lands exactly on the hit.
    """
    if n_samples < 1:
        raise ConfigError("need at least one material sample")
    k = np.arange(n_samples)
    return t_step * (2 * (k + 0.5) / n_samples - 1)


def sample_material_batch(state: HdqState, x_s, directions, x_can, n_samples=3, t_step=0.005,
                          cfg: HdqConfig = HdqConfig()):
    """Uniformly averaged albedo ``(P, 3)`` and roughness ``(P,)`` around hits.

    Samples whose warp is unavailable reuse the hit's own canonical point.
    """
    x_s = np.asarray(x_s, dtype=float)
    d = np.asarray(directions, dtype=float)
    x_can = np.asarray(x_can, dtype=float)
    albedo = np.zeros((len(x_s), 3))
    rough = np.zeros(len(x_s))
    for off in material_offsets(n_samples, t_step):
        if off == 0:
            xc = x_can
        else:
            s = query(x_s + off * d, state, cfg)
            xc = np.where(s.fine[:, None], s.x_can, x_can)
        a, r = material_at(state.scene, xc)
        albedo += a
        rough += r
    return albedo / n_samples, rough / n_samples


def sample_material(state: HdqState, hit, index=0, n_samples=3, t_step=0.005,
                    cfg: HdqConfig = HdqConfig()) -> Material:
    """Averaged material for one hit ray of a traced batch."""
    if not hit.hit[index]:
        raise ConfigError("cannot sample material on a missed ray")
    sl = slice(index, index + 1)
    a, r = sample_material_batch(state, hit.x[sl], hit.directions[sl], hit.x_can[sl], n_samples, t_step, cfg)
    return Material(tuple(np.clip(a[0], 0, 1)), float(r[0]))
