"""Analytic canonical-space avatar: primitive SDFs, materials, displacement and
the template point cloud used by the coarse distance query.

Everything here lives in canonical (rest) space.  The scene is a plain scalar
field plus gradient so any other canonical SDF could replace it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np

from .errors import ConfigError
from .rig import BoneTransforms, Pose, Skeleton, _inverse3, blend_transforms, nearest_rotation

log = logging.getLogger(__name__)

KINDS = ("sphere", "capsule", "rounded-box")
FD_STEP = 1e-4
SKIN_SIGMA = 0.1


@dataclass(frozen=True)
class Material:
    albedo: tuple = (0.5, 0.5, 0.5)
    roughness: float = 0.5
    F0: ClassVar[float] = 0.04

    def __post_init__(self):
        albedo = tuple(float(a) for a in np.broadcast_to(np.asarray(self.albedo, dtype=float), (3,)))
        if any(not 0.0 <= a <= 1.0 for a in albedo):
            raise ConfigError(f"albedo {albedo} outside [0, 1]")
        if not 0.0 < self.roughness <= 1.0:
            raise ConfigError(f"roughness {self.roughness} outside (0, 1]")
        object.__setattr__(self, "albedo", albedo)
        object.__setattr__(self, "roughness", float(self.roughness))


def _vec(v, name):
    a = np.asarray(v, dtype=float)
    if a.shape != (3,):
        raise ConfigError(f"{name} must be a 3-vector, got {v!r}")
    return a


@dataclass(frozen=True, eq=False)
class Primitive:
    """One canonical primitive owned by a bone.

    ``radius`` is the sphere/capsule radius or the box rounding radius.
    """

    kind: str
    bone: int = 0
    material: Material = field(default_factory=Material)
    center: np.ndarray = None
    radius: float = 0.1
    a: np.ndarray = None
    b: np.ndarray = None
    half_extents: np.ndarray = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown primitive kind {self.kind!r}")
        if not self.radius > 0:
            raise ConfigError(f"{self.kind}: radius must be positive")
        if self.kind == "capsule":
            a, b = _vec(self.a, "capsule a"), _vec(self.b, "capsule b")
            if np.linalg.norm(b - a) < 1e-12:
                raise ConfigError("capsule endpoints coincide")
            object.__setattr__(self, "a", a)
            object.__setattr__(self, "b", b)
        else:
            object.__setattr__(self, "center", _vec(self.center, f"{self.kind} center"))
        if self.kind == "rounded-box":
            h = _vec(self.half_extents, "half_extents")
            if np.any(h < self.radius):
                raise ConfigError("rounded-box half extents must be >= rounding radius")
            object.__setattr__(self, "half_extents", h)

    # -- distance -----------------------------------------------------------

    def sdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "sphere":
            return np.linalg.norm(x - self.center, axis=-1) - self.radius
        if self.kind == "capsule":
            return np.linalg.norm(x - self._closest_on_axis(x), axis=-1) - self.radius
        q = np.abs(x - self.center) - (self.half_extents - self.radius)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        return outside + np.minimum(q.max(axis=-1), 0.0) - self.radius

    def gradient(self, x):
        """Analytic unit gradient and a mask of points where it is undefined."""
        x = np.asarray(x, dtype=float)
        if self.kind == "rounded-box":
            rel = x - self.center
            s = np.where(rel >= 0, 1.0, -1.0)
            q = np.abs(rel) - (self.half_extents - self.radius)
            o = np.maximum(q, 0.0)
            on = np.linalg.norm(o, axis=-1)
            g_out = s * o / np.where(on > 0, on, 1.0)[..., None]
            k = np.argmax(q, axis=-1)
            g_in = s * (np.arange(3) == k[..., None])
            g = np.where((on > 0)[..., None], g_out, g_in)
            qs = np.sort(q, axis=-1)
            singular = (on == 0) & (qs[..., 2] - qs[..., 1] < 1e-12)
            return g, singular
        if self.kind == "sphere":
            v = x - self.center
        else:
            v = x - self._closest_on_axis(x)
        n = np.linalg.norm(v, axis=-1)
        singular = n < 1e-12
        g = v / np.where(singular, 1.0, n)[..., None]
        return g, singular

    def _closest_on_axis(self, x):
        ab = self.b - self.a
        h = np.clip(((x - self.a) @ ab) / (ab @ ab), 0.0, 1.0)
        return self.a + h[..., None] * ab

    # -- bounds and sampling --------------------------------------------------

    def bounds(self):
        if self.kind == "sphere":
            r = np.full(3, self.radius)
            return self.center - r, self.center + r
        if self.kind == "capsule":
            r = np.full(3, self.radius)
            return np.minimum(self.a, self.b) - r, np.maximum(self.a, self.b) + r
        return self.center - self.half_extents, self.center + self.half_extents

    def sample_surface(self, n):
        """Quasi-uniform deterministic surface samples."""
        if self.kind == "sphere":
            return self.center + self.radius * fibonacci_sphere(n)
        if self.kind == "capsule":
            return self._sample_capsule(n)
        return self._sample_box(n)

    def _sample_capsule(self, n):
        r = self.radius
        axis = self.b - self.a
        length = np.linalg.norm(axis)
        u = axis / length
        e1 = np.cross(u, [1.0, 0, 0] if abs(u[0]) < 0.9 else [0, 1.0, 0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(u, e1)
        cap_area, cyl_area = 4 * np.pi * r * r, 2 * np.pi * r * length
        n_cap = int(round(n * cap_area / (cap_area + cyl_area)))
        n_cyl = n - n_cap
        uv = r2_sequence(n_cyl)
        h = uv[:, 0] * length
        phi = 2 * np.pi * uv[:, 1]
        cyl = self.a + h[:, None] * u + r * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)
        d = fibonacci_sphere(n_cap)
        world = d[:, :1] * e1 + d[:, 1:2] * e2 + d[:, 2:3] * u
        caps = np.where((d[:, 2] >= 0)[:, None], self.b, self.a) + r * world
        return np.vstack([cyl, caps])

    def _sample_box(self, n):
        r = self.radius
        e = self.half_extents - r
        pieces = []   # (area, generator)
        for i in range(3):
            j, k = [a for a in range(3) if a != i]
            for s in (-1.0, 1.0):
                pieces.append((4 * e[j] * e[k], ("face", i, j, k, s)))
            for sj in (-1.0, 1.0):
                for sk in (-1.0, 1.0):
                    pieces.append((np.pi * r * e[i], ("edge", i, j, k, sj, sk)))
        for sx in (-1.0, 1.0):
            for sy in (-1.0, 1.0):
                for sz in (-1.0, 1.0):
                    pieces.append((np.pi * r * r / 2, ("corner", np.array([sx, sy, sz]))))
        areas = np.array([a for a, _ in pieces])
        counts = _largest_remainder(n, areas / areas.sum())
        out = []
        for (_, spec), m in zip(pieces, counts):
            if m == 0:
                continue
            uv = r2_sequence(m)
            p = np.zeros((m, 3))
            if spec[0] == "face":
                _, i, j, k, s = spec
                p[:, i] = s * (e[i] + r)
                p[:, j] = (2 * uv[:, 0] - 1) * e[j]
                p[:, k] = (2 * uv[:, 1] - 1) * e[k]
            elif spec[0] == "edge":
                _, i, j, k, sj, sk = spec
                phi = uv[:, 1] * np.pi / 2
                p[:, i] = (2 * uv[:, 0] - 1) * e[i]
                p[:, j] = sj * (e[j] + r * np.cos(phi))
                p[:, k] = sk * (e[k] + r * np.sin(phi))
            else:
                signs = spec[1]
                z = uv[:, 1]
                phi = uv[:, 0] * np.pi / 2
                rho = np.sqrt(1 - z * z)
                d = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
                p = signs * (e + r * d)
            out.append(p)
        return self.center + np.vstack(out)


def fibonacci_sphere(n):
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    rho = np.sqrt(np.clip(1 - z * z, 0, None))
    phi = np.pi * (3 - np.sqrt(5)) * np.arange(n)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


def r2_sequence(n):
    """Roberts' R2 low-discrepancy points in the unit square."""
    g = 1.32471795724474602596
    alpha = np.array([1 / g, 1 / (g * g)])
    return (0.5 + np.outer(np.arange(n), alpha)) % 1.0


def _largest_remainder(n, fractions):
    raw = n * fractions
    counts = np.floor(raw).astype(int)
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[: n - counts.sum()]] += 1
    return counts


@dataclass(frozen=True)
class DisplacementField:
    """Pose-dependent canonical offset.

    The bulge is a Gaussian bump of height ``amplitude`` along ``direction``
    centred at ``center``; its strength is ``|sin(theta/2)|`` of the driving
    bone's local rotation, so it vanishes at the identity pose.
    """

    kind: str = "zero"
    amplitude: float = 0.0
    bone: int = 0
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.1
    direction: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("zero", "bulge"):
            raise ConfigError(f"unknown displacement kind {self.kind!r}")
        if not 0.0 <= self.amplitude < 0.05:
            raise ConfigError("displacement amplitude must lie in [0, 0.05)")
        if self.kind == "bulge" and not self.radius > 0:
            raise ConfigError("bulge radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        d = np.asarray(self.direction, dtype=float)
        nd = np.linalg.norm(d)
        if nd == 0:
            raise ConfigError("bulge direction must be non-zero")
        object.__setattr__(self, "direction", tuple(float(c) for c in d / nd))


def displacement(field: DisplacementField, pose: Pose, x):
    x = np.asarray(x, dtype=float)
    if field.kind == "zero" or field.amplitude == 0.0:
        return np.zeros_like(x)
    strength = float(np.linalg.norm(pose.rotations[field.bone, 1:]))
    if strength == 0.0:
        return np.zeros_like(x)
    r2 = np.sum((x - np.asarray(field.center)) ** 2, axis=-1)
    g = field.amplitude * strength * np.exp(-r2 / (2 * field.radius ** 2))
    return g[..., None] * np.asarray(field.direction)


@dataclass(frozen=True, eq=False)
class PuppetScene:
    skeleton: Skeleton
    primitives: tuple
    combine: str = "min"
    smooth_k: float = 0.0
    displacement: DisplacementField = field(default_factory=DisplacementField)

    def __post_init__(self):
        prims = tuple(self.primitives)
        if not prims:
            raise ConfigError("scene has no primitives")
        for i, p in enumerate(prims):
            if not 0 <= p.bone < self.skeleton.n_bones:
                raise ConfigError(f"primitive {i} references missing bone {p.bone}")
        if self.combine not in ("min", "smooth"):
            raise ConfigError(f"unknown combine rule {self.combine!r}")
        if self.combine == "smooth" and not self.smooth_k > 0:
            raise ConfigError("smooth combine needs k > 0")
        if self.displacement.kind == "bulge" and not 0 <= self.displacement.bone < self.skeleton.n_bones:
            raise ConfigError("displacement references a missing bone")
        object.__setattr__(self, "primitives", prims)

    @property
    def exact(self):
        """True when the combined field is an exact SDF (hard min)."""
        return self.combine == "min"

    def bounds(self):
        lo, hi = zip(*(p.bounds() for p in self.primitives))
        return np.min(lo, axis=0), np.max(hi, axis=0)


def primitive_distances(scene: PuppetScene, x):
    x = np.asarray(x, dtype=float)
    return np.stack([p.sdf(x) for p in scene.primitives], axis=-1)


def _smooth_min(a, b, k):
    h = np.maximum(k - np.abs(a - b), 0.0) / k
    return np.minimum(a, b) - h * h * k / 4


def canonical_sdf(scene: PuppetScene, x):
    d = primitive_distances(scene, x)
    if scene.exact:
        return d.min(axis=-1)
    out = d[..., 0]
    for i in range(1, d.shape[-1]):
        out = _smooth_min(out, d[..., i], scene.smooth_k)
    return out


def fd_gradient(scene: PuppetScene, x, h=FD_STEP):
    """Central-difference gradient of the combined field (not normalized)."""
    x = np.asarray(x, dtype=float)
    g = np.empty(x.shape)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        g[..., i] = (canonical_sdf(scene, x + e) - canonical_sdf(scene, x - e)) / (2 * h)
    return g


def canonical_gradient(scene: PuppetScene, x, check=True):
    """Unit gradient of the canonical field.

    Returns ``(gradient, singular)``.  Hard-min scenes use the analytic
    gradient of the closest primitive; with ``check`` set, points where it
    disagrees with central differences (creases, medial axes) are flagged.
    Smooth scenes fall back to central differences.
    """
    x = np.asarray(x, dtype=float)
    fd = fd_gradient(scene, x)
    fd_norm = np.linalg.norm(fd, axis=-1)
    if not scene.exact:
        singular = fd_norm < 1e-6
        return fd / np.where(singular, 1.0, fd_norm)[..., None], singular

    d = primitive_distances(scene, x)
    owner = np.argmin(d, axis=-1)
    g = np.zeros(x.shape)
    singular = np.zeros(x.shape[:-1], dtype=bool)
    for i, prim in enumerate(scene.primitives):
        sel = owner == i
        if np.any(sel):
            gi, si = prim.gradient(x[sel])
            g[sel] = gi
            singular[sel] = si
    if check:
        cos = np.einsum("...i,...i->...", g, fd) / np.where(fd_norm > 0, fd_norm, 1.0)
        singular |= (np.abs(fd_norm - 1.0) > 0.05) | (cos < np.cos(np.radians(5.0)))
    return g, singular


def material_at(scene: PuppetScene, x):
    """Albedo ``(..., 3)`` and roughness ``(...)`` of the nearest primitive.

    Nearest is by unsigned distance; ties go to the lower primitive index.
    """
    d = np.abs(primitive_distances(scene, x))
    owner = np.argmin(d, axis=-1)
    albedo = np.array([p.material.albedo for p in scene.primitives])
    rough = np.array([p.material.roughness for p in scene.primitives])
    return albedo[owner], rough[owner]


# ---------------------------------------------------------------------------
# template cloud
# ---------------------------------------------------------------------------

def segment_distances(points, skeleton: Skeleton):
    """Distance from each point to each bone segment, ``(N, B)``."""
    p = np.asarray(points, dtype=float)[:, None, :]
    a = skeleton.heads[None]
    ab = skeleton.tails[None] - a
    denom = np.sum(ab * ab, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        h = np.sum((p - a) * ab, axis=-1) / denom
    h = np.clip(np.nan_to_num(h, nan=0.0), 0.0, 1.0)
    return np.linalg.norm(p - (a + h[..., None] * ab), axis=-1)


def falloff_weights(points, skeleton: Skeleton, sigma=SKIN_SIGMA):
    d2 = segment_distances(points, skeleton) ** 2
    logits = -(d2 - d2.min(axis=1, keepdims=True)) / (2 * sigma * sigma)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class TemplateCloud:
    positions: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    primitive_ids: np.ndarray

    def __len__(self):
        return len(self.positions)


@dataclass(frozen=True, eq=False)
class PosedCloud:
    """World-space template; ``indices`` map back into the template."""

    positions: np.ndarray
    normals: np.ndarray
    indices: np.ndarray
    template: TemplateCloud
    dropped: int = 0

    def __len__(self):
        return len(self.positions)

    @property
    def canonical(self):
        return self.template.positions[self.indices]

    @property
    def weights(self):
        return self.template.weights[self.indices]

    def bounds(self):
        return self.positions.min(axis=0), self.positions.max(axis=0)


def _project_to_zero_set(scene, p, iters=8):
    for _ in range(iters):
        g = fd_gradient(scene, p)
        gn = np.sum(g * g, axis=-1)
        p = p - (canonical_sdf(scene, p) / np.where(gn > 0, gn, 1.0))[:, None] * g
    return p


def bake_template(scene: PuppetScene, samples_per_primitive=2000, sigma=SKIN_SIGMA, tol=1e-4):
    if samples_per_primitive < 100:
        raise ConfigError("bake_template needs at least 100 samples per primitive")
    pos, ids = [], []
    for i, prim in enumerate(scene.primitives):
        p = prim.sample_surface(samples_per_primitive)
        if scene.exact:
            keep = canonical_sdf(scene, p) > -1e-9
        else:
            q = _project_to_zero_set(scene, p)
            keep = (np.abs(canonical_sdf(scene, q)) < tol * 0.1) & (
                np.linalg.norm(q - p, axis=1) <= scene.smooth_k)
            p = q
        if not np.any(keep):
            log.warning("primitive %d is fully swallowed; it contributes no template points", i)
            continue
        pos.append(p[keep])
        ids.append(np.full(int(keep.sum()), i))
    if not pos:
        raise ConfigError("template is empty")
    pos = np.vstack(pos)
    ids = np.concatenate(ids)
    normals, singular = canonical_gradient(scene, pos)
    ok = ~singular & (np.abs(canonical_sdf(scene, pos)) < tol)
    pos, ids, normals = pos[ok], ids[ok], normals[ok]
    if len(pos) < 1000:
        log.warning("template has only %d points", len(pos))
    weights = falloff_weights(pos, scene.skeleton, sigma)
    return TemplateCloud(pos, normals, weights, ids)


def pose_template(cloud: TemplateCloud, transforms: BoneTransforms) -> PosedCloud:
    a, c = blend_transforms(cloud.weights, transforms)
    _, det = _inverse3(a)
    ok = np.abs(det) > 1e-6
    dropped = int((~ok).sum())
    if dropped:
        log.warning("dropped %d template points with degenerate skinning blends", dropped)
    idx = np.flatnonzero(ok)
    a = a[ok]
    pos = np.einsum("nij,nj->ni", a, cloud.positions[ok]) + c[ok]
    nrm = np.einsum("nij,nj->ni", nearest_rotation(a), cloud.normals[ok])
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return PosedCloud(pos, nrm, idx, cloud, dropped)
