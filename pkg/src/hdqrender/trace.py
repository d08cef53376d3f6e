"""Sphere tracing on the hierarchical distance field: surface intersection,
distance-field soft visibility and a Monte-Carlo visibility reference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NotOnSurfaceError
from .hdq import SURFACE_TOLERANCE, HdqConfig, HdqState, distance, query, surface_normal

DEFAULT_HDQ = HdqConfig()


@dataclass(frozen=True)
class TraceConfig:
    steps: int = 16
    offset: float = 0.02
    vis_steps: int = 4
    vis_near: float = 0.01
    vis_far: float = 10.0
    hit_threshold: float = 5e-3
    aabb_pad: float = 0.15

    def __post_init__(self):
        if self.steps < 1 or self.vis_steps < 1:
            raise ConfigError("step counts must be >= 1")
        if self.offset < 0:
            raise ConfigError("step offset must be >= 0")
        if not 0 <= self.vis_near < self.vis_far:
            raise ConfigError("visibility near/far must satisfy 0 <= near < far")


DEFAULT_TRACE = TraceConfig()


@dataclass(frozen=True, eq=False)
class Rays:
    origins: np.ndarray
    directions: np.ndarray
    near: np.ndarray
    far: np.ndarray

    def __post_init__(self):
        o = np.atleast_2d(np.asarray(self.origins, dtype=float))
        d = np.atleast_2d(np.asarray(self.directions, dtype=float))
        o, d = np.broadcast_arrays(o, d)
        norm = np.linalg.norm(d, axis=1, keepdims=True)
        if np.any(norm == 0):
            raise ConfigError("ray direction must be non-zero")
        near = np.broadcast_to(np.asarray(self.near, dtype=float), (len(o),)).copy()
        far = np.broadcast_to(np.asarray(self.far, dtype=float), (len(o),)).copy()
        if np.any(near < 0) or np.any(near >= far):
            raise ConfigError("rays need 0 <= near < far")
        object.__setattr__(self, "origins", o.copy())
        object.__setattr__(self, "directions", d / norm)
        object.__setattr__(self, "near", near)
        object.__setattr__(self, "far", far)

    def __len__(self):
        return len(self.origins)

    def at(self, t):
        return self.origins + np.asarray(t)[..., None] * self.directions


@dataclass(frozen=True, eq=False)
class Hit:
    hit: np.ndarray
    t: np.ndarray
    x: np.ndarray
    residual: np.ndarray
    x_can: np.ndarray
    normal: np.ndarray
    steps: int
    directions: np.ndarray = None
    t_estimate: np.ndarray = None   # tracer output before the miss test


def ray_aabb(origins, directions, lo, hi, pad=0.15):
    """Slab test against the box ``[lo - pad, hi + pad]``.

    Returns ``(near, far, mask)``; ``near`` is clamped to 0 so rays starting
    inside the box begin at their origin.
    """
    o = np.atleast_2d(np.asarray(origins, dtype=float))
    d = np.atleast_2d(np.asarray(directions, dtype=float))
    lo = np.asarray(lo, dtype=float) - pad
    hi = np.asarray(hi, dtype=float) + pad
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t0 = (lo - o) * inv
        t1 = (hi - o) * inv
    # parallel rays: inside the slab -> unbounded, outside -> empty
    par = d == 0
    inside = (o >= lo) & (o <= hi)
    enter = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t0, t1))
    leave = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t0, t1))
    tmin = enter.max(axis=1)
    tmax = leave.min(axis=1)
    near = np.maximum(tmin, 0.0)
    mask = tmax > near
    return near, tmax, mask


def _step(d, offset):
    # the grazing-angle offset only applies while approaching from outside
    return d + np.where(d > 0, offset, 0.0)


def intersect(rays: Rays, state: HdqState, hdq_cfg: HdqConfig = DEFAULT_HDQ,
              cfg: TraceConfig = DEFAULT_TRACE, variant="full", cutoff=None, normals=True) -> Hit:
    """Fixed-budget sphere tracing with sign-change interpolation.

    Keeps the all-time closest sample as the intersection estimate and
    replaces it by a linear interpolation whenever the distance changes sign.
    Outside the surface each step advances by ``d + offset``; inside it steps
    back by ``d`` alone, so the march settles on the surface instead of
    oscillating around ``d = -offset``.  Steps are clamped to ``[near, far]``
    and every ray runs exactly ``cfg.steps`` iterations.
    """
    n = len(rays)
    near, far = rays.near, rays.far
    t = near.copy()
    t_s = far.copy()
    d1 = np.full(n, np.inf)
    d_c = np.full(n, np.inf)
    d_t = np.full(n, np.inf)
    for i in range(cfg.steps):
        d0 = d1
        d1 = distance(rays.at(t), state, hdq_cfg, cutoff, variant)
        a0, a1 = np.abs(d0), np.abs(d1)
        closer = a1 < d_c
        d_c = np.where(closer, a1, d_c)
        t_s = np.where(closer, t, t_s)
        if i > 0:
            flip = np.sign(d0) != np.sign(d1)
            with np.errstate(invalid="ignore", divide="ignore"):
                t_interp = t - d_t * a1 / (a0 + a1)
            t_s = np.where(flip & np.isfinite(t_interp), t_interp, t_s)
        d_t = _step(d1, cfg.offset)
        t = np.clip(t + d_t, near, far)

    hit = np.ones(n, dtype=bool)
    return _finish(rays, t_s, hit, state, hdq_cfg, cutoff, variant, normals, cfg.steps, cfg.hit_threshold)


def _finish(rays, t_s, candidate, state, hdq_cfg, cutoff, variant, normals, steps, threshold=5e-3):
    s = query(rays.at(t_s), state, hdq_cfg, cutoff, variant)
    residual = np.abs(s.d)
    hit = candidate & (residual <= threshold)
    t_est = t_s
    t_s = np.where(hit, t_s, rays.far)
    x = rays.at(t_s)
    nrm = np.full((len(rays), 3), np.nan)
    if normals and np.any(hit):
        idx = np.flatnonzero(hit)
        nrm[idx], _ = surface_normal(x[idx], state, hdq_cfg, strict=False)
    x_can = np.where(hit[:, None], s.x_can, np.nan)
    return Hit(hit, t_s, x, residual, x_can, nrm, steps, rays.directions, t_est)


def dense_march(rays: Rays, state: HdqState, hdq_cfg: HdqConfig = DEFAULT_HDQ,
                cfg: TraceConfig = DEFAULT_TRACE, samples=128, bisections=8, normals=True) -> Hit:
    """Baseline without the hierarchy: ``samples`` uniform depths of the warped
    canonical distance per ray, then bisection on the first sign change."""
    n = len(rays)
    near, far = rays.near, rays.far
    ts = near[:, None] + (far - near)[:, None] * (np.arange(samples) + 0.5) / samples
    d = np.empty((n, samples))
    for j in range(samples):
        d[:, j] = distance(rays.at(ts[:, j]), state, hdq_cfg, variant="fine-only")
    neg = d <= 0
    found = neg.any(axis=1)
    first = np.argmax(neg, axis=1)
    rows = np.arange(n)
    hi = ts[rows, first]
    lo = np.where(first > 0, ts[rows, np.maximum(first - 1, 0)], near)
    for _ in range(bisections):
        mid = 0.5 * (lo + hi)
        inside = distance(rays.at(mid), state, hdq_cfg, variant="fine-only") <= 0
        hi = np.where(inside, mid, hi)
        lo = np.where(inside, lo, mid)
    t_s = np.where(found, 0.5 * (lo + hi), far)
    return _finish(rays, t_s, found, state, hdq_cfg, None, "full", normals, samples + bisections,
                   cfg.hit_threshold)


def _check_on_surface(x, state, hdq_cfg):
    d = distance(x, state, hdq_cfg)
    if np.any(~(np.abs(d) <= SURFACE_TOLERANCE)):
        raise NotOnSurfaceError("visibility trace must start on the surface")


def _march(x, dirs, state, hdq_cfg, cfg, variant="full"):
    """Shared visibility march; yields the distance at every step."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    x, dirs = np.broadcast_arrays(x, dirs)
    t = np.full(len(x), cfg.vis_near)
    for _ in range(cfg.vis_steps):
        d1 = distance(x + t[:, None] * dirs, state, hdq_cfg, hdq_cfg.vis_cutoff, variant)
        yield t, d1
        t = np.clip(t + _step(d1, cfg.offset), cfg.vis_near, cfg.vis_far)


def soft_visibility(x_s, directions, solid_angle, state: HdqState, hdq_cfg: HdqConfig = DEFAULT_HDQ,
                    cfg: TraceConfig = DEFAULT_TRACE, check=True, variant="full"):
    """Penumbra coefficient in [0, 1] for light cones of ``solid_angle`` sr."""
    if check:
        _check_on_surface(x_s, state, hdq_cfg)
    a = np.asarray(solid_angle, dtype=float)
    if np.any(a <= 0):
        raise ConfigError("light solid angle must be positive")
    cone = np.sqrt(a / np.pi)
    p = None
    for t, d1 in _march(x_s, directions, state, hdq_cfg, cfg, variant):
        if p is None:
            p = np.ones(len(t))
        p = np.minimum(p, np.maximum(d1, 0.0) / (2 * t * cone))
    return p


def hard_visibility(x_s, directions, state: HdqState, hdq_cfg: HdqConfig = DEFAULT_HDQ,
                    cfg: TraceConfig = DEFAULT_TRACE, check=True, variant="full"):
    """Binary visibility: 0 as soon as the march reaches a non-positive distance."""
    if check:
        _check_on_surface(x_s, state, hdq_cfg)
    vis = None
    for t, d1 in _march(x_s, directions, state, hdq_cfg, cfg, variant):
        if vis is None:
            vis = np.ones(len(t))
        vis = np.where(d1 <= 0, 0.0, vis)
    return vis


def cap_directions(axis, solid_angle, n, rng):
    """``n`` uniform directions in the spherical cap of ``solid_angle`` around ``axis``."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    cos_max = 1 - solid_angle / (2 * np.pi)
    cos_t = 1 - rng.random(n) * (1 - cos_max)
    sin_t = np.sqrt(np.clip(1 - cos_t ** 2, 0, None))
    phi = 2 * np.pi * rng.random(n)
    helper = np.array([1.0, 0, 0]) if abs(axis[0]) < 0.9 else np.array([0, 1.0, 0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return (sin_t * np.cos(phi))[:, None] * e1 + (sin_t * np.sin(phi))[:, None] * e2 + cos_t[:, None] * axis


def occluded(origins, directions, state, hdq_cfg=DEFAULT_HDQ, near=0.01, far=10.0, eps=1e-4,
             max_steps=512):
    """Conservative sphere tracing (no offset, tight residual) for occlusion."""
    o = np.atleast_2d(np.asarray(origins, dtype=float))
    d = np.atleast_2d(np.asarray(directions, dtype=float))
    o, d = np.broadcast_arrays(o, d)
    n = len(o)
    t = np.full(n, near)
    blocked = np.zeros(n, dtype=bool)
    active = np.arange(n)
    for _ in range(max_steps):
        if len(active) == 0:
            break
        dist = distance(o[active] + t[active, None] * d[active], state, hdq_cfg)
        hit = dist < eps
        blocked[active[hit]] = True
        t[active] += np.maximum(dist, 0.0)
        active = active[~hit & (t[active] < far)]
    return blocked


def mc_area_visibility_oracle(x_s, direction, solid_angle, state: HdqState, n_samples=1024,
                              seed=0, hdq_cfg: HdqConfig = DEFAULT_HDQ, cfg: TraceConfig = DEFAULT_TRACE):
    """Fraction of an area light's cone that is unoccluded, by Monte Carlo."""
    rng = np.random.default_rng(seed)
    dirs = cap_directions(direction, solid_angle, n_samples, rng)
    blocked = occluded(np.asarray(x_s, dtype=float), dirs, state, hdq_cfg, cfg.vis_near, cfg.vis_far)
    return 1.0 - blocked.mean()
