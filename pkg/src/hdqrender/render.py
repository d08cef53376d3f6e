"""Camera model, tile-parallel frame renderer, accuracy ablation and timing
harness."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .hdq import VARIANTS, HdqConfig, HdqState, distance
from .shade import PROBE_H, PROBE_W, UNIFORM_BRDF, LightProbe, sample_material_batch, texel_grid, transfer_rows
from .trace import Rays, TraceConfig, dense_march, hard_visibility, intersect, ray_aabb, soft_visibility

log = logging.getLogger(__name__)

MODES = ("relit", "albedo", "normal", "visibility-uniform", "ambient")
VIS_KINDS = ("soft", "hard", "none", "local")
RENDER_VARIANTS = VARIANTS + ("dense-march",)
TILE = 16
CUTOFF_SWEEP = (0.01, 0.05, 0.1, 0.5)


@dataclass(frozen=True)
class Camera:
    position: tuple
    look_at: tuple = (0.0, 0.0, 0.0)
    up: tuple = (0.0, 0.0, 1.0)
    fov: float = 40.0
    width: int = 64
    height: int = 64

    def __post_init__(self):
        for name in ("position", "look_at", "up"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (3,) or not np.all(np.isfinite(v)):
                raise ConfigError(f"camera {name} must be a finite 3-vector")
            object.__setattr__(self, name, tuple(float(c) for c in v))
        if not 1.0 < self.fov < 179.0:
            raise ConfigError("camera fov must lie in (1, 179) degrees")
        if self.width < 16 or self.height < 16:
            raise ConfigError("resolution must be at least 16x16")
        f = np.subtract(self.look_at, self.position)
        if np.linalg.norm(f) == 0 or np.linalg.norm(np.cross(f, self.up)) < 1e-9 * np.linalg.norm(f):
            raise ConfigError("camera view direction must be non-zero and not parallel to up")

    def basis(self):
        f = np.subtract(self.look_at, self.position)
        f = f / np.linalg.norm(f)
        r = np.cross(f, self.up)
        r /= np.linalg.norm(r)
        return f, r, np.cross(r, f)

    def rays(self):
        """Pixel-centre rays, row-major from the top-left: ``(origins, dirs)``."""
        f, r, u = self.basis()
        th = np.tan(np.radians(self.fov) / 2)
        aspect = self.width / self.height
        i, j = np.meshgrid(np.arange(self.height), np.arange(self.width), indexing="ij")
        sx = (2 * (j.ravel() + 0.5) / self.width - 1) * th * aspect
        sy = (1 - 2 * (i.ravel() + 0.5) / self.height) * th
        d = f + sx[:, None] * r + sy[:, None] * u
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        o = np.broadcast_to(np.asarray(self.position), d.shape).copy()
        return o, d

    @classmethod
    def framing(cls, lo, hi, width=64, height=64, fov=35.0, direction=(0.0, 0.0, 1.0), up=(0.0, 1.0, 0.0),
                margin=1.1):
        """Camera on ``direction`` from the box centre, far enough to fit the box."""
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        c = (lo + hi) / 2
        radius = np.linalg.norm(hi - lo) / 2
        d = np.asarray(direction, dtype=float)
        d /= np.linalg.norm(d)
        dist = margin * radius / np.sin(np.radians(fov) / 2)
        return cls(tuple(c + dist * d), tuple(c), up, fov, width, height)


@dataclass(frozen=True)
class RenderConfig:
    camera: Camera
    mode: str = "relit"
    vis: str = "soft"
    variant: str = "full"
    trace: TraceConfig = field(default_factory=TraceConfig)
    hdq: HdqConfig = field(default_factory=HdqConfig)
    material_samples: int = 3
    t_step: float = 0.005
    specular: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.vis not in VIS_KINDS:
            raise ConfigError(f"unknown visibility {self.vis!r}; choose from {VIS_KINDS}")
        if self.variant not in RENDER_VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {RENDER_VARIANTS}")
        if self.variant == "dense-march" and self.vis in ("soft", "hard") and self.shades:
            raise ConfigError("the dense-march baseline traces primary rays only; use --vis none or local")
        if self.material_samples < 1:
            raise ConfigError("material_samples must be >= 1")

    @property
    def shades(self):
        """Whether the mode sums over probe texels."""
        return self.mode in ("relit", "visibility-uniform", "ambient")


@dataclass(eq=False)
class Frame:
    image: np.ndarray        # (H, W, 3) linear
    coverage: np.ndarray     # (H, W) 1 on foreground
    residual: np.ndarray     # (H, W) |d| at the hit, NaN on background
    hits: int
    failures: int
    seconds: float

    def summary(self):
        res = self.residual[np.isfinite(self.residual)]
        mean = f"{res.mean():.3e}" if len(res) else "n/a"
        return (f"hits={self.hits} failures={self.failures} mean_residual={mean} "
                f"seconds={self.seconds:.3f}")


# ---------------------------------------------------------------------------
# per-pixel pipeline
# ---------------------------------------------------------------------------

def trace_rays(state: HdqState, cfg: RenderConfig, origins, dirs, normals=True):
    """Bounding-box clip then intersection for one batch.

    Returns ``(mask, rays, hit)``: ``mask`` marks rays that overlap the padded
    box; ``rays``/``hit`` cover only those.
    """
    lo, hi = state.bounds()
    near, far, mask = ray_aabb(origins, dirs, lo, hi, cfg.trace.aabb_pad)
    if not np.any(mask):
        return mask, None, None
    rays = Rays(origins[mask], dirs[mask], near[mask], far[mask])
    if cfg.variant == "dense-march":
        hit = dense_march(rays, state, cfg.hdq, cfg.trace, normals=normals)
    else:
        hit = intersect(rays, state, cfg.hdq, cfg.trace, cfg.variant, normals=normals)
    return mask, rays, hit


def visibility_matrix(kind, state: HdqState, x, normals, hdq_cfg: HdqConfig, trace_cfg: TraceConfig,
                      variant="full", H=PROBE_H, W=PROBE_W):
    """``(P, H*W)`` visibility for texels above each point's horizon, 0 elsewhere.

    Returns ``None`` for ``kind == "none"``.  Points are assumed on the
    surface already (they come from accepted hits).
    """
    if kind == "none":
        return None
    dirs, d_omega = texel_grid(H, W)
    cos = normals @ dirs.T
    lit = cos > 0
    if kind == "local":
        return np.where(lit, np.clip(cos, 0, 1), 0.0)
    p, t = np.nonzero(lit)
    v = np.zeros(cos.shape)
    if len(p) == 0:
        return v
    if kind == "soft":
        v[p, t] = soft_visibility(x[p], dirs[t], d_omega[t], state, hdq_cfg, trace_cfg, check=False,
                                  variant=variant)
    else:
        v[p, t] = hard_visibility(x[p], dirs[t], state, hdq_cfg, trace_cfg, check=False, variant=variant)
    return v


@dataclass(eq=False)
class ShadingInputs:
    """Everything between intersection and the probe sum, for accepted pixels."""

    pixels: np.ndarray       # flat pixel indices
    x: np.ndarray
    normal: np.ndarray
    wo: np.ndarray
    albedo: np.ndarray
    roughness: np.ndarray
    residual: np.ndarray
    failures: int


def shading_inputs(state: HdqState, cfg: RenderConfig, origins, dirs, pixels) -> ShadingInputs:
    mask, rays, hit = trace_rays(state, cfg, origins, dirs)
    empty = ShadingInputs(np.zeros(0, int), *(np.zeros((0, 3)),) * 3, np.zeros((0, 3)), np.zeros(0),
                          np.zeros(0), 0)
    if hit is None:
        return empty
    idx = np.flatnonzero(mask)
    wo = -rays.directions
    facing = np.einsum("ni,ni->n", hit.normal, wo)
    ok = hit.hit & np.isfinite(facing) & (facing > 0)
    failures = int((hit.hit & ~ok).sum())
    sel = np.flatnonzero(ok)
    if len(sel) == 0:
        empty.failures = failures
        return empty
    need_material = cfg.mode in ("relit", "albedo")
    if need_material:
        albedo, rough = sample_material_batch(state, hit.x[sel], rays.directions[sel], hit.x_can[sel],
                                              cfg.material_samples, cfg.t_step, cfg.hdq)
    else:
        albedo, rough = np.ones((len(sel), 3)), np.ones(len(sel))
    return ShadingInputs(np.asarray(pixels)[idx[sel]], hit.x[sel], hit.normal[sel], wo[sel], albedo, rough,
                         hit.residual[sel], failures)


def pixel_transfer(state: HdqState, cfg: RenderConfig, si: ShadingInputs, H=PROBE_H, W=PROBE_W):
    """Transfer rows ``(P, H*W, 3)`` of the mode's shading sum."""
    vis_variant = "full" if cfg.variant == "dense-march" else cfg.variant
    vis = visibility_matrix(cfg.vis, state, si.x, si.normal, cfg.hdq, cfg.trace, vis_variant, H, W)
    if cfg.mode == "relit":
        return transfer_rows(si.normal, si.wo, si.albedo, si.roughness, vis, H, W, specular=cfg.specular)
    if cfg.mode == "visibility-uniform":
        return transfer_rows(si.normal, si.wo, si.albedo, si.roughness, vis, H, W, uniform_brdf=UNIFORM_BRDF)
    # ambient: white Lambertian under a unit probe
    return transfer_rows(si.normal, si.wo, si.albedo, si.roughness, vis, H, W, uniform_brdf=1 / np.pi)


def _render_tile(state, cfg, probe, origins, dirs, pixels):
    si = shading_inputs(state, cfg, origins, dirs, pixels)
    if len(si.pixels) == 0:
        return si, np.zeros((0, 3))
    if cfg.mode == "normal":
        rgb = (si.normal + 1) / 2
    elif cfg.mode == "albedo":
        rgb = si.albedo
    else:
        p = LightProbe.uniform(1.0) if (probe is None or cfg.mode == "ambient") else probe
        rows = pixel_transfer(state, cfg, si, *p.shape)
        rgb = np.einsum("ptc,tc->pc", rows, p.flat())
    return si, rgb


def tiles(width, height, tile=TILE):
    """Flat pixel indices of each ``tile x tile`` block in a fixed order."""
    out = []
    for y0 in range(0, height, tile):
        for x0 in range(0, width, tile):
            ys, xs = np.meshgrid(np.arange(y0, min(y0 + tile, height)), np.arange(x0, min(x0 + tile, width)),
                                 indexing="ij")
            out.append((ys * width + xs).ravel())
    return out


def render_frame(state: HdqState, cfg: RenderConfig, probe: LightProbe = None, threads=1) -> Frame:
    """Render one frame; the tile split is fixed, so the result does not
    depend on ``threads``."""
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    cam = cfg.camera
    t0 = time.perf_counter()
    origins, dirs = cam.rays()
    n = cam.width * cam.height
    image = np.zeros((n, 3))
    coverage = np.zeros(n)
    residual = np.full(n, np.nan)
    work = tiles(cam.width, cam.height)

    def run(pix):
        return _render_tile(state, cfg, probe, origins[pix], dirs[pix], pix)

    if threads == 1:
        results = [run(p) for p in work]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, work))
    failures = 0
    for si, rgb in results:
        image[si.pixels] = rgb
        coverage[si.pixels] = 1.0
        residual[si.pixels] = si.residual
        failures += si.failures
    secs = time.perf_counter() - t0
    shape = (cam.height, cam.width)
    return Frame(image.reshape(shape + (3,)), coverage.reshape(shape), residual.reshape(shape),
                 int(coverage.sum()), failures, secs)


# ---------------------------------------------------------------------------
# harnesses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AblationRow:
    variant: str
    residual: float
    seconds: float
    hits: int
    foreground: int


def ablate(state: HdqState, camera: Camera, variants=RENDER_VARIANTS, trace_cfg=TraceConfig(),
           hdq_cfg=HdqConfig()):
    """Intersection accuracy and time per variant.

    The residual is the full hierarchical distance at each variant's
    intersection estimate, averaged over the rays the full variant hits, so
    every variant is scored on the same pixels in the same field.
    """
    origins, dirs = camera.rays()
    base = RenderConfig(camera, mode="normal", vis="none", trace=trace_cfg, hdq=hdq_cfg)
    order = ["full"] + [v for v in variants if v != "full"]
    est, secs, hits = {}, {}, {}
    for v in order:
        cfg = replace(base, variant=v)
        t0 = time.perf_counter()
        mask, rays, hit = trace_rays(state, cfg, origins, dirs)
        secs[v] = time.perf_counter() - t0
        t = np.full(len(origins), np.nan)
        if hit is not None:
            t[mask] = hit.t_estimate
        est[v] = t
        h = np.zeros(len(origins), bool)
        if hit is not None:
            h[mask] = hit.hit
        hits[v] = h
    fg = hits["full"]
    rows = []
    for v in order:
        if v not in variants:
            continue
        x = origins[fg] + est[v][fg, None] * dirs[fg]
        res = float(np.mean(np.abs(distance(x, state, hdq_cfg)))) if fg.any() else float("nan")
        rows.append(AblationRow(v, res, secs[v], int(hits[v].sum()), int(fg.sum())))
    return rows


def ablation_csv(rows):
    lines = ["variant,residual,seconds"]
    lines += [f"{r.variant},{r.residual:.6e},{r.seconds:.4f}" for r in rows]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class BenchRow:
    variant: str
    cutoff: float
    median: float
    minimum: float
    repetitions: int
    residual: float


def sweep_config(cfg: RenderConfig, cutoff):
    """Cut-off override; the visibility cut-off follows at a quarter of it."""
    hdq = replace(cfg.hdq, cutoff=cutoff, vis_cutoff=cutoff / 4)
    return replace(cfg, hdq=hdq)


def bench(state: HdqState, cfg: RenderConfig, probe=None, variants=None, repetitions=5, cutoffs=None,
          threads=1, reference=HdqConfig()):
    """Median/min frame time per variant (and per cut-off when given).

    The residual column is the reference field's mean |d| at each run's
    intersection estimate, over the rays the reference configuration hits,
    so every row is scored on the same pixels.
    """
    if repetitions < 1:
        raise ConfigError("repetitions must be >= 1")
    variants = variants or (cfg.variant,)
    origins, dirs = cfg.camera.rays()
    ref_cfg = replace(cfg, variant="full", hdq=reference)
    t_ref = _estimates(state, ref_cfg, origins, dirs)
    fg = np.isfinite(t_ref[0]) & t_ref[1]
    rows = []
    for v in variants:
        for c in (cutoffs or (None,)):
            run = replace(cfg, variant=v)
            if c is not None:
                run = sweep_config(run, c)
            times = []
            for _ in range(repetitions):
                times.append(render_frame(state, run, probe, threads).seconds)
            t_est, _ = _estimates(state, run, origins, dirs)
            res = float("nan")
            if fg.any():
                x = origins[fg] + t_est[fg, None] * dirs[fg]
                res = float(np.mean(np.abs(distance(x, state, reference))))
            rows.append(BenchRow(v, run.hdq.cutoff, float(np.median(times)), float(np.min(times)),
                                 repetitions, res))
    return rows


def _estimates(state, cfg, origins, dirs):
    """Per-pixel intersection estimate (NaN off the bounds) and hit flags."""
    mask, rays, hit = trace_rays(state, cfg, origins, dirs, normals=False)
    t = np.full(len(origins), np.nan)
    h = np.zeros(len(origins), bool)
    if hit is not None:
        t[mask] = hit.t_estimate
        h[mask] = hit.hit
    return t, h


def bench_csv(rows):
    lines = ["variant,cutoff,median_seconds,min_seconds,repetitions,residual"]
    lines += [f"{r.variant},{r.cutoff:g},{r.median:.4f},{r.minimum:.4f},{r.repetitions},{r.residual:.6e}"
              for r in rows]
    return "\n".join(lines) + "\n"
