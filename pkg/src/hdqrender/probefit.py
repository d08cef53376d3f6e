"""Light-probe estimation from rendered pixels.

The rendered radiance is linear in the probe, so every foreground pixel
gives one linear equation per channel; the probe is the ridge-regularised
least-squares solution of the stacked system.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, SolverError
from .hdq import HdqState
from .render import RenderConfig, pixel_transfer, shading_inputs
from .shade import PROBE_H, PROBE_W, LightProbe

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Observation:
    row: np.ndarray        # (H*W, 3) texel weights
    target: np.ndarray     # (3,) observed radiance
    frame: int = 0
    pixel: int = -1

    def __post_init__(self):
        row = np.asarray(self.row, dtype=float)
        if row.ndim == 1:
            row = np.repeat(row[:, None], 3, axis=1)
        if not np.all(np.isfinite(row)) or np.any(row < 0):
            raise ConfigError("transfer rows must be finite and non-negative")
        object.__setattr__(self, "row", row)
        object.__setattr__(self, "target", np.asarray(self.target, dtype=float).reshape(3))


@dataclass(frozen=True, eq=False)
class FitReport:
    probe: LightProbe
    residual_rms: np.ndarray     # per channel, fitted (clamped) probe
    condition: float             # largest per-channel condition number of the normal matrix
    n_observations: int
    coverage: np.ndarray         # (H*W,) texel transfer weight relative to the best-observed texel
    clamped: int                 # texels raised to 0 after the solve
    ridge: float

    def text(self):
        c = self.coverage
        return "\n".join([
            f"observations: {self.n_observations}",
            f"ridge: {self.ridge:g}",
            "residual_rms: " + " ".join(f"{v:.6e}" for v in self.residual_rms),
            f"condition: {self.condition:.4e}",
            f"clamped_texels: {self.clamped}",
            f"texels_with_1pct_coverage: {int((c >= 0.01).sum())}",
            f"unobserved_texels: {int((c == 0).sum())}",
        ])


def _stack(observations):
    obs = list(observations)
    if not obs:
        raise ConfigError("no observations")
    rows = np.stack([o.row for o in obs])
    targets = np.stack([o.target for o in obs])
    return rows, targets


def collect_observations(scene, poses, cameras, images, cfg: RenderConfig = None, max_px=None, seed=0,
                         states=None):
    """One observation per sampled foreground pixel of each ``(pose, camera)``.

    ``images[i]`` is the observed ``(H, W, 3)`` frame for the i-th pair in
    pose-major order.  Geometry and materials come from ``scene``.
    """
    pairs = [(p, c) for p in poses for c in cameras]
    if len(images) != len(pairs):
        raise ConfigError(f"expected {len(pairs)} images, got {len(images)}")
    rng = np.random.default_rng(seed)
    out = []
    cache = dict(states or {})
    for i, ((pose, cam), img) in enumerate(zip(pairs, images)):
        key = id(pose)
        if key not in cache:
            cache[key] = HdqState(scene, pose)
        state = cache[key]
        run = replace(cfg, camera=cam) if cfg is not None else RenderConfig(cam)
        if run.mode != "relit":
            raise ConfigError("probe fitting needs relit observations")
        img = np.asarray(img, dtype=float).reshape(-1, 3)
        if len(img) != cam.width * cam.height:
            raise ConfigError(f"image {i} does not match the camera resolution")
        origins, dirs = cam.rays()
        pix = np.arange(len(origins))
        si = shading_inputs(state, run, origins, dirs, pix)
        if max_px is not None and len(si.pixels) > max_px:
            keep = np.sort(rng.choice(len(si.pixels), max_px, replace=False))
            si = type(si)(si.pixels[keep], si.x[keep], si.normal[keep], si.wo[keep], si.albedo[keep],
                          si.roughness[keep], si.residual[keep], si.failures)
        if len(si.pixels) == 0:
            continue
        rows = pixel_transfer(state, run, si)
        out.extend(Observation(r, img[p], i, int(p)) for r, p in zip(rows, si.pixels))
    if not out:
        raise ConfigError("no foreground pixels in any view")
    return out


def fit_probe(observations, ridge=1e-4, H=PROBE_H, W=PROBE_W) -> FitReport:
    """Per-channel ridge least squares on the normal equations, then clamp at 0."""
    if ridge < 0:
        raise ConfigError("ridge must be >= 0")
    rows, targets = _stack(observations)
    T = rows.shape[1]
    if T != H * W:
        raise ConfigError(f"rows have {T} texels, expected {H * W}")
    L = np.zeros((T, 3))
    cond = 0.0
    for c in range(3):
        A = np.ascontiguousarray(rows[:, :, c])
        M = A.T @ A + ridge * np.eye(T)
        rhs = A.T @ targets[:, c]
        if ridge == 0 and np.linalg.matrix_rank(M) < T:
            raise SolverError("normal matrix is rank deficient; use a positive ridge")
        cond = max(cond, float(np.linalg.cond(M)))
        try:
            L[:, c] = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError as e:
            raise SolverError(f"normal-equation solve failed: {e}") from None
    clamped = int((L < 0).any(axis=1).sum())
    L = np.clip(L, 0.0, None)
    probe = LightProbe(L.reshape(H, W, 3))
    weight = rows.sum(axis=2).sum(axis=0)
    top = weight.max()
    coverage = weight / top if top > 0 else np.zeros(T)
    res = reconstruction_error(probe, observations)
    return FitReport(probe, res, cond, len(rows), coverage, clamped, ridge)


def reconstruction_error(probe: LightProbe, observations):
    """RMS per channel of ``row . probe - target``."""
    rows, targets = _stack(observations)
    pred = np.einsum("ntc,tc->nc", rows, probe.flat())
    return np.sqrt(np.mean((pred - targets) ** 2, axis=0))


def probe_error(fitted: LightProbe, truth: LightProbe, coverage, min_coverage=0.01):
    """Relative RMS error over texels with at least ``min_coverage`` of the weight."""
    sel = np.asarray(coverage) >= min_coverage
    if not sel.any():
        raise ConfigError("no texel reaches the coverage threshold")
    a = fitted.flat()[sel]
    b = truth.flat()[sel]
    return float(np.sqrt(np.mean((a - b) ** 2)) / np.sqrt(np.mean(b ** 2)))
