"""Skeleton, forward kinematics and linear blend skinning warps.

Points are row vectors with shape ``(..., 3)``.  A bone transform ``G_b`` maps
canonical (rest) space to world space and is stored as a rotation block plus a
translation, so ``G_b(x) = R_b @ x + t_b``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateWarpError, EmptyNeighborhoodError, InvalidNormalError

log = logging.getLogger(__name__)

DEGENERATE_CONDITION = 1e6


# ---------------------------------------------------------------------------
# quaternions, (w, x, y, z) order
# ---------------------------------------------------------------------------

def quat_to_matrix(q):
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def quat_from_axis_angle(axis, angle_deg):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = np.radians(angle_deg) / 2
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def random_quaternions(rng, n):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return q


def nearest_rotation(m):
    """Rotation factor of the polar decomposition of ``m`` (batched)."""
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    flip = np.linalg.det(r) < 0
    if np.any(flip):
        u = u.copy()
        u[flip, :, -1] *= -1
        r = u @ vt
    return r


def _normalize_quats(q, what):
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if q.shape[-1] != 4:
        raise ConfigError(f"{what}: quaternions need 4 components, got shape {q.shape}")
    norms = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norms < 1e-12):
        raise ConfigError(f"{what}: zero-length quaternion")
    return q / norms


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Skeleton:
    """Topologically sorted bone hierarchy in canonical space.

    ``tails`` only feed the skinning-weight falloff; a bone without an explicit
    tail ends at its first child's head, or degenerates to a point if it is a
    leaf.
    """

    parents: tuple
    heads: np.ndarray
    rest_rotations: np.ndarray
    tails: np.ndarray = None
    names: tuple = None

    def __post_init__(self):
        parents = tuple(int(p) for p in self.parents)
        b = len(parents)
        if b == 0:
            raise ConfigError("skeleton has no bones")
        if parents[0] != -1 or any(p == -1 for p in parents[1:]):
            raise ConfigError("skeleton must have exactly one root, at index 0")
        for i, p in enumerate(parents[1:], start=1):
            if not 0 <= p < i:
                raise ConfigError(f"bone {i}: parent {p} is not an earlier bone")
        heads = np.asarray(self.heads, dtype=float).reshape(b, 3)
        rest = _normalize_quats(self.rest_rotations, "rest rotations").reshape(b, 4)
        if self.tails is None:
            tails = heads.copy()
            for i in range(b - 1, 0, -1):
                tails[parents[i]] = heads[i]
        else:
            tails = np.asarray(self.tails, dtype=float).reshape(b, 3)
        names = tuple(self.names) if self.names is not None else tuple(f"bone{i}" for i in range(b))
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "heads", heads)
        object.__setattr__(self, "rest_rotations", rest)
        object.__setattr__(self, "tails", tails)
        object.__setattr__(self, "names", names)

    @property
    def n_bones(self):
        return len(self.parents)

    @classmethod
    def chain(cls, heads, tail=None):
        """Simple chain where bone i is parented to bone i-1."""
        heads = np.asarray(heads, dtype=float)
        n = len(heads)
        tails = None
        if tail is not None:
            tails = np.vstack([heads[1:], np.asarray(tail, dtype=float)[None]])
        return cls(parents=tuple(range(-1, n - 1)), heads=heads,
                   rest_rotations=np.tile([1.0, 0, 0, 0], (n, 1)), tails=tails)


@dataclass(frozen=True, eq=False)
class Pose:
    rotations: np.ndarray
    root_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    frame: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rotations", _normalize_quats(self.rotations, "pose"))
        object.__setattr__(self, "root_translation",
                           np.asarray(self.root_translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls, n_bones, frame=0):
        return cls(np.tile([1.0, 0, 0, 0], (n_bones, 1)), np.zeros(3), frame)

    @property
    def n_bones(self):
        return len(self.rotations)


@dataclass(frozen=True, eq=False)
class BoneTransforms:
    rotations: np.ndarray      # (B, 3, 3)
    translations: np.ndarray   # (B, 3)

    @property
    def n_bones(self):
        return len(self.rotations)

    def matrices(self):
        m = np.zeros((self.n_bones, 4, 4))
        m[:, :3, :3] = self.rotations
        m[:, :3, 3] = self.translations
        m[:, 3, 3] = 1
        return m

    def apply(self, b, x):
        return np.asarray(x) @ self.rotations[b].T + self.translations[b]

    def transformed(self, rotation, translation):
        """Compose a rigid motion on the world side of every bone."""
        rotation = np.asarray(rotation, dtype=float)
        return BoneTransforms(rotation @ self.rotations,
                              self.translations @ rotation.T + np.asarray(translation, dtype=float))


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def pose_transforms(skeleton: Skeleton, pose: Pose) -> BoneTransforms:
    """Forward kinematics.

    Each bone rotates about its own head, with the local rotation expressed in
    the bone's rest frame; parents are composed on the left.
    """
    if pose.n_bones != skeleton.n_bones:
        raise ConfigError(f"pose has {pose.n_bones} rotations for {skeleton.n_bones} bones")
    rest = quat_to_matrix(skeleton.rest_rotations)
    local = quat_to_matrix(pose.rotations)
    rots = np.empty((skeleton.n_bones, 3, 3))
    trans = np.empty((skeleton.n_bones, 3))
    for b, parent in enumerate(skeleton.parents):
        r_loc = rest[b] @ local[b] @ rest[b].T
        head = skeleton.heads[b]
        t_loc = head - r_loc @ head
        if parent < 0:
            rots[b] = r_loc
            trans[b] = t_loc + pose.root_translation
        else:
            rots[b] = rots[parent] @ r_loc
            trans[b] = rots[parent] @ t_loc + trans[parent]
    return BoneTransforms(rots, trans)


def blend_weights(distances, weights, radius=0.075):
    """Softmax-blend per-neighbour skinning weights.

    ``distances`` is ``(..., K)`` and ``weights`` is ``(..., K, B)``.  The
    softmax runs over ``-|d_k| / (2 radius^2)`` so the closest neighbours
    dominate on either side of the surface.
    """
    distances = np.asarray(distances, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if distances.shape[-1] == 0:
        raise EmptyNeighborhoodError("cannot blend weights of an empty neighbourhood")
    logits = -np.abs(distances) / (2 * radius * radius)
    logits = logits - logits.max(axis=-1, keepdims=True)
    s = np.exp(logits)
    s /= s.sum(axis=-1, keepdims=True)
    return np.einsum("...k,...kb->...b", s, weights)


def blend_transforms(w, transforms: BoneTransforms):
    """Linear blend ``sum_b w_b G_b`` as (linear block, translation)."""
    w = np.asarray(w, dtype=float)
    a = np.einsum("...b,bij->...ij", w, transforms.rotations)
    c = w @ transforms.translations
    return a, c


def _inverse3(a):
    # closed form through cross products; batched and branch free
    c0 = np.cross(a[..., 1, :], a[..., 2, :])
    c1 = np.cross(a[..., 2, :], a[..., 0, :])
    c2 = np.cross(a[..., 0, :], a[..., 1, :])
    det = np.einsum("...i,...i->...", a[..., 0, :], c0)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.stack([c0, c1, c2], axis=-1) / det[..., None, None]
    return inv, det


def inverse_blend(x, w, transforms: BoneTransforms):
    """Invert the blended transform at each point.

    Returns ``(x_can, a_inv, condition)`` where ``a_inv`` is the linear block
    of ``T_world`` and ``condition`` a 1-norm condition estimate of the blend
    (``inf`` when singular).  Nothing is raised here; callers decide.
    """
    x = np.asarray(x, dtype=float)
    a, c = blend_transforms(w, transforms)
    a_inv, det = _inverse3(a)
    with np.errstate(invalid="ignore", over="ignore"):
        cond = np.abs(a).sum(axis=-2).max(axis=-1) * np.abs(a_inv).sum(axis=-2).max(axis=-1)
    bad = ~np.isfinite(cond) | (np.abs(det) < 1e-300)
    cond = np.where(bad, np.inf, cond)
    x_can = np.einsum("...ij,...j->...i", a_inv, x - c)
    return x_can, a_inv, cond


def inverse_warp(x, w, transforms: BoneTransforms):
    """World point(s) to canonical space.

    Returns ``(x_can, R_world)``; ``R_world`` is the nearest rotation to the
    linear block of ``(sum_b w_b G_b)^-1``.  Raises ``DegenerateWarpError``
    when any blend is near-singular.
    """
    x_can, a_inv, cond = inverse_blend(x, w, transforms)
    worst = float(np.max(cond))
    if worst > DEGENERATE_CONDITION:
        raise DegenerateWarpError(worst)
    if worst > 1e3:
        log.warning("poorly conditioned skinning blend (cond ~ %.3g)", worst)
    return x_can, nearest_rotation(a_inv)


def forward_skin_point(x_can, w, transforms: BoneTransforms):
    a, c = blend_transforms(w, transforms)
    return np.einsum("...ij,...j->...i", a, np.asarray(x_can, dtype=float)) + c


def rotate_normal_to_world(n_can, r_world):
    n_can = np.asarray(n_can, dtype=float)
    norm = np.linalg.norm(n_can, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise InvalidNormalError("zero-length normal")
    n = np.einsum("...ji,...j->...i", np.asarray(r_world, dtype=float), n_can / norm)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)
