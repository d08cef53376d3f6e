"""JSON scene, pose and render-config files.

Errors carry ``path:line`` context.  JSON syntax errors report the parser's
line; schema errors point at the first line mentioning the offending key.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .fixtures import FIXTURES
from .puppet import DisplacementField, Material, Primitive, PuppetScene
from .rig import Pose, Skeleton, quat_from_axis_angle


class _Doc:
    """Parsed JSON plus its source text, for error locations."""

    def __init__(self, text, path):
        self.text = text
        self.path = str(path) if path is not None else "<string>"
        try:
            self.data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{self.path}:{e.lineno}: invalid JSON: {e.msg}") from None

    def line_of(self, key):
        m = re.search(r'"%s"\s*:' % re.escape(str(key)), self.text)
        return self.text.count("\n", 0, m.start()) + 1 if m else 1

    def fail(self, key, msg):
        raise ConfigError(f"{self.path}:{self.line_of(key)}: {msg}")


def _read(path):
    try:
        return Path(path).read_text()
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e.strerror}", path=str(path)) from None


def _wrap(doc, key, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (ConfigError, TypeError, ValueError, KeyError) as e:
        doc.fail(key, f"{key}: {e}")


# ---------------------------------------------------------------------------
# scene
# ---------------------------------------------------------------------------

def _material(d):
    d = d or {}
    return Material(tuple(d.get("albedo", (0.5, 0.5, 0.5))), float(d.get("roughness", 0.5)))


def _primitive(d):
    kw = {k: d[k] for k in ("center", "a", "b", "half_extents") if k in d}
    return Primitive(d["kind"], int(d.get("bone", 0)), _material(d.get("material")),
                     radius=float(d.get("radius", 0.1)), **kw)


def _skeleton(d):
    heads = np.asarray(d["heads"], dtype=float)
    n = len(heads)
    parents = d.get("parents", list(range(-1, n - 1)))
    rest = d.get("rest_rotations", [[1.0, 0, 0, 0]] * n)
    return Skeleton(tuple(parents), heads, np.asarray(rest, dtype=float),
                    None if d.get("tails") is None else np.asarray(d["tails"], dtype=float),
                    d.get("names"))


def _pose(d, n_bones, default_frame=0):
    if "rotations" in d:
        rot = np.asarray(d["rotations"], dtype=float)
    else:
        rot = np.tile([1.0, 0, 0, 0], (n_bones, 1))
        # {"bone": i, "axis": [...], "angle_deg": a} entries
        for r in d.get("axis_angle", []):
            rot[int(r["bone"])] = quat_from_axis_angle(r["axis"], r["angle_deg"])
    if rot.shape != (n_bones, 4):
        raise ConfigError(f"pose needs {n_bones} quaternions, got shape {rot.shape}")
    return Pose(rot, np.asarray(d.get("root_translation", [0.0, 0, 0]), dtype=float),
                int(d.get("frame", default_frame)))


def parse_scene(text, path=None):
    """``(scene, poses)`` from JSON text; ``poses`` may be empty."""
    doc = _Doc(text, path)
    d = doc.data
    if not isinstance(d, dict):
        raise ConfigError(f"{doc.path}:1: scene file must hold a JSON object")
    for key in ("skeleton", "primitives"):
        if key not in d:
            raise ConfigError(f"{doc.path}:1: missing required key {key!r}")
    skel = _wrap(doc, "skeleton", _skeleton, d["skeleton"])
    prims = tuple(_wrap(doc, "primitives", _primitive, p) for p in d["primitives"])
    disp = _wrap(doc, "displacement", lambda: DisplacementField(**d.get("displacement", {})))
    scene = _wrap(doc, "combine", PuppetScene, skel, prims, d.get("combine", "min"),
                  float(d.get("smooth_k", 0.0)), disp)
    poses = [_wrap(doc, "poses", _pose, p, skel.n_bones, i) for i, p in enumerate(d.get("poses", []))]
    return scene, poses


def load_scene(path):
    return parse_scene(_read(path), path)


def _arr(a):
    return None if a is None else np.asarray(a, dtype=float).tolist()


def scene_to_dict(scene: PuppetScene, poses=()):
    sk = scene.skeleton
    prims = []
    for p in scene.primitives:
        e = {"kind": p.kind, "bone": p.bone, "radius": p.radius,
             "material": {"albedo": list(p.material.albedo), "roughness": p.material.roughness}}
        for k in ("center", "a", "b", "half_extents"):
            if getattr(p, k) is not None:
                e[k] = _arr(getattr(p, k))
        prims.append(e)
    disp = scene.displacement
    return {
        "skeleton": {"parents": list(sk.parents), "heads": _arr(sk.heads),
                     "rest_rotations": _arr(sk.rest_rotations), "tails": _arr(sk.tails),
                     "names": list(sk.names)},
        "primitives": prims,
        "combine": scene.combine,
        "smooth_k": scene.smooth_k,
        "displacement": {"kind": disp.kind, "amplitude": disp.amplitude, "bone": disp.bone,
                         "center": list(disp.center), "radius": disp.radius,
                         "direction": list(disp.direction)},
        "poses": [{"frame": p.frame, "rotations": _arr(p.rotations),
                   "root_translation": _arr(p.root_translation)} for p in poses],
    }


def save_scene(path, scene, poses=()):
    Path(path).write_text(json.dumps(scene_to_dict(scene, poses), indent=2) + "\n")


def load_poses(path, n_bones):
    """Animation file: a JSON list of poses (or ``{"poses": [...]}``)."""
    doc = _Doc(_read(path), path)
    d = doc.data
    items = d.get("poses") if isinstance(d, dict) else d
    if not isinstance(items, list) or not items:
        raise ConfigError(f"{doc.path}:1: pose file must contain a non-empty list of poses")
    return [_wrap(doc, "rotations", _pose, p, n_bones, i) for i, p in enumerate(items)]


def resolve_scene(ref, base=None):
    """``fixture:<name>`` or a scene-file path, relative to ``base``."""
    if isinstance(ref, str) and ref.startswith("fixture:"):
        name = ref.split(":", 1)[1]
        if name not in FIXTURES:
            raise ConfigError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}")
        scene, pose = FIXTURES[name]()
        return scene, [pose] if pose is not None else []
    p = Path(ref)
    if base is not None and not p.is_absolute():
        p = Path(base) / p
    return load_scene(p)


# ---------------------------------------------------------------------------
# render config
# ---------------------------------------------------------------------------

def load_config(path):
    """Raw render-config dict with relative paths resolved against the file."""
    doc = _Doc(_read(path), path)
    if not isinstance(doc.data, dict):
        raise ConfigError(f"{doc.path}:1: config file must hold a JSON object")
    cfg = dict(doc.data)
    base = Path(path).parent
    for key in ("scene", "probe", "output", "poses"):
        v = cfg.get(key)
        if isinstance(v, str) and not v.startswith("fixture:") and not Path(v).is_absolute():
            cfg[key] = str(base / v)
    cfg["_doc"] = doc
    return cfg
