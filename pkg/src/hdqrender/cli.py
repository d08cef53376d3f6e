"""Command-line entry point: ``hdqrender {render,ablate,bench,fit-probe,hdq probe}``.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, HdqError
from .hdq import HdqConfig, HdqState, query
from .imageio import read_pfm, read_probe, write_image, write_pfm, write_probe
from .knn import gs_knn
from .render import (CUTOFF_SWEEP, MODES, RENDER_VARIANTS, VIS_KINDS, Camera, RenderConfig, ablate,
                     ablation_csv, bench, bench_csv, render_frame)
from .rig import Pose
from .scenefile import _Doc, _read, load_config, load_poses, resolve_scene
from .trace import TraceConfig

log = logging.getLogger("hdqrender")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_INVARIANT = 0, 2, 3, 4


def _threads(value):
    if value is not None:
        return value
    env = os.environ.get("HDQ_THREADS")
    if env is None:
        return 1
    try:
        n = int(env)
    except ValueError:
        raise ConfigError(f"HDQ_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise ConfigError("HDQ_THREADS must be >= 1")
    return n


def _config(args):
    """Merge the optional config file with command-line overrides."""
    cfg = load_config(args.config) if getattr(args, "config", None) else {}
    for key in ("scene", "probe", "output", "poses", "mode", "vis", "variant"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if getattr(args, "gamma", False):
        cfg["gamma"] = True
    trace = dict(cfg.get("trace", {}))
    hdq = dict(cfg.get("hdq", {}))
    if getattr(args, "nst", None) is not None:
        trace["steps"] = args.nst
    if getattr(args, "cutoff", None) is not None:
        hdq["cutoff"] = args.cutoff
        hdq.setdefault("vis_cutoff", min(HdqConfig.vis_cutoff, args.cutoff))
    cfg["trace"], cfg["hdq"] = trace, hdq
    if getattr(args, "pose_frame", None) is not None:
        cfg["pose_frame"] = args.pose_frame
    cam = dict(cfg.get("camera", {}))
    for k in ("width", "height"):
        if getattr(args, k, None) is not None:
            cam[k] = getattr(args, k)
    cfg["camera"] = cam
    if "scene" not in cfg:
        raise ConfigError("no scene given (use --scene or a config file)")
    return cfg


def _pick_pose(scene, poses, frame):
    if frame is None:
        return poses[0] if poses else Pose.identity(scene.skeleton.n_bones)
    for p in poses:
        if p.frame == frame:
            return p
    if not poses and frame == 0:
        return Pose.identity(scene.skeleton.n_bones)
    raise ConfigError(f"no pose with frame {frame}")


def _build(cfg):
    scene, poses = resolve_scene(cfg["scene"])
    if cfg.get("poses"):
        poses = load_poses(cfg["poses"], scene.skeleton.n_bones)
    pose = _pick_pose(scene, poses, cfg.get("pose_frame"))
    try:
        trace = TraceConfig(**cfg["trace"])
        hdq = HdqConfig(**cfg["hdq"])
    except TypeError as e:
        raise ConfigError(f"bad trace/hdq override: {e}") from None
    state = HdqState(scene, pose)
    cam_d = dict(cfg["camera"])
    if "position" in cam_d:
        try:
            camera = Camera(**cam_d)
        except TypeError as e:
            raise ConfigError(f"bad camera: {e}") from None
    else:
        lo, hi = state.bounds()
        camera = Camera.framing(lo, hi, cam_d.get("width", 64), cam_d.get("height", 64),
                                cam_d.get("fov", 35.0))
    rc = RenderConfig(camera, cfg.get("mode", "relit"), cfg.get("vis", "soft"), cfg.get("variant", "full"),
                      trace, hdq, specular=bool(cfg.get("specular", True)))
    probe = read_probe(cfg["probe"]) if cfg.get("probe") else None
    return scene, poses, state, rc, probe


def cmd_render(args):
    cfg = _config(args)
    _, _, state, rc, probe = _build(cfg)
    frame = render_frame(state, rc, probe, _threads(args.threads))
    out = cfg.get("output")
    if out:
        out = Path(out)
        if out.suffix.lower() == ".png":
            write_image(out, frame.image, gamma=bool(cfg.get("gamma", False)))
        else:
            write_image(out, frame.image)
            write_pfm(out.with_name(out.stem + ".alpha.pfm"), frame.coverage)
        if args.preview:
            write_image(args.preview, frame.image, gamma=True)
    print(frame.summary())
    return EXIT_OK


def cmd_ablate(args):
    cfg = _config(args)
    _, _, state, rc, _ = _build(cfg)
    variants = tuple(args.variants.split(",")) if args.variants else RENDER_VARIANTS
    for v in variants:
        if v not in RENDER_VARIANTS:
            raise ConfigError(f"unknown variant {v!r}")
    rows = ablate(state, rc.camera, variants, rc.trace, rc.hdq)
    text = ablation_csv(rows)
    if args.csv:
        Path(args.csv).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_bench(args):
    cfg = _config(args)
    _, _, state, rc, probe = _build(cfg)
    variants = tuple(args.variants.split(",")) if args.variants else None
    cutoffs = CUTOFF_SWEEP if args.cutoff_sweep else None
    rows = bench(state, rc, probe, variants, args.repetitions, cutoffs, _threads(args.threads))
    text = bench_csv(rows)
    by = {r.variant: r.median for r in rows if r.cutoff == rc.hdq.cutoff}
    if "full" in by and "dense-march" in by and by["full"] > 0:
        text += f"# dense-march / full median ratio: {by['dense-march'] / by['full']:.2f}\n"
    if args.csv:
        Path(args.csv).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def _cameras(path):
    doc = _Doc(_read(path), path)
    items = doc.data.get("cameras") if isinstance(doc.data, dict) else doc.data
    if not isinstance(items, list) or not items:
        raise ConfigError(f"{path}:1: camera file needs a non-empty list")
    try:
        return [Camera(**c) for c in items]
    except TypeError as e:
        doc.fail("position", f"bad camera: {e}")


def cmd_fit_probe(args):
    from .probefit import collect_observations, fit_probe

    cfg = _config(args)
    scene, poses = resolve_scene(cfg["scene"])
    if cfg.get("poses"):
        poses = load_poses(cfg["poses"], scene.skeleton.n_bones)
    if not poses:
        poses = [Pose.identity(scene.skeleton.n_bones)]
    cams = _cameras(args.cameras)
    images = [read_pfm(p) for p in args.images]
    rc = RenderConfig(cams[0], "relit", cfg.get("vis", "soft"), "full", TraceConfig(**cfg["trace"]),
                      HdqConfig(**cfg["hdq"]), specular=bool(cfg.get("specular", True)))
    obs = collect_observations(scene, poses, cams, images, rc, args.max_px, args.seed)
    report = fit_probe(obs, args.ridge)
    write_probe(args.output, report.probe)
    text = report.text() + "\n"
    if args.report:
        Path(args.report).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_hdq_probe(args):
    cfg = _config(args)
    _, _, state, rc, _ = _build(cfg)
    x = np.asarray(args.point, dtype=float)[None]
    s = query(x, state, rc.hdq, with_rotation=True)
    print(s.describe(0))
    if args.knn:
        print(gs_knn(x, state.index, state.posed, rc.hdq.k, rc.hdq.geodesic_threshold).dump(0))
    return EXIT_OK


def _common(p, config=True):
    if config:
        p.add_argument("--config", help="JSON render config")
    p.add_argument("--scene", help="scene JSON or fixture:<name>")
    p.add_argument("--poses", help="animation JSON (list of poses)")
    p.add_argument("--pose-frame", type=int, dest="pose_frame")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--variant", choices=RENDER_VARIANTS)
    p.add_argument("--vis", choices=VIS_KINDS)
    p.add_argument("--nst", type=int, help="sphere-tracing steps")
    p.add_argument("--cutoff", type=float, help="hierarchical cut-off")
    p.add_argument("--probe", help="probe image (.pfm or .hdr)")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    ap = argparse.ArgumentParser(prog="hdqrender", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render one frame")
    _common(p)
    p.add_argument("-o", "--output")
    p.add_argument("--gamma", action="store_true", help="gamma 2.2 for PNG output")
    p.add_argument("--preview", help="extra gamma-corrected PNG")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("ablate", help="intersection accuracy per variant")
    _common(p)
    p.add_argument("--variants", help="comma-separated subset")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench", help="frame timing")
    _common(p)
    p.add_argument("--variants", help="comma-separated subset")
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--cutoff-sweep", action="store_true")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("fit-probe", help="fit a light probe to rendered frames")
    _common(p)
    p.add_argument("--cameras", required=True, help="JSON list of cameras")
    p.add_argument("--images", nargs="+", required=True, help="PFM frames, pose-major order")
    p.add_argument("--ridge", type=float, default=1e-4)
    p.add_argument("--max-px", type=int, dest="max_px")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_fit_probe)

    p = sub.add_parser("hdq", help="distance-query debugging")
    hsub = p.add_subparsers(dest="hdq_command", required=True)
    q = hsub.add_parser("probe", help="print one distance query")
    _common(q)
    q.add_argument("--point", type=float, nargs=3, required=True)
    q.add_argument("--knn", action="store_true", help="also dump the neighbours")
    q.set_defaults(func=cmd_hdq_probe)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    except HdqError as e:
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
