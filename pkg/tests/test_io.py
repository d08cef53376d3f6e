import json

import numpy as np
import pytest
from PIL import Image

from hdqrender.errors import ConfigError, FormatError
from hdqrender.fixtures import FIXTURES, bent_pose
from hdqrender.imageio import (decode_hdr, decode_pfm, encode_hdr, encode_pfm, read_pfm, read_probe, resample_probe,
                               to_srgb8, write_hdr, write_image, write_pfm, write_probe)
from hdqrender.puppet import canonical_sdf
from hdqrender.scenefile import load_config, load_poses, load_scene, parse_scene, resolve_scene, save_scene
from hdqrender.shade import LightProbe


def test_pfm_round_trip_bitwise(tmp_path, rng):
    img = rng.normal(size=(16, 32, 3)).astype(np.float32)
    write_pfm(tmp_path / "a.pfm", img)
    back = read_pfm(tmp_path / "a.pfm")
    assert back.dtype == np.float32 and back.tobytes() == img.tobytes()
    grey = rng.random((17, 5)).astype(np.float32)
    assert decode_pfm(encode_pfm(grey)).tobytes() == grey.tobytes()


def test_pfm_rows_bottom_up():
    img = np.zeros((2, 1, 3), np.float32)
    img[0] = 1.0
    data = encode_pfm(img)
    body = np.frombuffer(data[-24:], "<f4")
    assert np.all(body[:3] == 0) and np.all(body[3:] == 1)


def test_pfm_big_endian_read():
    vals = np.array([1.5, -2.0, 3.25], ">f4")
    data = b"Pf\n3 1\n1.0\n" + vals.tobytes()
    assert np.allclose(decode_pfm(data), [[1.5, -2.0, 3.25]])


@pytest.mark.parametrize("data,offset", [
    (b"P6\n1 1\n-1.0\n" + b"\0" * 12, 0),
    (b"PF\n1 x\n-1.0\n" + b"\0" * 12, 5),
    (b"PF\n1 1\n0.0\n" + b"\0" * 12, 7),
    (b"PF\n2 2\n-1.0\n" + b"\0" * 12, 24),
    (b"PF\n", 3),
])
def test_pfm_errors_carry_offset(data, offset):
    with pytest.raises(FormatError) as e:
        decode_pfm(data, path="x.pfm")
    assert e.value.offset == offset
    assert f"byte {offset}" in str(e.value) and "x.pfm" in str(e.value)


def test_hdr_uniform_one_and_codec(rng):
    img = np.ones((16, 32, 3))
    for rle in (True, False):
        back = decode_hdr(encode_hdr(img, rle))
        assert np.all(np.abs(back - 1.0) <= 1e-3)
    # general values: RGBE keeps 8 mantissa bits relative to the brightest channel
    img = rng.random((9, 40, 3)) * 10
    back = decode_hdr(encode_hdr(img))
    assert np.all(np.abs(back - img) <= img.max(axis=2, keepdims=True) / 128)
    assert np.array_equal(decode_hdr(encode_hdr(img, True)), decode_hdr(encode_hdr(img, False)))


def test_hdr_errors():
    with pytest.raises(FormatError):
        decode_hdr(b"nope")
    good = encode_hdr(np.ones((4, 16, 3)))
    with pytest.raises(FormatError) as e:
        decode_hdr(good[:-10])
    assert e.value.offset is not None
    with pytest.raises(FormatError):
        decode_hdr(b"#?RADIANCE\nFORMAT=32-bit_rle_xyze\n\n-Y 1 +X 1\n\0\0\0\0")


def test_png_gamma():
    assert to_srgb8(np.array([1.0]))[0] == 255
    assert to_srgb8(np.array([0.0]))[0] == 0
    assert to_srgb8(np.array([0.5]))[0] == round(255 * 0.5 ** (1 / 2.2))
    assert to_srgb8(np.array([0.5]), gamma=False)[0] == 128


def test_write_image_dispatch(tmp_path):
    img = np.full((16, 16, 3), 1.0)
    write_image(tmp_path / "a.png", img, gamma=True)
    assert np.all(np.asarray(Image.open(tmp_path / "a.png")) == 255)
    write_image(tmp_path / "a.hdr", img)
    write_image(tmp_path / "a.pfm", img)
    with pytest.raises(FormatError):
        write_image(tmp_path / "a.bmp", img)


def test_probe_io(tmp_path, rng):
    p = LightProbe(rng.random((16, 32, 3)))
    write_probe(tmp_path / "p.pfm", p)
    q = read_probe(tmp_path / "p.pfm")
    assert np.array_equal(q.radiance, p.radiance.astype(np.float32))
    write_hdr(tmp_path / "u.hdr", np.ones((32, 64, 3)))
    with pytest.warns(UserWarning, match="resampling"):
        u = read_probe(tmp_path / "u.hdr")
    assert u.shape == (16, 32) and np.allclose(u.radiance, 1.0, atol=1e-3)
    with pytest.raises(FormatError):
        read_probe(tmp_path / "p.exr")


def test_resample_preserves_smooth_field():
    h, w = 64, 128
    th = np.pi * (np.arange(h) + 0.5) / h
    img = np.repeat(np.cos(th)[:, None, None], w, axis=1).repeat(3, axis=2)
    out = resample_probe(img)
    th16 = np.pi * (np.arange(16) + 0.5) / 16
    assert np.allclose(out[:, 0, 0], np.cos(th16), atol=0.01)
    # azimuth wraps: a constant-in-row map stays constant across columns
    assert np.allclose(out, out[:, :1])


SCENE = """{
  "skeleton": {"heads": [[0, 0, 0], [0.5, 0, 0]], "tails": [[0.5, 0, 0], [1.0, 0, 0]]},
  "primitives": [
    {"kind": "capsule", "bone": 0, "a": [0, 0, 0], "b": [0.5, 0, 0], "radius": 0.1},
    {"kind": "capsule", "bone": 1, "a": [0.5, 0, 0], "b": [1.0, 0, 0], "radius": 0.1,
     "material": {"albedo": [0.2, 0.3, 0.7], "roughness": 0.8}}
  ],
  "poses": [
    {"frame": 0, "axis_angle": [{"bone": 1, "axis": [0, 0, 1], "angle_deg": 45}]}
  ]
}
"""


def test_parse_scene_and_round_trip(tmp_path, rng):
    sc, poses = parse_scene(SCENE)
    assert sc.skeleton.n_bones == 2 and len(sc.primitives) == 2
    assert np.allclose(poses[0].rotations, bent_pose(45).rotations)
    save_scene(tmp_path / "s.json", sc, poses)
    sc2, poses2 = load_scene(tmp_path / "s.json")
    x = rng.uniform(-1, 1, (100, 3))
    assert np.array_equal(canonical_sdf(sc, x), canonical_sdf(sc2, x))
    assert np.array_equal(poses[0].rotations, poses2[0].rotations)
    assert sc2.primitives[1].material == sc.primitives[1].material


def test_fixture_round_trip(tmp_path, rng):
    for name, make in FIXTURES.items():
        sc, pose = make()
        save_scene(tmp_path / f"{name}.json", sc, [pose] if pose is not None else [])
        sc2, _ = load_scene(tmp_path / f"{name}.json")
        x = rng.uniform(-1, 1, (50, 3))
        assert np.array_equal(canonical_sdf(sc, x), canonical_sdf(sc2, x))
        assert sc2.displacement == sc.displacement


def test_scene_errors_have_line_numbers(tmp_path):
    bad = SCENE.replace('"radius": 0.1,\n     "material"', '"radius": -0.1,\n     "material"')
    with pytest.raises(ConfigError, match=r"<string>:\d+:"):
        parse_scene(bad)
    with pytest.raises(ConfigError, match=r"s.json:3: invalid JSON"):
        (tmp_path / "s.json").write_text('{\n "skeleton": {},\n ,\n}')
        load_scene(tmp_path / "s.json")
    with pytest.raises(ConfigError, match="missing required key"):
        parse_scene('{"skeleton": {"heads": [[0,0,0]]}}')
    with pytest.raises(FormatError):
        load_scene(tmp_path / "missing.json")


def test_poses_file(tmp_path):
    (tmp_path / "p.json").write_text(json.dumps([
        {"frame": 3, "rotations": [[1, 0, 0, 0], [1, 0, 0, 0]]},
        {"axis_angle": [{"bone": 1, "axis": [0, 0, 1], "angle_deg": 90}]}]))
    poses = load_poses(tmp_path / "p.json", 2)
    assert [p.frame for p in poses] == [3, 1]
    with pytest.raises(ConfigError):
        load_poses(tmp_path / "p.json", 3)
    (tmp_path / "e.json").write_text("[]")
    with pytest.raises(ConfigError):
        load_poses(tmp_path / "e.json", 2)


def test_resolve_and_config(tmp_path):
    sc, poses = resolve_scene("fixture:two-capsule")
    assert len(poses) == 1
    with pytest.raises(ConfigError):
        resolve_scene("fixture:nope")
    (tmp_path / "scene.json").write_text(SCENE)
    (tmp_path / "cfg.json").write_text(json.dumps({"scene": "scene.json", "mode": "normal"}))
    cfg = load_config(tmp_path / "cfg.json")
    assert cfg["scene"] == str(tmp_path / "scene.json")
    sc, _ = resolve_scene(cfg["scene"])
    assert len(sc.primitives) == 2
