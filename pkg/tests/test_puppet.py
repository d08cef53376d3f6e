import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hdqrender.errors import ConfigError
from hdqrender.fixtures import bent_pose, bulge_displacement, sphere_puppet, two_capsule_puppet, two_material_spheres
from hdqrender.puppet import (DisplacementField, Material, Primitive, PuppetScene, bake_template, canonical_gradient,
                              canonical_sdf, displacement, fd_gradient, material_at, pose_template)
from hdqrender.rig import Pose, Skeleton, inverse_warp, pose_transforms


def test_sphere_sdf_examples():
    s = sphere_puppet(0.5)
    assert canonical_sdf(s, [1.0, 0, 0]) == pytest.approx(0.5)
    assert canonical_sdf(s, [0.0, 0, 0]) == pytest.approx(-0.5)


def test_two_spheres_min_against_dense_samples():
    sc = two_material_spheres(radius=0.3, gap=0.4)
    x = np.array([[0.0, 0.45, 0.1]])
    pts = np.vstack([p.sample_surface(50000) for p in sc.primitives])
    oracle = np.min(np.linalg.norm(pts - x, axis=1))
    assert canonical_sdf(sc, x)[0] == pytest.approx(oracle, abs=5e-3)


def test_rounded_box_sdf_face_and_corner():
    b = Primitive("rounded-box", center=[0.0, 0, 0], half_extents=[0.3, 0.2, 0.1], radius=0.05)
    assert b.sdf(np.array([0.5, 0, 0])) == pytest.approx(0.2)
    corner = np.array([0.25, 0.15, 0.05])
    x = corner + 0.1 * np.ones(3) / np.sqrt(3)
    assert b.sdf(x) == pytest.approx(0.1 - 0.05)


def test_gradient_examples():
    s = sphere_puppet(0.5)
    g, sing = canonical_gradient(s, np.array([[1.0, 0, 0]]))
    assert np.allclose(g, [[1, 0, 0]]) and not sing.any()
    cap = two_capsule_puppet()
    g, _ = canonical_gradient(cap, np.array([[0.25, 0, 0.3]]))
    assert np.allclose(g, [[0, 0, 1]])


def test_gradient_matches_finite_differences(rng):
    sc = two_capsule_puppet()
    tpl = bake_template(sc, 500)
    x = tpl.positions + rng.normal(scale=0.02, size=tpl.positions.shape)
    g, sing = canonical_gradient(sc, x, check=False)
    fd = fd_gradient(sc, x)
    fd /= np.linalg.norm(fd, axis=1, keepdims=True)
    ang = np.degrees(np.arccos(np.clip(np.sum(g * fd, axis=1), -1, 1)))
    assert np.max(ang[~sing]) < 0.5


def test_eikonal_hard_min(rng):
    sc = PuppetScene(Skeleton.chain([[0.0, 0, 0]]), (
        Primitive("sphere", center=[0.0, 0, 0], radius=0.3),
        Primitive("capsule", a=[0.4, 0, 0], b=[0.8, 0, 0], radius=0.1),
        Primitive("rounded-box", center=[0.0, 0.6, 0], half_extents=[0.2, 0.1, 0.1], radius=0.03)))
    x = rng.uniform(-1, 1.2, (10000, 3))
    _, sing = canonical_gradient(sc, x)
    gn = np.linalg.norm(fd_gradient(sc, x[~sing]), axis=1)
    assert (~sing).sum() > 9000
    assert np.max(np.abs(gn - 1)) < 1e-3


def test_displacement_examples(rng):
    x = rng.uniform(-1, 1, (10000, 3))
    assert np.all(displacement(DisplacementField(), bent_pose(45), x) == 0)
    f = bulge_displacement(0.02)
    off = displacement(f, bent_pose(90), x)
    assert np.max(np.linalg.norm(off, axis=1)) <= 0.02 + 1e-15
    assert np.all(displacement(f, Pose.identity(2), x) == 0)
    with pytest.raises(ConfigError):
        DisplacementField("bulge", 0.06)


def test_bake_template_examples():
    s = sphere_puppet()
    t = bake_template(s, 1000)
    assert len(t) == 1000
    assert np.max(np.abs(canonical_sdf(s, t.positions))) < 1e-4
    assert np.all(t.weights == 1.0)
    with pytest.raises(ConfigError):
        bake_template(s, 50)


def test_far_end_weights_favour_owner():
    sc = two_capsule_puppet()
    t = bake_template(sc, 2000)
    # independent falloff evaluation at the forearm tip cap and upper-arm root cap
    tip = t.positions[:, 0] > 0.95
    root = t.positions[:, 0] < 0.05
    assert tip.any() and root.any()
    assert np.all(t.weights[tip, 1] > 0.99)
    assert np.all(t.weights[root, 0] > 0.99)
    p = t.positions[tip]
    d0 = np.linalg.norm(p - np.clip(p[:, :1], 0, 0.5) * [1, 0, 0], axis=1)
    d1 = np.linalg.norm(p - np.clip(p[:, :1], 0.5, 1.0) * [1, 0, 0], axis=1)
    e0, e1 = np.exp(-d0 ** 2 / 0.02), np.exp(-d1 ** 2 / 0.02)
    assert np.allclose(t.weights[tip, 1], e1 / (e0 + e1))


def test_template_normals_align_with_gradient():
    sc = two_capsule_puppet()
    t = bake_template(sc, 1000)
    fd = fd_gradient(sc, t.positions)
    fd /= np.linalg.norm(fd, axis=1, keepdims=True)
    ang = np.degrees(np.arccos(np.clip(np.sum(fd * t.normals, axis=1), -1, 1)))
    assert np.max(ang) < 2.0


def test_smooth_min_drops_swallowed_points():
    sk = Skeleton.chain([[0.0, 0, 0]])
    sc = PuppetScene(sk, (Primitive("sphere", center=[0.0, 0, 0], radius=0.3),
                          Primitive("sphere", center=[0.25, 0, 0], radius=0.2)), "smooth", 0.05)
    t = bake_template(sc, 500)
    assert np.max(np.abs(canonical_sdf(sc, t.positions))) < 1e-4
    assert len(t) < 1000


def test_pose_template_examples():
    sc = two_capsule_puppet()
    t = bake_template(sc, 500)
    ident = pose_template(t, pose_transforms(sc.skeleton, Pose.identity(2)))
    assert np.allclose(ident.positions, t.positions)
    assert np.allclose(ident.normals, t.normals)
    shift = pose_template(t, pose_transforms(sc.skeleton, Pose(np.tile([1.0, 0, 0, 0], (2, 1)), [0.1, 0.2, 0.3])))
    assert np.allclose(shift.positions, t.positions + [0.1, 0.2, 0.3])


def test_elbow_bend_hand_composed():
    sc = two_capsule_puppet()
    t = bake_template(sc, 500)
    g = pose_transforms(sc.skeleton, bent_pose(90))
    posed = pose_template(t, g)
    c, s = 0.0, 1.0
    r = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    # bone 0 is identity, bone 1 rotates about the elbow at (0.5, 0, 0)
    m1 = r @ (t.positions - [0.5, 0, 0]).T
    expected = t.weights[:, :1] * t.positions + t.weights[:, 1:] * (m1.T + [0.5, 0, 0])
    assert np.allclose(posed.positions, expected, atol=1e-12)


def test_bake_pose_unpose_round_trip():
    sc = two_capsule_puppet()
    t = bake_template(sc, 500)
    g = pose_transforms(sc.skeleton, bent_pose(60))
    posed = pose_template(t, g)
    back, _ = inverse_warp(posed.positions, posed.weights, g)
    assert np.max(np.abs(back - posed.canonical)) < 1e-6


def test_material_lookup():
    sc = two_material_spheres()
    a, r = material_at(sc, np.array([[0.6, 0, 0], [-0.6, 0, 0], [0.0, 0.3, 0]]))
    assert np.allclose(a[0], sc.primitives[1].material.albedo)
    assert np.allclose(a[1], sc.primitives[0].material.albedo)
    # the tangent point is equidistant: lower id wins
    assert np.allclose(a[2], sc.primitives[0].material.albedo)
    s = sphere_puppet()
    a, r = material_at(s, np.random.default_rng(0).normal(size=(20, 3)))
    assert np.allclose(a, 0.5) and np.allclose(r, 0.5)


@pytest.mark.parametrize("kw", [dict(albedo=(1.2, 0, 0)), dict(roughness=0.0), dict(roughness=1.5)])
def test_material_ranges(kw):
    with pytest.raises(ConfigError):
        Material(**kw)


def test_primitive_validation():
    with pytest.raises(ConfigError):
        Primitive("sphere", center=[0.0, 0, 0], radius=0)
    with pytest.raises(ConfigError):
        Primitive("capsule", a=[0.0, 0, 0], b=[0.0, 0, 0])
    with pytest.raises(ConfigError):
        Primitive("cone", center=[0.0, 0, 0])


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 1.0), st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_sphere_sdf_property(r, p):
    s = sphere_puppet(r)
    assert canonical_sdf(s, np.array(p)) == pytest.approx(np.linalg.norm(p) - r, abs=1e-12)
