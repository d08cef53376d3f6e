import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hdqrender.errors import ConfigError, DegenerateWarpError, EmptyNeighborhoodError, InvalidNormalError
from hdqrender.rig import (BoneTransforms, Pose, Skeleton, blend_weights, forward_skin_point, inverse_warp,
                           nearest_rotation, pose_transforms, quat_from_axis_angle, quat_to_matrix,
                           random_quaternions, rotate_normal_to_world)


def rot_z(deg):
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def one_bone():
    return Skeleton.chain([[0.0, 0, 0]], tail=[1.0, 0, 0])


def test_identity_pose_gives_identity_transforms():
    sk = Skeleton.chain([[0.0, 0, 0], [0.5, 0, 0], [1.0, 0, 0]])
    g = pose_transforms(sk, Pose.identity(3))
    assert np.allclose(g.matrices(), np.eye(4))


def test_single_bone_rotation_about_z():
    g = pose_transforms(one_bone(), Pose([quat_from_axis_angle([0, 0, 1], 90)]))
    assert np.allclose(g.apply(0, [1.0, 0, 0]), [0, 1, 0])


def test_child_inherits_parent_rotation():
    sk = Skeleton.chain([[0.0, 0, 0], [0.5, 0, 0]])
    q = quat_from_axis_angle([0, 0, 1], 90)
    g = pose_transforms(sk, Pose([q, [1.0, 0, 0, 0]]))
    # hand-composed: child rotates about its own head, which is identity here
    m = g.matrices()
    assert np.allclose(m[1], m[0])
    assert np.allclose(m[0][:3, :3], rot_z(90))


def test_child_rotation_about_own_head():
    sk = Skeleton.chain([[0.0, 0, 0], [0.5, 0, 0]])
    g = pose_transforms(sk, Pose([[1.0, 0, 0, 0], quat_from_axis_angle([0, 0, 1], 90)]))
    # the elbow stays put, the forearm end swings to +y
    assert np.allclose(g.apply(1, [0.5, 0, 0]), [0.5, 0, 0])
    assert np.allclose(g.apply(1, [1.0, 0, 0]), [0.5, 0.5, 0])


def test_bone_count_mismatch():
    with pytest.raises(ConfigError):
        pose_transforms(one_bone(), Pose.identity(2))


def test_skeleton_topology_checked():
    with pytest.raises(ConfigError):
        Skeleton((-1, 2, 1), np.zeros((3, 3)), np.tile([1.0, 0, 0, 0], (3, 1)))
    with pytest.raises(ConfigError):
        Skeleton((-1, -1), np.zeros((2, 3)), np.tile([1.0, 0, 0, 0], (2, 1)))


def test_pose_quaternions_normalized():
    p = Pose([[2.0, 0, 0, 0]])
    assert np.allclose(np.linalg.norm(p.rotations, axis=1), 1, atol=1e-9)
    with pytest.raises(ConfigError):
        Pose([[0.0, 0, 0, 0]])


def test_blend_weights_examples():
    w2 = np.array([[1.0, 0], [0, 1.0]])
    assert np.allclose(blend_weights([0.3], [[0.2, 0.8]]), [0.2, 0.8])
    assert np.allclose(blend_weights([0.05, 0.05], w2), [0.5, 0.5])
    # independent softmax over (0, -0.1 / (2 * 0.075^2))
    z = np.array([0.0, -0.1 / (2 * 0.075 ** 2)])
    oracle = np.exp(z) / np.exp(z).sum()
    got = blend_weights([0.0, 0.1], w2, 0.075)
    assert np.allclose(got, oracle, rtol=0, atol=1e-12)
    assert np.allclose(got, [0.99986, 0.00014], atol=1e-5)


def test_blend_weights_empty():
    with pytest.raises(EmptyNeighborhoodError):
        blend_weights(np.zeros((0,)), np.zeros((0, 2)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 0.5), min_size=2, max_size=10), st.floats(0, 0.2), st.integers(0, 2 ** 31))
def test_blend_weights_shift_invariant_and_convex(d, shift, seed):
    rng = np.random.default_rng(seed)
    w = rng.random((len(d), 3))
    w /= w.sum(axis=1, keepdims=True)
    a = blend_weights(np.array(d), w)
    b = blend_weights(np.array(d) + shift, w)
    assert np.allclose(a, b, atol=1e-12)
    assert abs(a.sum() - 1) < 1e-6 and np.all(a >= 0)


def test_inverse_warp_examples():
    sk = one_bone()
    g = pose_transforms(sk, Pose.identity(1))
    x = np.array([[0.3, -0.2, 0.7]])
    xc, r = inverse_warp(x, np.ones((1, 1)), g)
    assert np.allclose(xc, x) and np.allclose(r, np.eye(3))
    g = pose_transforms(sk, Pose([[1.0, 0, 0, 0]], [1.0, 2.0, 3.0]))
    xc, _ = inverse_warp(x, np.ones((1, 1)), g)
    assert np.allclose(xc, x - [1, 2, 3])
    g = pose_transforms(sk, Pose([quat_from_axis_angle([0, 0, 1], 90)]))
    xc, r = inverse_warp([[0.0, 1, 0]], np.ones((1, 1)), g)
    assert np.allclose(xc, np.linalg.solve(rot_z(90), [0, 1, 0]))
    assert np.allclose(xc, [1, 0, 0])


def test_degenerate_blend_raises():
    g = BoneTransforms(np.stack([np.eye(3), np.diag([-1.0, -1, 1])]), np.zeros((2, 3)))
    with pytest.raises(DegenerateWarpError) as e:
        inverse_warp([[0.1, 0, 0]], [[0.5, 0.5]], g)
    assert e.value.args


def test_forward_skin_examples():
    g = pose_transforms(one_bone(), Pose.identity(1))
    assert np.allclose(forward_skin_point([[0.2, 0.3, 0.4]], [[1.0]], g), [0.2, 0.3, 0.4])
    g = pose_transforms(one_bone(), Pose([[1.0, 0, 0, 0]], [0, 0, 1.0]))
    assert np.allclose(forward_skin_point([[0.0, 0, 0]], [[1.0]], g), [0, 0, 1])


def test_round_trip_random_poses():
    rng = np.random.default_rng(7)
    sk = Skeleton.chain([[0.0, 0, 0], [0.5, 0, 0], [1.0, 0, 0]])
    for _ in range(10):
        q = random_quaternions(rng, 3)
        # keep rotations moderate so convex blends stay invertible
        q[:, 0] += 2.0
        g = pose_transforms(sk, Pose(q, rng.normal(size=3)))
        x = rng.uniform(-1, 1, (100, 3))
        w = rng.dirichlet(np.ones(3), 100)
        back, r = inverse_warp(forward_skin_point(x, w, g), w, g)
        assert np.max(np.abs(back - x)) < 1e-7
        assert np.max(np.abs(np.swapaxes(r, -1, -2) @ r - np.eye(3))) < 1e-6


def test_emitted_rotations_orthonormal():
    rng = np.random.default_rng(3)
    m = rng.normal(size=(200, 3, 3))
    r = nearest_rotation(m)
    assert np.max(np.abs(np.swapaxes(r, -1, -2) @ r - np.eye(3))) < 1e-6
    assert np.allclose(np.linalg.det(r), 1)
    sk = Skeleton.chain([[0.0, 0, 0], [0.5, 0, 0]])
    g = pose_transforms(sk, Pose(random_quaternions(rng, 2)))
    assert np.max(np.abs(np.swapaxes(g.rotations, -1, -2) @ g.rotations - np.eye(3))) < 1e-9


def test_rotate_normal():
    n = rotate_normal_to_world([1.0, 0, 0], np.eye(3))
    assert np.allclose(n, [1, 0, 0])
    assert np.allclose(rotate_normal_to_world([1.0, 0, 0], rot_z(90)), [0, -1, 0])
    rng = np.random.default_rng(0)
    r = quat_to_matrix(random_quaternions(rng, 50))
    v = rng.normal(size=(50, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    assert np.allclose(np.linalg.norm(rotate_normal_to_world(v, r), axis=1), 1, atol=1e-9)
    with pytest.raises(InvalidNormalError):
        rotate_normal_to_world([0.0, 0, 0], np.eye(3))
