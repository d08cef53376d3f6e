"""Small reference scenes used by the tests, the benchmark harness and the
CLI ``--fixture`` option."""

from __future__ import annotations

import numpy as np

from .puppet import DisplacementField, Material, Primitive, PuppetScene
from .rig import Pose, Skeleton, quat_from_axis_angle

SKIN = Material((0.8, 0.6, 0.5), 0.5)
CLOTH = Material((0.2, 0.3, 0.7), 0.8)


def sphere_puppet(radius=0.5, center=(0.0, 0.0, 0.0), material=Material((0.5, 0.5, 0.5), 0.5)):
    skel = Skeleton.chain([center], tail=center)
    return PuppetScene(skel, (Primitive("sphere", 0, material, center=center, radius=radius),))


def two_capsule_puppet(length=0.5, radius=0.1, displacement=None):
    """Upper arm along +x from the origin, forearm continuing to ``2*length``."""
    skel = Skeleton.chain([[0.0, 0, 0], [length, 0, 0]], tail=[2 * length, 0, 0])
    prims = (
        Primitive("capsule", 0, SKIN, a=[0.0, 0, 0], b=[length, 0, 0], radius=radius),
        Primitive("capsule", 1, CLOTH, a=[length, 0, 0], b=[2 * length, 0, 0], radius=radius),
    )
    return PuppetScene(skel, prims, displacement=displacement or DisplacementField())


def bulge_displacement(amplitude=0.02, length=0.5):
    """Pose-driven bump on the forearm, switched on by bending the elbow."""
    return DisplacementField("bulge", amplitude, bone=1, center=(1.5 * length, 0.0, 0.1),
                             radius=0.08, direction=(0.0, 0.0, 1.0))


def bent_pose(angle_deg=90.0, axis=(0.0, 0.0, 1.0), frame=0):
    """Two-bone pose with the elbow bent ``angle_deg`` about ``axis``."""
    return Pose(np.array([[1.0, 0, 0, 0], quat_from_axis_angle(axis, angle_deg)]), np.zeros(3), frame)


def sphere_over_ground(radius=0.3, height=0.5):
    """Blocker sphere centred ``height`` above the z = 0 ground plane.

    The ground itself is not part of the distance field; shading points on
    it only receive the sphere's shadow.
    """
    return sphere_puppet(radius, center=(0.0, 0.0, height))


def two_material_spheres(radius=0.3, gap=0.0):
    """Two touching spheres along x with different materials."""
    skel = Skeleton.chain([[0.0, 0, 0]], tail=[0.0, 0, 0])
    c = radius + gap / 2
    prims = (
        Primitive("sphere", 0, Material((0.9, 0.1, 0.1), 0.3), center=[-c, 0, 0], radius=radius),
        Primitive("sphere", 0, Material((0.1, 0.1, 0.9), 0.7), center=[c, 0, 0], radius=radius),
    )
    return PuppetScene(skel, prims)


# moderate elbow bend: LBS stays close to rigid, so world and canonical
# distances agree near the surface
BENT_DEG = 45.0
# folded elbow: the forearm doubles back toward the upper arm, which is
# where the warped canonical distance goes wrong away from the surface
FOLDED_DEG = 135.0

FIXTURES = {
    "sphere": lambda: (sphere_puppet(), None),
    "two-capsule": lambda: (two_capsule_puppet(), bent_pose(BENT_DEG)),
    "two-capsule-folded": lambda: (two_capsule_puppet(), bent_pose(FOLDED_DEG)),
    "two-capsule-bulge": lambda: (two_capsule_puppet(displacement=bulge_displacement()), bent_pose(BENT_DEG)),
    "sphere-over-ground": lambda: (sphere_over_ground(), None),
    "two-material-spheres": lambda: (two_material_spheres(), None),
}
