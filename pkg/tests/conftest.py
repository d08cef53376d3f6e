import numpy as np
import pytest

from hdqrender.fixtures import FIXTURES, sphere_puppet, two_capsule_puppet, bent_pose
from hdqrender.hdq import HdqState


@pytest.fixture(scope="session")
def sphere_state():
    return HdqState(sphere_puppet())


@pytest.fixture(scope="session")
def bent_state():
    scene, pose = FIXTURES["two-capsule"]()
    return HdqState(scene, pose)


@pytest.fixture(scope="session")
def capsule_identity_state():
    return HdqState(two_capsule_puppet())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
