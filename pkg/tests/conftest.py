import math

import numpy as np
import pytest

from posebench.geometry import Intrinsics, Pose, rotation_from_euler


@pytest.fixture
def default_intrinsics():
    return Intrinsics(fx=525.0, fy=525.0, cx=320.0, cy=240.0, width=640, height=480)


@pytest.fixture
def rng():
    return np.random.default_rng(20240911)


def random_pose(rng, max_angle=1.2, max_offset=3.0) -> Pose:
    """A pose with yaw kept clear of the gimbal-lock band."""
    theta = rng.uniform(-math.pi, math.pi)
    phi = rng.uniform(-max_angle, max_angle)
    psi = rng.uniform(-math.pi, math.pi)
    t = rng.uniform(-max_offset, max_offset, size=3)
    return Pose(rotation_from_euler(theta, phi, psi), t)
