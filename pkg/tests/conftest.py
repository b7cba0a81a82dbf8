import numpy as np
import pytest

from safe_ibvs.geometry import CameraIntrinsics, CameraPose, se3_exp


@pytest.fixture
def intrinsics():
    return CameraIntrinsics(500.0, 320.0, 240.0)


def downward_pose(translation, wiggle=(0.0, 0.0, 0.0)):
    """Camera above the z=0 plane looking down, with a small rotation offset."""
    down = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
    rot, _ = se3_exp(np.concatenate([np.zeros(3), np.asarray(wiggle, dtype=float)]))
    return CameraPose(down @ rot, np.asarray(translation, dtype=float))


@pytest.fixture
def pose_above():
    return downward_pose([0.1, -0.05, 1.2], wiggle=[0.05, -0.08, 0.1])
