import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from mvslite.geometry import CameraModel

DEPTH_RANGE = (425.0, 935.0)


def translation_camera(center, focal=100.0, pp=(0.0, 0.0), depth_range=DEPTH_RANGE):
    """Axis-aligned camera (R = I) at a given world-space centre."""
    center = np.asarray(center, dtype=np.float64)
    K = np.array([[focal, 0.0, pp[0]], [0.0, focal, pp[1]], [0.0, 0.0, 1.0]])
    return CameraModel(K=K, R=np.eye(3), t=-center, depth_range=depth_range)


def random_camera(seed, depth_range=DEPTH_RANGE):
    """Camera with a random small rotation and translation, sane intrinsics."""
    rng = np.random.default_rng(seed)
    R = Rotation.from_rotvec(rng.normal(0.0, 0.05, size=3)).as_matrix()
    t = rng.normal(0.0, 30.0, size=3)
    f = rng.uniform(80.0, 300.0)
    K = np.array([[f, 0.0, 31.5], [0.0, f, 31.5], [0.0, 0.0, 1.0]])
    return CameraModel(K=K, R=R, t=t, depth_range=depth_range)


@pytest.fixture
def ref_cam():
    return translation_camera((0.0, 0.0, 0.0))


@pytest.fixture
def src_cam_x10():
    # Source translated +10 mm along world x relative to the reference.
    return translation_camera((10.0, 0.0, 0.0))
