import numpy as np
import pytest

from epiprep.geometry import CameraModel


def look_at(center: np.ndarray, target: np.ndarray, roll: float = 0.0) -> np.ndarray:
    """World-to-camera rotation for a camera at `center` looking at `target`."""
    forward = target - center
    forward = forward / np.linalg.norm(forward)
    up = np.array([0.0, -1.0, 0.0])
    if abs(forward @ up) > 0.99:
        up = np.array([1.0, 0.0, 0.0])
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    r = np.stack([right, down, forward])
    cr, sr = np.cos(roll), np.sin(roll)
    rz = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
    return rz @ r


def random_camera_pair(rng: np.random.Generator, roll: float = 0.0):
    """Two cameras with a sideways baseline, both aimed at the point cloud."""
    f = rng.uniform(500.0, 1200.0)
    k = np.array([[f, 0.0, 320.0], [0.0, f, 240.0], [0.0, 0.0, 1.0]])
    target = np.array([0.0, 0.0, 6.0])
    c1 = np.array([0.0, 0.0, 0.0])
    c2 = np.array([rng.uniform(0.5, 2.0), rng.uniform(-0.5, 0.5), rng.uniform(-0.3, 0.3)])
    r1 = look_at(c1, target)
    r2 = look_at(c2, target, roll=roll)
    cam1 = CameraModel(K=k, R=r1, t=-r1 @ c1)
    cam2 = CameraModel(K=k, R=r2, t=-r2 @ c2)
    return cam1, cam2


def random_points(rng: np.random.Generator, n: int) -> np.ndarray:
    return np.column_stack(
        [rng.uniform(-2.5, 2.5, n), rng.uniform(-2.0, 2.0, n), rng.uniform(4.0, 8.0, n)]
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def shared_training():
    """Classifiers trained once per session on the default training corpus."""
    from epiprep.bench import build_training_data, training_scene_configs
    from epiprep.estimator import PipelineConfig

    return build_training_data(training_scene_configs(), PipelineConfig())


@pytest.fixture(scope="session")
def shared_models(shared_training):
    return shared_training[2]
