import pytest

from src.checks.scenes import default_camera, random_scene, smooth_scene
from src.config.render_config import RenderConfig
from src.scene.gaussian import Gaussian3D, Scene


@pytest.fixture
def cam16():
    return default_camera(16, 16)


@pytest.fixture
def cam32():
    return default_camera(32, 32)


@pytest.fixture
def small_scene():
    return random_scene(6, seed=3)


@pytest.fixture
def smooth():
    return smooth_scene(4, seed=0)


@pytest.fixture
def exact_cfg():
    """Sorted reference without early termination."""
    return RenderConfig(early_stop_transmittance=0.0, threads=1)


@pytest.fixture
def two_splats():
    """Two overlapping Gaussians in front of the default camera."""
    return Scene.from_gaussians(
        [
            Gaussian3D.create((0.1, 0.0, 3.0), scale=(0.6, 0.4, 0.5), opacity=0.7, color=(0.9, 0.2, 0.1)),
            Gaussian3D.create((-0.2, 0.1, 4.0), scale=(0.8, 0.8, 0.8), opacity=0.5, color=(0.1, 0.3, 0.8)),
        ],
        sh_degree=0,
    )

