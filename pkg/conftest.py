import numpy as np
import pytest

from geometry.services import make_correspondences
from simulator.models import SceneParams
from simulator.services import make_rng, scene_from_params


@pytest.fixture
def clean_scene():
    """100 points, no noise, no outliers."""
    return scene_from_params(SceneParams(n_points=100), seed=1)


@pytest.fixture
def outlier_scene():
    """Exact inliers plus 30% gross outliers."""
    return scene_from_params(SceneParams(n_points=100, outlier_fraction=0.3), seed=1)


@pytest.fixture
def noisy_outlier_scene():
    return scene_from_params(
        SceneParams(n_points=100, pixel_noise_sigma=0.3, coord_noise_sigma=0.001, outlier_fraction=0.3),
        seed=1,
    )


@pytest.fixture
def random_correspondences():
    """Factory for random (not geometrically consistent) correspondences."""

    def build(n, seed=0):
        rng = make_rng(seed)
        coords = rng.normal(0.0, 1.0, (n, 3)) + np.array([0.0, 0.0, 4.0])
        pixels = rng.uniform([0.0, 0.0], [640.0, 480.0], (n, 2))
        intr = SceneParams().intrinsics
        return make_correspondences(coords, pixels, intr)

    return build
