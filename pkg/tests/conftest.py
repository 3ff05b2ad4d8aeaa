import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "ci",
    derandomize=True,
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def texture_dirs(tmp_path_factory):
    """Small pools of procedural source images shared across tests."""
    from cropenhance.synthgen import write_texture_images

    root = tmp_path_factory.mktemp("textures")
    write_texture_images(root / "fg", 10, size=128, seed=77)
    write_texture_images(root / "bg", 10, size=128, seed=88)
    return root / "fg", root / "bg"


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory, texture_dirs):
    """A tiny generated dataset (96px) for train/eval plumbing tests."""
    from cropenhance.synthgen import TransformBounds, generate_dataset

    fg, bg = texture_dirs
    out = tmp_path_factory.mktemp("smallset")
    manifest = generate_dataset(
        6, 31, TransformBounds(), fg, bg, out, size=96
    )
    return manifest
