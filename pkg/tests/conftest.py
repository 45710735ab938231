import numpy as np
import pytest

from segprobe import build_synthetic_store, tensor


@pytest.fixture
def f64():
    """Run a test in global float64 mode (finite-difference territory)."""
    with tensor.using_dtype(np.float64):
        yield


@pytest.fixture
def tiny_store(tmp_path):
    """3 separable samples, 24x24 grid, patch 4, 3 classes, Z=8."""
    return build_synthetic_store(
        tmp_path / "store", num_images=3, grid_h=24, grid_w=24,
        num_classes=3, feature_dim=8, patch_size=4, noise_sigma=0.1, seed=11,
    )
