import numpy as np
import pytest
import torch

from meshfeedback.body import make_toy_body
from meshfeedback.config import ModelSpec


@pytest.fixture(scope="session")
def toy_body():
    return make_toy_body(11)


@pytest.fixture(scope="session")
def small_body():
    # 64-vertex body for gradient checks and fast loop tests
    return make_toy_body(5, n_verts=64, n_joints=16, n_shape=4, n_parts=8, n_down=16)


def micro_spec() -> ModelSpec:
    """Tiny float64-friendly configuration for finite-difference checks."""
    return ModelSpec(
        name="toy", image_size=16, channels=8, global_channels=16,
        trunk_channels=(4, 8), deconv_strides=(1, 2),
        grid_n=3, point_dim=2, mlp_hidden=(8, 4), reg_hidden=(16, 16),
        dropout=0.5, n_verts=64, n_joints=16, n_shape=4, n_parts=8, n_down=16)


@pytest.fixture(scope="session")
def identity_cam():
    return torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64)


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
