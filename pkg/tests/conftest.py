import numpy as np
import pytest
import torch

from dualarb.model import ModelConfig

torch.set_num_threads(1)


TINY_CONFIG = ModelConfig(num_blocks=2, convs_per_block=2, growth=8, base_channels=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return TINY_CONFIG


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory):
    """Small phantom dataset shared by trainer/evaluate/service tests."""
    from dualarb import phantom

    out = tmp_path_factory.mktemp("ds")
    phantom.generate_dataset(out, seed=7, n_subjects=6, canvas=(48, 48),
                             ratios=(0.6, 0.2, 0.2))
    return out
