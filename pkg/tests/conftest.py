import numpy as np
import pytest
import torch

from shapefill.model import ModelConfig
from shapefill.shapesworld import (
    ShapesWorldConfig,
    generate_shapesworld,
    load_dataset,
)

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def toy_dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("shapesworld")
    generate_shapesworld(ShapesWorldConfig(seed=11), 48, str(out))
    return str(out)


@pytest.fixture(scope="session")
def toy_samples(toy_dataset_dir):
    from shapefill.shapesworld import read_shapesworld_manifest
    return load_dataset(read_shapesworld_manifest(toy_dataset_dir))


@pytest.fixture
def micro_config():
    return ModelConfig(image_size=16, num_scales=2, channels=(8, 16),
                       num_classes=2, z_dim=8, h_dim=8)


@pytest.fixture
def small_config():
    return ModelConfig(image_size=64, num_scales=4, channels=(8, 16, 32, 64),
                       num_classes=4, z_dim=16, h_dim=16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, h=16, w=16):
    return rng.uniform(-1.0, 1.0, size=(3, h, w)).astype(np.float32)


def random_mask(rng, h=16, w=16, frac=0.3):
    mask = (rng.random((h, w)) < frac).astype(np.float32)
    return mask


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
