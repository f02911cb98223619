import os

import numpy as np
import pytest

from dpxlab_bridge import write_tensor


def write_dataset(dir_path, inputs, labels=None):
    os.makedirs(dir_path, exist_ok=True)
    write_tensor(np.asarray(inputs, dtype=np.float64), os.path.join(dir_path, "inputs.dpxt"))
    if labels is not None:
        write_tensor(np.asarray(labels, dtype=np.float64), os.path.join(dir_path, "labels.dpxt"))
    return str(dir_path)


@pytest.fixture(scope="session")
def vector_dataset(tmp_path_factory):
    """12 six-feature examples with labels, the tiny_mlp / toy_linear shape."""
    rng = np.random.default_rng(7)
    inputs = rng.normal(size=(12, 6))
    labels = rng.integers(0, 4, size=12).astype(np.float64)
    return write_dataset(tmp_path_factory.mktemp("vecdata"), inputs, labels)


@pytest.fixture(scope="session")
def image_dataset(tmp_path_factory):
    """6 single-channel 12x12 images, no labels, the tiny_cnn shape."""
    rng = np.random.default_rng(11)
    inputs = rng.normal(size=(6, 1, 12, 12))
    return write_dataset(tmp_path_factory.mktemp("imgdata"), inputs)
