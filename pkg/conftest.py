"""
Shared pytest fixtures: synthetic IDX files, seeded generators, float64 kernels
"""

import gzip
import os
import struct
from pathlib import Path

import numpy as np
import pytest

from services import nn_core
from services.data_pipeline import MNIST_FILES, MnistImage, load_idx

def synthetic_digits(per_class: int, seed: int = 0):
    """uint8 images where digit d lights up rows 2d+2..2d+4 plus a little noise"""
    rng = np.random.default_rng(seed)
    n = 10 * per_class
    images = np.zeros((n, 28, 28), dtype=np.uint8)
    labels = np.repeat(np.arange(10, dtype=np.uint8), per_class)
    rng.shuffle(labels)
    for i, digit in enumerate(labels):
        row = 2 * int(digit) + 2
        images[i, row:row + 3, 4:24] = rng.integers(180, 256, size=(3, 20))
        noise = rng.random((28, 28)) < 0.02
        images[i][noise] = rng.integers(0, 120, size=int(noise.sum()))
    return images, labels

def write_idx(directory: Path, split: str, images: np.ndarray, labels: np.ndarray, compress: bool = False):
    """Write an IDX image/label pair under the canonical MNIST names"""
    directory.mkdir(parents=True, exist_ok=True)
    image_name, label_name = MNIST_FILES[split]
    image_bytes = struct.pack(">IIII", 2051, len(images), 28, 28) + images.astype(np.uint8).tobytes()
    label_bytes = struct.pack(">II", 2049, len(labels)) + labels.astype(np.uint8).tobytes()
    paths = []
    for name, payload in ((image_name, image_bytes), (label_name, label_bytes)):
        if compress:
            path = directory / f"{name}.gz"
            with gzip.open(path, "wb") as f:
                f.write(payload)
        else:
            path = directory / name
            path.write_bytes(payload)
        paths.append(path)
    return paths[0], paths[1]

@pytest.fixture(autouse=True)
def float64_kernels():
    nn_core.set_precision("float64", debug_finite=False)
    yield
    nn_core.set_precision("float64", debug_finite=False)

@pytest.fixture
def rng():
    return np.random.default_rng(1234)

@pytest.fixture
def mnist_dir(tmp_path):
    """Raw train split (30 per class) and gzip test split (5 per class)"""
    directory = tmp_path / "mnist"
    write_idx(directory, "train", *synthetic_digits(30, seed=1))
    write_idx(directory, "test", *synthetic_digits(5, seed=2), compress=True)
    return directory

@pytest.fixture
def images(mnist_dir):
    image_path, label_path = (mnist_dir / name for name in MNIST_FILES["train"])
    return load_idx(image_path, label_path)

@pytest.fixture
def blank_image():
    return MnistImage(pixels=np.zeros(784), label=0, index=99999)

@pytest.fixture
def real_mnist_dir():
    directory = os.getenv("CPCSNN_MNIST_DIR")
    if not directory or not Path(directory).exists():
        pytest.skip("CPCSNN_MNIST_DIR not set")
    return Path(directory)
