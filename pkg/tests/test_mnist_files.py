import numpy as np
import pytest

from config.settings import DATASETS, StdpConfig
from services.data_pipeline import build_subset, load_mnist, split_subset, verify_mnist_files
from services.encodings import EncodingTable, similarity_report
from services.spike_codec import RateCodingParams, adaptive_encode
from services.stdp_encoder import encode_images, train_unsupervised

pytestmark = pytest.mark.slow

@pytest.fixture
def subset_2500(real_mnist_dir):
    return build_subset(load_mnist(real_mnist_dir, "train"), DATASETS["MNIST-2500"], seed=1)

def test_published_files_verify(real_mnist_dir):
    checks = verify_mnist_files(real_mnist_dir, strict=True)
    assert {c.status for c in checks} == {"ok"}

def test_train_split_shape(real_mnist_dir):
    images = load_mnist(real_mnist_dir, "train")
    assert len(images) == 60000
    assert images[0].label == 5
    assert np.bincount([im.label for im in images], minlength=10).min() >= 5000

@pytest.mark.parametrize("dataset", sorted(DATASETS))
def test_subsets_of_the_published_sizes(real_mnist_dir, dataset):
    per_class = DATASETS[dataset]
    subset = build_subset(load_mnist(real_mnist_dir, "train"), per_class, seed=1)
    assert len(subset) == 10 * per_class
    train, val = split_subset(subset, 0.1, seed=1)
    assert val.class_histogram() == {d: per_class // 10 for d in range(10)}
    assert len(train) + len(val) == len(subset)

def test_every_image_reaches_the_spike_floor(subset_2500):
    codec = RateCodingParams()
    rng = np.random.default_rng(1)
    totals = [adaptive_encode(image, codec, rng).total for image in subset_2500.images]
    assert len(totals) == 2500
    assert min(totals) >= codec.s_min

def test_one_stdp_epoch_separates_the_classes(subset_2500):
    cfg = StdpConfig()
    state = train_unsupervised(subset_2500, 1, cfg, RateCodingParams(), np.random.default_rng(1))
    assert state.weights.min() >= 0.0 and state.weights.max() <= cfg.w_max
    vectors = encode_images(state, subset_2500.images, RateCodingParams(), seed=1)
    report = similarity_report(EncodingTable.from_vectors("snn_classifier", vectors))
    assert report.gap >= 0.05
