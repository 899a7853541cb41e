import struct

import numpy as np
import pytest

from conftest import synthetic_digits, write_idx
from services.data_pipeline import (
    MNIST_FILES, batch_iter, build_subset, dump_pairs, dump_subset, frozen_pairs, generate_pairs,
    is_sound, load_idx, load_mnist, load_pairs, load_subset, make_pair, split_subset, start_digits,
    verify_mnist_files,
)
from utils.exceptions import (
    ChecksumMismatchError, DataError, IdxConsistencyError, IdxFormatError, IdxLengthError,
    MissingArtifactError, SubsetCapacityError,
)

def test_pixels_are_bytes_over_255(mnist_dir):
    raw_images, raw_labels = synthetic_digits(30, seed=1)
    images = load_mnist(mnist_dir, "train")
    assert len(images) == 300
    assert [im.index for im in images[:3]] == [0, 1, 2]
    np.testing.assert_array_equal(images[7].pixels, raw_images[7].reshape(-1) / 255.0)
    assert [im.label for im in images] == raw_labels.tolist()

def test_gzip_split_loads(mnist_dir):
    images = load_mnist(mnist_dir, "test")
    assert len(images) == 50
    assert all(0.0 <= im.pixels.min() and im.pixels.max() <= 1.0 for im in images)

def test_bad_magic(tmp_path):
    image_path, label_path = write_idx(tmp_path, "train", *synthetic_digits(1))
    data = bytearray(image_path.read_bytes())
    data[:4] = struct.pack(">I", 2049)
    image_path.write_bytes(bytes(data))
    with pytest.raises(IdxFormatError):
        load_idx(image_path, label_path)

def test_truncated_payload(tmp_path):
    image_path, label_path = write_idx(tmp_path, "train", *synthetic_digits(1))
    image_path.write_bytes(image_path.read_bytes()[:-100])
    with pytest.raises(IdxLengthError):
        load_idx(image_path, label_path)

def test_count_mismatch(tmp_path):
    images, labels = synthetic_digits(1)
    image_path, label_path = write_idx(tmp_path, "train", images, labels)
    label_path.write_bytes(struct.pack(">II", 2049, 9) + labels[:9].tobytes())
    with pytest.raises(IdxConsistencyError):
        load_idx(image_path, label_path)

def test_missing_split(tmp_path):
    with pytest.raises(MissingArtifactError):
        load_mnist(tmp_path, "train")

def test_subset_is_stratified_and_seeded(images):
    subset = build_subset(images, 20, seed=1)
    assert len(subset) == 200
    assert subset.class_histogram() == {d: 20 for d in range(10)}
    assert len(set(subset.indices)) == 200
    assert build_subset(images, 20, seed=1).indices == subset.indices
    assert build_subset(images, 20, seed=2).indices != subset.indices

def test_subset_capacity(images):
    with pytest.raises(SubsetCapacityError) as info:
        build_subset(images, 31, seed=1)
    assert info.value.details["requested"] == 31

def test_split_is_disjoint_and_stratified(images):
    subset = build_subset(images, 20, seed=3)
    train, val = split_subset(subset, 0.1, seed=3)
    assert val.class_histogram() == {d: 2 for d in range(10)}
    assert train.class_histogram() == {d: 18 for d in range(10)}
    assert not set(train.indices) & set(val.indices)
    assert sorted(train.indices + val.indices) == sorted(subset.indices)

@pytest.mark.parametrize("start, context, target", [
    (1, (1, 2, 3, 4), (5, 6, 7, 8)),
    (7, (7, 8, 9, 0), (1, 2, 3, 4)),
])
def test_positive_pairs_continue_the_run(images, rng, start, context, target):
    subset = build_subset(images, 10, seed=1)
    pair = make_pair(subset, start, 1, rng)
    assert pair.context_digits == context
    assert pair.target_digits == target
    assert [im.label for im in pair.context_images] == list(context)
    assert [im.label for im in pair.target_images] == list(target)
    assert is_sound(pair)

def test_negative_pairs_break_the_run(images, rng):
    subset = build_subset(images, 10, seed=1)
    for _ in range(200):
        pair = make_pair(subset, 5, 0, rng)
        assert pair.target_digits != (9, 0, 1, 2)
        assert is_sound(pair)

def test_no_wrap_restricts_starts(images, rng):
    subset = build_subset(images, 10, seed=1)
    assert start_digits(wrap=False) == [0, 1, 2]
    with pytest.raises(DataError):
        make_pair(subset, 3, 1, rng, wrap=False)
    pairs = generate_pairs(subset, 20, 20, rng, wrap=False)
    assert {p.context_digits[0] for p in pairs} <= {0, 1, 2}

def test_batches_have_exact_composition(images, rng):
    subset = build_subset(images, 10, seed=1)
    pairs = generate_pairs(subset, 320, 320, rng)
    batches = list(batch_iter(pairs, 32, 32, rng))
    assert len(batches) == 10
    for batch in batches:
        assert sum(p.label for p in batch) == 32
        assert len(batch) == 64
    assert len(list(batch_iter(pairs[:33] + pairs[320:352], 32, 32, rng))) == 1

def test_frozen_pairs_are_reproducible(images):
    subset = build_subset(images, 10, seed=1)
    a = frozen_pairs(subset, 10, 10, seed=4)
    b = frozen_pairs(subset, 10, 10, seed=4)
    assert [(p.context_indices, p.target_indices, p.label) for p in a] == \
        [(p.context_indices, p.target_indices, p.label) for p in b]

def test_dumps_reload_to_the_same_sampling(images, tmp_path):
    subset = build_subset(images, 10, seed=1)
    pairs = frozen_pairs(subset, 5, 5, seed=2)
    by_index = {im.index: im for im in images}
    reloaded = load_subset(dump_subset(subset, tmp_path / "subset.txt"), by_index)
    assert reloaded.indices == subset.indices
    assert reloaded.seed == 1
    again = load_pairs(dump_pairs(pairs, tmp_path / "pairs.txt"), by_index)
    assert [p.target_indices for p in again] == [p.target_indices for p in pairs]
    assert all(is_sound(p) for p in again)

def test_edited_subset_dump_is_rejected(images, tmp_path):
    subset = build_subset(images, 3, seed=1)
    path = dump_subset(subset, tmp_path / "subset.txt")
    lines = path.read_text().splitlines()
    dropped_label = int(lines[-1].split(",")[1])
    path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(DataError) as info:
        load_subset(path, {im.index: im for im in images})
    assert info.value.error_code == "unbalanced_subset"
    assert info.value.details["class_counts"] == {dropped_label: 2}

def test_verify_reports_structure_and_digests(mnist_dir):
    checks = verify_mnist_files(mnist_dir, strict=False)
    status = {c.name: c.status for c in checks}
    assert status[MNIST_FILES["train"][0]] == "ok"
    # Synthetic gzip files cannot match the published digests
    assert status[MNIST_FILES["test"][0]] == "mismatch"
    with pytest.raises(ChecksumMismatchError):
        verify_mnist_files(mnist_dir, strict=True)

def test_verify_honours_pinned_sha256(mnist_dir):
    name = MNIST_FILES["train"][1]
    checks = verify_mnist_files(mnist_dir, {name: "0" * 64}, strict=False)
    assert {c.name: c.status for c in checks}[name] == "mismatch"

def test_verify_reports_missing(tmp_path):
    checks = verify_mnist_files(tmp_path, strict=True)
    assert {c.status for c in checks} == {"missing"}
