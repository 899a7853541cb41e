#!/usr/bin/env python3
"""
CPC-SNN Data Pipeline
MNIST IDX ingestion, class-balanced subsets and digit-sequence pairs
"""

import gzip
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from config.settings import get_logger
from utils.exceptions import (
    DataError, IdxFormatError, IdxLengthError, IdxConsistencyError,
    SubsetCapacityError, ChecksumMismatchError, MissingArtifactError,
)

logger = get_logger(__name__)

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
IMAGE_SIDE = 28
N_PIXELS = IMAGE_SIDE * IMAGE_SIDE
N_CLASSES = 10

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

# Published MD5 digests of the gzip-compressed distribution files
MNIST_GZ_MD5 = {
    "train-images-idx3-ubyte.gz": "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    "train-labels-idx1-ubyte.gz": "d53e105ee54ea40749a09fcbcd1e9432",
    "t10k-images-idx3-ubyte.gz": "9fb629c4189551a2d022fa330f9573f3",
    "t10k-labels-idx1-ubyte.gz": "ec29112dd5afa0611ce80d1b7f02629c",
}

@dataclass(frozen=True, eq=False)
class MnistImage:
    """One 28x28 digit; pixels are raw bytes divided by 255"""
    pixels: np.ndarray
    label: int
    index: int

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64).reshape(-1)
        if pixels.shape != (N_PIXELS,):
            raise DataError(f"Image {self.index} has {pixels.size} pixels, expected {N_PIXELS}")
        if pixels.size and (pixels.min() < 0.0 or pixels.max() > 1.0):
            raise DataError(f"Image {self.index} has intensities outside [0, 1]")
        if not 0 <= int(self.label) < N_CLASSES:
            raise DataError(f"Image {self.index} has label {self.label} outside 0-9")
        pixels = pixels.copy() if pixels.flags.writeable else pixels
        pixels.flags.writeable = False
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "label", int(self.label))
        object.__setattr__(self, "index", int(self.index))

@dataclass(frozen=True, eq=False)
class ClassBalancedSubset:
    """Exactly per_class_count images of every digit, in seeded order"""
    per_class_count: int
    images: Tuple[MnistImage, ...]
    seed: int
    _buckets: Dict[int, Tuple[MnistImage, ...]] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        buckets: Dict[int, List[MnistImage]] = {c: [] for c in range(N_CLASSES)}
        for image in self.images:
            buckets[image.label].append(image)
        unbalanced = {c: len(v) for c, v in buckets.items() if len(v) != self.per_class_count}
        if unbalanced:
            raise DataError(f"Subset must hold {self.per_class_count} images of every digit",
                            error_code="unbalanced_subset", details={"class_counts": unbalanced})
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "_buckets", {c: tuple(v) for c, v in buckets.items()})

    def __len__(self) -> int:
        return len(self.images)

    def bucket(self, digit: int) -> Tuple[MnistImage, ...]:
        """Images of one class, in subset order"""
        return self._buckets[digit]

    def class_histogram(self) -> Dict[int, int]:
        return {c: len(v) for c, v in self._buckets.items()}

    @property
    def indices(self) -> List[int]:
        return [image.index for image in self.images]

@dataclass(frozen=True, eq=False)
class SequencePair:
    """Context run of digits plus a continuation (label 1) or a broken one (label 0)"""
    context_digits: Tuple[int, ...]
    target_digits: Tuple[int, ...]
    context_images: Tuple[MnistImage, ...]
    target_images: Tuple[MnistImage, ...]
    label: int

    @property
    def context_indices(self) -> Tuple[int, ...]:
        return tuple(image.index for image in self.context_images)

    @property
    def target_indices(self) -> Tuple[int, ...]:
        return tuple(image.index for image in self.target_images)

def continuation(context_digits: Sequence[int], prediction_length: int) -> Tuple[int, ...]:
    """The modular continuation of a consecutive run"""
    last = context_digits[-1]
    return tuple((last + 1 + i) % N_CLASSES for i in range(prediction_length))

def is_consecutive(digits: Sequence[int]) -> bool:
    return all((b - a) % N_CLASSES == 1 for a, b in zip(digits, digits[1:]))

def is_sound(pair: SequencePair) -> bool:
    """Label agrees with the continuation predicate and images match their slots"""
    if not is_consecutive(pair.context_digits):
        return False
    continues = tuple(pair.target_digits) == continuation(pair.context_digits, len(pair.target_digits))
    slots_match = all(img.label == d for img, d in zip(pair.context_images, pair.context_digits)) and \
        all(img.label == d for img, d in zip(pair.target_images, pair.target_digits))
    return slots_match and continues == (pair.label == 1)

# ---------------------------------------------------------------------------
# IDX ingestion
# ---------------------------------------------------------------------------

def _read_bytes(path: Path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"IDX file not found: {path}", artifact_path=str(path),
                                   hint="place the MNIST files under data.mnist_dir and run fetch-data")
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()

def _parse_header(data: bytes, expected_magic: int, n_dims: int, path: Path) -> Tuple[int, ...]:
    if len(data) < 4 + 4 * n_dims:
        raise IdxLengthError(f"Truncated IDX header in {path}", error_code="idx_truncated",
                             details={"path": str(path), "bytes": len(data)})
    magic = struct.unpack_from(">I", data, 0)[0]
    if magic != expected_magic:
        raise IdxFormatError(f"Bad IDX magic {magic} in {path}, expected {expected_magic}",
                             error_code="idx_magic", details={"path": str(path), "magic": magic})
    return struct.unpack_from(">" + "I" * n_dims, data, 4)

def load_idx(image_path: Path, label_path: Path) -> List[MnistImage]:
    """Read an IDX image/label file pair into MnistImage records in file order"""
    image_data = _read_bytes(image_path)
    label_data = _read_bytes(label_path)

    n_images, rows, cols = _parse_header(image_data, IMAGE_MAGIC, 3, Path(image_path))
    (n_labels,) = _parse_header(label_data, LABEL_MAGIC, 1, Path(label_path))
    if rows * cols != N_PIXELS:
        raise IdxFormatError(f"Images in {image_path} are {rows}x{cols}, expected {IMAGE_SIDE}x{IMAGE_SIDE}",
                             error_code="idx_shape")
    if n_images != n_labels:
        raise IdxConsistencyError(f"{image_path} holds {n_images} images but {label_path} holds {n_labels} labels",
                                  error_code="idx_count", details={"images": n_images, "labels": n_labels})

    pixel_bytes = n_images * N_PIXELS
    if len(image_data) - 16 < pixel_bytes:
        raise IdxLengthError(f"Image payload of {image_path} is truncated", error_code="idx_truncated",
                             details={"expected": pixel_bytes, "found": len(image_data) - 16})
    if len(label_data) - 8 < n_labels:
        raise IdxLengthError(f"Label payload of {label_path} is truncated", error_code="idx_truncated",
                             details={"expected": n_labels, "found": len(label_data) - 8})

    raw = np.frombuffer(image_data, dtype=np.uint8, count=pixel_bytes, offset=16)
    pixels = (raw.astype(np.float64) / 255.0).reshape(n_images, N_PIXELS)
    pixels.flags.writeable = False
    labels = np.frombuffer(label_data, dtype=np.uint8, count=n_labels, offset=8)

    images = [MnistImage(pixels=pixels[i], label=int(labels[i]), index=i) for i in range(n_images)]
    logger.info(f"📥 Loaded {len(images)} images from {Path(image_path).name}")
    return images

def mnist_paths(directory: Path, split: str = "train") -> Tuple[Path, Path]:
    """Locate the raw or gzip image/label files of one split"""
    directory = Path(directory)
    found = []
    for name in MNIST_FILES[split]:
        raw, gz = directory / name, directory / f"{name}.gz"
        if raw.exists():
            found.append(raw)
        elif gz.exists():
            found.append(gz)
        else:
            raise MissingArtifactError(f"MNIST file {name} not found in {directory}", artifact_path=str(raw),
                                       hint="download MNIST into data.mnist_dir, then run fetch-data")
    return found[0], found[1]

def load_mnist(directory: Path, split: str = "train") -> List[MnistImage]:
    image_path, label_path = mnist_paths(directory, split)
    return load_idx(image_path, label_path)

@dataclass
class FileCheck:
    """Result of verifying one dataset file"""
    name: str
    path: Optional[Path]
    status: str
    sha256: str = ""
    message: str = ""

def _digest(path: Path, algorithm: str) -> str:
    h = hashlib.new(algorithm)
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()

def verify_mnist_files(directory: Path, expected_sha256: Optional[Dict[str, str]] = None,
                       strict: bool = True) -> List[FileCheck]:
    """
    Checksum-verify the local MNIST files

    Gzip files are compared with the published MD5 digests. Raw files are
    structurally validated; when a SHA-256 is pinned for them it must match.
    """
    expected_sha256 = expected_sha256 or {}
    directory = Path(directory)
    checks: List[FileCheck] = []
    for split, names in MNIST_FILES.items():
        for name in names:
            raw, gz = directory / name, directory / f"{name}.gz"
            path = raw if raw.exists() else gz if gz.exists() else None
            if path is None:
                checks.append(FileCheck(name, None, "missing", message="not found"))
                continue
            sha = _digest(path, "sha256")
            if path.suffix == ".gz":
                md5 = _digest(path, "md5")
                ok = md5 == MNIST_GZ_MD5[path.name]
                checks.append(FileCheck(name, path, "ok" if ok else "mismatch", sha,
                                        "" if ok else f"md5 {md5} != {MNIST_GZ_MD5[path.name]}"))
                continue
            pinned = expected_sha256.get(name, "")
            if pinned and pinned.lower() != sha:
                checks.append(FileCheck(name, path, "mismatch", sha, f"sha256 differs from pinned {pinned}"))
                continue
            magic = IMAGE_MAGIC if "images" in name else LABEL_MAGIC
            try:
                _parse_header(path.read_bytes()[:16], magic, 3 if magic == IMAGE_MAGIC else 1, path)
                checks.append(FileCheck(name, path, "ok", sha, "pinned" if pinned else "structure only"))
            except DataError as e:
                checks.append(FileCheck(name, path, "mismatch", sha, e.message))

    for check in checks:
        icon = "✅" if check.status == "ok" else "❌"
        logger.info(f"{icon} {check.name}: {check.status} {check.message}".rstrip())
    bad = [c for c in checks if c.status == "mismatch"]
    if strict and bad:
        raise ChecksumMismatchError(f"{len(bad)} MNIST file(s) failed verification",
                                    details={"files": [c.name for c in bad]})
    return checks

# ---------------------------------------------------------------------------
# Subsets
# ---------------------------------------------------------------------------

def build_subset(images: Sequence[MnistImage], per_class_count: int, seed: int) -> ClassBalancedSubset:
    """Seeded class-stratified sample without replacement, then shuffled"""
    if per_class_count <= 0:
        raise DataError(f"per_class_count must be positive, got {per_class_count}")
    rng = np.random.default_rng(seed)
    buckets: Dict[int, List[MnistImage]] = {c: [] for c in range(N_CLASSES)}
    for image in images:
        buckets[image.label].append(image)

    chosen: List[MnistImage] = []
    for digit in range(N_CLASSES):
        bucket = buckets[digit]
        if len(bucket) < per_class_count:
            raise SubsetCapacityError(f"Class {digit} has {len(bucket)} images, {per_class_count} requested",
                                      error_code="subset_capacity",
                                      details={"class": digit, "available": len(bucket),
                                               "requested": per_class_count})
        picks = rng.choice(len(bucket), size=per_class_count, replace=False)
        chosen.extend(bucket[i] for i in picks)

    order = rng.permutation(len(chosen))
    subset = ClassBalancedSubset(per_class_count, tuple(chosen[i] for i in order), seed)
    logger.info(f"🎯 Built subset of {len(subset)} images ({per_class_count} per class, seed {seed})")
    return subset

def split_subset(subset: ClassBalancedSubset, validation_fraction: float,
                 seed: int) -> Tuple[ClassBalancedSubset, ClassBalancedSubset]:
    """Stratified, image-disjoint train/validation split of a subset"""
    n_val = int(round(subset.per_class_count * validation_fraction))
    if not 0 < n_val < subset.per_class_count:
        raise SubsetCapacityError(f"Cannot hold out {validation_fraction:.0%} of {subset.per_class_count} per class",
                                  error_code="split_capacity")
    rng = np.random.default_rng([seed, 0x5B117])
    train, val = [], []
    for digit in range(N_CLASSES):
        bucket = subset.bucket(digit)
        held = set(rng.choice(len(bucket), size=n_val, replace=False).tolist())
        for i, image in enumerate(bucket):
            (val if i in held else train).append(image)
    keep_order = {image.index: pos for pos, image in enumerate(subset.images)}
    train.sort(key=lambda im: keep_order[im.index])
    val.sort(key=lambda im: keep_order[im.index])
    return (ClassBalancedSubset(subset.per_class_count - n_val, tuple(train), subset.seed),
            ClassBalancedSubset(n_val, tuple(val), subset.seed))

# ---------------------------------------------------------------------------
# Sequence pairs
# ---------------------------------------------------------------------------

def start_digits(context_length: int = 4, prediction_length: int = 4, wrap: bool = True) -> List[int]:
    """Start digits whose run fits, with or without modular wrap"""
    if wrap:
        return list(range(N_CLASSES))
    return list(range(N_CLASSES - context_length - prediction_length + 1))

def make_pair(subset: ClassBalancedSubset, start_digit: int, label: int, rng: np.random.Generator,
              context_length: int = 4, prediction_length: int = 4, wrap: bool = True) -> SequencePair:
    """
    Build one positive (label 1) or negative (label 0) sequence pair

    Draw order: context images, negative digits (rejection), target images.
    """
    if start_digit not in start_digits(context_length, prediction_length, wrap):
        raise DataError(f"Start digit {start_digit} not usable (wrap={wrap})")
    if label not in (0, 1):
        raise DataError(f"Pair label must be 0 or 1, got {label}")

    context = tuple((start_digit + i) % N_CLASSES for i in range(context_length))
    truth = continuation(context, prediction_length)
    context_images = tuple(_draw(subset, d, rng) for d in context)

    if label == 1:
        targets = truth
    else:
        while True:
            targets = tuple(int(d) for d in rng.integers(0, N_CLASSES, size=prediction_length))
            if targets != truth:
                break
    target_images = tuple(_draw(subset, d, rng) for d in targets)
    return SequencePair(context, targets, context_images, target_images, label)

def _draw(subset: ClassBalancedSubset, digit: int, rng: np.random.Generator) -> MnistImage:
    bucket = subset.bucket(digit)
    if not bucket:
        raise SubsetCapacityError(f"Subset has no images of class {digit}", error_code="empty_class")
    return bucket[int(rng.integers(len(bucket)))]

def generate_pairs(subset: ClassBalancedSubset, n_positive: int, n_negative: int, rng: np.random.Generator,
                   context_length: int = 4, prediction_length: int = 4, wrap: bool = True) -> List[SequencePair]:
    """Positives first, then negatives; start digits uniform over the usable ones"""
    starts = start_digits(context_length, prediction_length, wrap)
    pairs = []
    for label, count in ((1, n_positive), (0, n_negative)):
        for _ in range(count):
            start = starts[int(rng.integers(len(starts)))]
            pairs.append(make_pair(subset, start, label, rng, context_length, prediction_length, wrap))
    return pairs

def frozen_pairs(subset: ClassBalancedSubset, n_positive: int, n_negative: int, seed: int,
                 context_length: int = 4, prediction_length: int = 4, wrap: bool = True) -> List[SequencePair]:
    """Seeded, reproducible pair list (validation sets and regression tests)"""
    rng = np.random.default_rng([seed, 0xF20])
    return generate_pairs(subset, n_positive, n_negative, rng, context_length, prediction_length, wrap)

def batch_iter(pairs: Sequence[SequencePair], pos_per_batch: int, neg_per_batch: int,
               rng: np.random.Generator) -> Iterator[List[SequencePair]]:
    """Batches of exactly pos_per_batch positives and neg_per_batch negatives; remainder dropped"""
    positives = [p for p in pairs if p.label == 1]
    negatives = [p for p in pairs if p.label == 0]
    pos_order = rng.permutation(len(positives))
    neg_order = rng.permutation(len(negatives))
    n_batches = min(len(positives) // pos_per_batch, len(negatives) // neg_per_batch)
    dropped = len(positives) + len(negatives) - n_batches * (pos_per_batch + neg_per_batch)
    if dropped:
        logger.debug(f"Dropping {dropped} pairs that do not fill a complete batch")
    for b in range(n_batches):
        batch = [positives[i] for i in pos_order[b * pos_per_batch:(b + 1) * pos_per_batch]]
        batch += [negatives[i] for i in neg_order[b * neg_per_batch:(b + 1) * neg_per_batch]]
        yield [batch[i] for i in rng.permutation(len(batch))]

# ---------------------------------------------------------------------------
# Text dumps
# ---------------------------------------------------------------------------

SUBSET_HEADER = "# cpcsnn-subset v1"
PAIRS_HEADER = "# cpcsnn-pairs v1"

def subset_to_text(subset: ClassBalancedSubset) -> str:
    lines = [SUBSET_HEADER, f"per_class_count={subset.per_class_count},seed={subset.seed}"]
    lines += [f"{image.index},{image.label}" for image in subset.images]
    return "\n".join(lines) + "\n"

def pairs_to_text(pairs: Sequence[SequencePair]) -> str:
    def join(values):
        return ";".join(str(v) for v in values)
    lines = [PAIRS_HEADER]
    for p in pairs:
        lines.append(",".join([str(p.label), join(p.context_digits), join(p.target_digits),
                               join(p.context_indices), join(p.target_indices)]))
    return "\n".join(lines) + "\n"

def dump_subset(subset: ClassBalancedSubset, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(subset_to_text(subset))
    return path

def dump_pairs(pairs: Sequence[SequencePair], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(pairs_to_text(pairs))
    return path

def load_subset(path: Path, images_by_index: Dict[int, MnistImage]) -> ClassBalancedSubset:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != SUBSET_HEADER:
        raise DataError(f"{path} is not a subset dump")
    meta = dict(item.split("=") for item in lines[1].split(","))
    images = tuple(images_by_index[int(line.split(",")[0])] for line in lines[2:] if line)
    return ClassBalancedSubset(int(meta["per_class_count"]), images, int(meta["seed"]))

def load_pairs(path: Path, images_by_index: Dict[int, MnistImage]) -> List[SequencePair]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != PAIRS_HEADER:
        raise DataError(f"{path} is not a pairs dump")

    def ints(text):
        return tuple(int(v) for v in text.split(";"))

    pairs = []
    for line in lines[1:]:
        if not line:
            continue
        label, ctx, tgt, ctx_idx, tgt_idx = line.split(",")
        pairs.append(SequencePair(ints(ctx), ints(tgt),
                                  tuple(images_by_index[i] for i in ints(ctx_idx)),
                                  tuple(images_by_index[i] for i in ints(tgt_idx)),
                                  int(label)))
    return pairs
