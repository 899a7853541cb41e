#!/usr/bin/env python3
"""
CPC-SNN Encoding Tables
Frozen image-index -> vector lookups shared by every encoder, plus the
standardisation statistics and class-similarity report built on them
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from config.settings import get_logger
from services.data_pipeline import N_CLASSES, SequencePair
from utils.checkpoints import checkpoint_digest
from utils.exceptions import DataError, EncodingError, ShapeMismatchError

logger = get_logger(__name__)

ENCODINGS_HEADER = "# cpcsnn-encodings v1"

@dataclass(eq=False)
class EncodingTable:
    """Read-only vectors for a set of images, one row per image index"""
    kind: str
    indices: np.ndarray
    labels: np.ndarray
    vectors: np.ndarray
    _rows: Dict[int, int] = field(default=None, repr=False)

    def __post_init__(self):
        self.indices = np.array(self.indices, dtype=np.int64).reshape(-1)
        self.labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        self.vectors = np.array(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or len(self.vectors) != len(self.indices) or len(self.labels) != len(self.indices):
            raise ShapeMismatchError(f"Encoding table {self.kind}: {len(self.indices)} indices, "
                                     f"{len(self.labels)} labels, vectors {self.vectors.shape}")
        if not np.all(np.isfinite(self.vectors)):
            raise EncodingError(f"Encoding table {self.kind} holds non-finite values")
        self._rows = {int(i): r for r, i in enumerate(self.indices)}
        if len(self._rows) != len(self.indices):
            raise DataError(f"Encoding table {self.kind} has duplicate image indices")
        for array in (self.indices, self.labels, self.vectors):
            array.flags.writeable = False

    @classmethod
    def from_vectors(cls, kind: str, vectors: Iterable) -> "EncodingTable":
        """Build from EncodingVector400 / LatentVector records"""
        vectors = list(vectors)
        values = [np.asarray(v.counts if hasattr(v, "counts") else v.values, dtype=np.float64)
                  for v in vectors]
        return cls(kind=kind,
                   indices=np.array([v.image_index for v in vectors], dtype=np.int64),
                   labels=np.array([v.image_label for v in vectors], dtype=np.int64),
                   vectors=np.stack(values) if values else np.zeros((0, 0)))

    def __len__(self) -> int:
        return len(self.indices)

    def __contains__(self, index: int) -> bool:
        return int(index) in self._rows

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def lookup(self, indices: Sequence[int]) -> np.ndarray:
        try:
            rows = [self._rows[int(i)] for i in indices]
        except KeyError as e:
            raise EncodingError(f"Image {e.args[0]} has no {self.kind} encoding", error_code="missing_encoding",
                                details={"image_index": int(e.args[0])}) from e
        return self.vectors[rows]

    def pair_arrays(self, pairs: Sequence[SequencePair]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(context (B, Tc, d), target (B, Tp, d), labels (B,)) for a batch of pairs"""
        context = np.stack([self.lookup(p.context_indices) for p in pairs])
        target = np.stack([self.lookup(p.target_indices) for p in pairs])
        labels = np.array([p.label for p in pairs], dtype=np.float64)
        return context, target, labels

    def restrict(self, indices: Sequence[int]) -> "EncodingTable":
        rows = [self._rows[int(i)] for i in indices]
        return EncodingTable(self.kind, self.indices[rows], self.labels[rows], self.vectors[rows])

    def checksum(self) -> str:
        return checkpoint_digest({"indices": self.indices, "vectors": self.vectors})

@dataclass(frozen=True, eq=False)
class Standardizer:
    """Per-dimension zero-mean / unit-variance map fitted on training encodings"""
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, vectors: np.ndarray) -> "Standardizer":
        vectors = np.asarray(vectors, dtype=np.float64)
        if len(vectors) == 0:
            raise EncodingError("Cannot fit standardisation on zero vectors")
        std = vectors.std(axis=0)
        # Constant dimensions (silent neurons) pass through centred
        scale = np.where(std > 1e-12, std, 1.0)
        return cls(mean=vectors.mean(axis=0), scale=scale)

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(mean=np.zeros(dim), scale=np.ones(dim))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale

@dataclass
class SimilarityReport:
    """Mean pairwise cosine similarity within and between digit classes"""
    within: float
    between: float
    n_vectors: int
    n_zero: int

    @property
    def gap(self) -> float:
        return self.within - self.between

def similarity_report(table: EncodingTable) -> SimilarityReport:
    """
    Exact means over all unordered pairs, computed from per-class sums of
    unit vectors. Zero vectors have no direction and are left out.
    """
    norms = np.linalg.norm(table.vectors, axis=1)
    keep = norms > 0
    units = table.vectors[keep] / norms[keep, None]
    labels = table.labels[keep]
    total = units.sum(axis=0)
    within_sum, within_pairs, class_sq = 0.0, 0, 0.0
    for c in range(N_CLASSES):
        members = units[labels == c]
        n = len(members)
        if n == 0:
            continue
        s = members.sum(axis=0)
        sq = float(s @ s)
        class_sq += sq
        within_sum += (sq - n) / 2.0
        within_pairs += n * (n - 1) // 2
    n_all = len(units)
    counts = np.bincount(labels, minlength=N_CLASSES)
    between_pairs = (n_all * n_all - int((counts ** 2).sum())) // 2
    between_sum = (float(total @ total) - class_sq) / 2.0
    return SimilarityReport(
        within=within_sum / within_pairs if within_pairs else float("nan"),
        between=between_sum / between_pairs if between_pairs else float("nan"),
        n_vectors=len(table),
        n_zero=int((~keep).sum()),
    )

def random_table(indices: Sequence[int], labels: Sequence[int], dim: int, seed: int) -> EncodingTable:
    """Standard-normal vectors per image, independent of pixel content"""
    rng = np.random.default_rng([seed, 0x4A2D])
    return EncodingTable(kind="random", indices=np.asarray(indices), labels=np.asarray(labels),
                         vectors=rng.standard_normal((len(indices), dim)))

# ---------------------------------------------------------------------------
# Text dumps
# ---------------------------------------------------------------------------

def table_to_text(table: EncodingTable) -> str:
    integral = bool(np.all(table.vectors == np.round(table.vectors)))
    fmt = (lambda v: str(int(v))) if integral else (lambda v: f"{v:.17g}")
    lines = [ENCODINGS_HEADER, f"kind={table.kind},dim={table.dim if len(table) else 0}"]
    for index, label, row in zip(table.indices, table.labels, table.vectors):
        lines.append(",".join([str(int(index)), str(int(label))] + [fmt(v) for v in row]))
    return "\n".join(lines) + "\n"

def dump_encodings(table: EncodingTable, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(table_to_text(table))
    logger.info(f"💾 Wrote {len(table)} {table.kind} encodings to {path}")
    return path

def load_encodings(path: Path) -> EncodingTable:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != ENCODINGS_HEADER:
        raise DataError(f"{path} is not an encodings dump")
    meta = dict(item.split("=", 1) for item in lines[1].split(","))
    dim = int(meta["dim"])
    indices: List[int] = []
    labels: List[int] = []
    rows: List[List[float]] = []
    for line in lines[2:]:
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != dim + 2:
            raise DataError(f"{path}: row for image {parts[0]} has {len(parts) - 2} values, expected {dim}")
        indices.append(int(parts[0]))
        labels.append(int(parts[1]))
        rows.append([float(v) for v in parts[2:]])
    vectors = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    return EncodingTable(meta["kind"], np.array(indices, dtype=np.int64), np.array(labels, dtype=np.int64), vectors)
