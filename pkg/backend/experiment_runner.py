#!/usr/bin/env python3
"""
CPC-SNN Experiment Runner
Per seed: subset -> encoder -> encodings -> CPC head, then aggregation,
metrics files, summary JSON, accuracy curves and the Table 1 reproduction
"""

import copy
import json
import multiprocessing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from backend.curves import aggregate_runs, write_curves
from backend.system_status import run_provenance
from config.settings import Settings, DATASETS, ENCODINGS, get_logger
from services import nn_core
from services.cpc_core import (
    CpcModel, CpcRunResult, PairStream, TrainSchedule, save_cpc, train, validation_pairs, write_metrics,
)
from services.data_pipeline import ClassBalancedSubset, MnistImage, build_subset, load_mnist, split_subset
from services.encodings import EncodingTable, Standardizer, random_table
from services.lif_autoencoder import (
    ConvLifParams, FrozenEncoder, freeze_encoder, load_autoencoder, save_autoencoder, train_reconstruction,
)
from services.spike_codec import RateCodingParams
from services.stdp_encoder import (
    StdpNetworkState, encode_images, load_network, save_network, train_unsupervised,
)
from utils.exceptions import MissingArtifactError, handle_stage
from utils.logger import LogContext, setup_run_logging

logger = get_logger(__name__)

DATASET_FLAGS = {"2500": "MNIST-2500", "5000": "MNIST-5000"}
ENCODING_FLAGS = {"autoencoder": "snn_autoencoder", "classifier": "snn_classifier", "random": "random"}
ENCODING_TITLES = {"snn_autoencoder": "SNN-Autoencoder", "snn_classifier": "SNN-Classifier", "random": "Random"}
TRAIN_COMMANDS = {"snn_autoencoder": "train-autoencoder", "snn_classifier": "train-stdp"}

TABLE1_ROWS: Tuple[Tuple[str, str], ...] = (
    ("MNIST-2500", "snn_autoencoder"),
    ("MNIST-5000", "snn_autoencoder"),
    ("MNIST-2500", "snn_classifier"),
    ("MNIST-5000", "snn_classifier"),
    ("MNIST-2500", "random"),
)
# Published (max validation accuracy, mean stopping epoch) per row
REFERENCE_RESULTS = {
    ("MNIST-2500", "snn_autoencoder"): (0.9683, 62.67),
    ("MNIST-5000", "snn_autoencoder"): (0.9583, 44.33),
    ("MNIST-2500", "snn_classifier"): (0.8033, 57.33),
    ("MNIST-5000", "snn_classifier"): (0.7992, 55.00),
    ("MNIST-2500", "random"): (0.5558, 16.00),
}
ACCEPTANCE_BANDS = {"snn_autoencoder": (0.90, 1.0), "snn_classifier": (0.70, 1.0), "random": (0.45, 0.65)}
ORDERING = ("snn_autoencoder", "snn_classifier", "random")
ORDERING_GAP = 0.05

# Stream tags keep each seeded stage independent of the others
STDP_STREAM = 0x57D9
AUTOENCODER_STREAM = 0xAE
CPC_STREAM = 0xC9C

Encoder = Union[None, StdpNetworkState, FrozenEncoder]

# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------

@dataclass
class SeedOutcome:
    seed: int
    best_val_accuracy: float
    stopping_epoch: int
    val_accuracy_curve: List[float]
    metrics_path: Optional[str] = None

@dataclass
class RunSummary:
    """Per-seed max validation accuracy and stopping epoch with mean and sample std"""
    dataset: str
    encoding: str
    seeds: List[int]
    max_val_accuracy: List[float]
    stopping_epochs: List[int]
    curves: List[List[float]] = field(default_factory=list, repr=False)

    @staticmethod
    def _std(values: Sequence[float]) -> float:
        # Sample std (n - 1); a single seed has no spread to report
        return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.max_val_accuracy))

    @property
    def std_accuracy(self) -> float:
        return self._std(self.max_val_accuracy)

    @property
    def mean_epoch(self) -> float:
        return float(np.mean(self.stopping_epochs))

    @property
    def std_epoch(self) -> float:
        return self._std(self.stopping_epochs)

    def to_dict(self) -> Dict:
        return {
            "dataset": self.dataset,
            "encoding": self.encoding,
            "seeds": list(self.seeds),
            "max_val_accuracy": list(self.max_val_accuracy),
            "stopping_epochs": list(self.stopping_epochs),
            "mean_max_val_accuracy": self.mean_accuracy,
            "std_max_val_accuracy": self.std_accuracy,
            "mean_stopping_epoch": self.mean_epoch,
            "std_stopping_epoch": self.std_epoch,
        }

# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------

def encoder_checkpoint(settings: Settings, encoding: str, dataset: str, seed: int) -> Path:
    return settings.paths.encoders_path / f"{encoding}_{dataset}_seed{seed}.ckpt"

def run_dir(settings: Settings) -> Path:
    return settings.paths.out_dir / f"{settings.experiment.dataset}_{settings.experiment.encoding}"

def seed_metrics_path(settings: Settings, seed: int) -> Path:
    return run_dir(settings) / f"seed{seed}_metrics.csv"

# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def random_encoding(subset: ClassBalancedSubset, dim: int, seed: int) -> EncodingTable:
    """One fixed standard-normal vector per image, drawn once"""
    return random_table(subset.indices, [image.label for image in subset.images], dim, seed)

@handle_stage("subset")
def prepare_subset(images: Sequence[MnistImage], settings: Settings,
                   seed: int) -> Tuple[ClassBalancedSubset, ClassBalancedSubset, ClassBalancedSubset]:
    """Seeded subset plus its stratified train/validation split"""
    subset = build_subset(images, settings.experiment.per_class_count, seed)
    train_split, val_split = split_subset(subset, settings.data.validation_fraction, seed)
    return subset, train_split, val_split

def train_stdp_encoder(subset: ClassBalancedSubset, settings: Settings, seed: int) -> StdpNetworkState:
    rng = np.random.default_rng([seed, STDP_STREAM])
    return train_unsupervised(subset, settings.stdp.epochs, settings.stdp,
                              RateCodingParams.from_config(settings.codec), rng)

def train_autoencoder(subset: ClassBalancedSubset, settings: Settings, seed: int):
    rng = np.random.default_rng([seed, AUTOENCODER_STREAM])
    params = ConvLifParams.from_config(settings.autoencoder, rng)
    return train_reconstruction(subset, params, settings.autoencoder, rng)

@handle_stage("encoder")
def obtain_encoder(encoding: str, subset: ClassBalancedSubset, settings: Settings, seed: int) -> Encoder:
    """Load the seed's encoder checkpoint, or train and save it when allowed"""
    if encoding == "random":
        return None
    dataset = settings.experiment.dataset
    path = encoder_checkpoint(settings, encoding, dataset, seed)
    if not path.exists():
        if not settings.experiment.train_encoders:
            flag = [k for k, v in DATASET_FLAGS.items() if v == dataset][0]
            raise MissingArtifactError(
                f"Missing {ENCODING_TITLES[encoding]} checkpoint: {path}",
                artifact_path=str(path),
                hint=f"run `{TRAIN_COMMANDS[encoding]} --seed {seed} --dataset {flag}` "
                     f"or set experiment.train_encoders = true",
                error_code="missing_checkpoint")
        logger.info(f"🧠 No checkpoint at {path}; training {ENCODING_TITLES[encoding]} for seed {seed}")
        if encoding == "snn_classifier":
            save_network(train_stdp_encoder(subset, settings, seed), path, {"seed": seed, "dataset": dataset})
        else:
            params, history = train_autoencoder(subset, settings, seed)
            save_autoencoder(params, path, {"seed": seed, "dataset": dataset,
                                            "epoch_losses": history.epoch_losses})
    if encoding == "snn_classifier":
        return load_network(path)
    return freeze_encoder(load_autoencoder(path))

@handle_stage("encode")
def encode_subset(encoding: str, encoder: Encoder, subset: ClassBalancedSubset, settings: Settings,
                  seed: int) -> EncodingTable:
    if encoding == "random":
        return random_encoding(subset, settings.experiment.random_dim, seed)
    if encoding == "snn_classifier":
        vectors = encode_images(encoder, subset.images, RateCodingParams.from_config(settings.codec), seed,
                                workers=settings.stdp.workers)
        return EncodingTable.from_vectors(encoding, vectors)
    return EncodingTable.from_vectors(encoding, encoder.encode_images(list(subset.images)))

@handle_stage("cpc")
def train_cpc_head(table: EncodingTable, train_split: ClassBalancedSubset, val_split: ClassBalancedSubset,
                   settings: Settings, seed: int) -> CpcRunResult:
    data, cpc = settings.data, settings.cpc
    schedule = TrainSchedule.from_config(cpc, data, settings.experiment.seeds)
    rng = np.random.default_rng([seed, CPC_STREAM])
    standardizer = Standardizer.fit(table.lookup(train_split.indices))
    model = CpcModel.initial(table.dim, rng, cpc.hidden_size, data.prediction_length, data.context_length,
                             cpc.gain_init, standardizer)
    shape = (data.context_length, data.prediction_length, data.wrap)
    stream = PairStream(train_split, schedule, *shape, frozen_seed=seed if data.frozen_pairs else None)
    val_pairs = validation_pairs(val_split, schedule, seed, *shape)
    return train(model, table, stream, val_pairs, schedule, rng)

@handle_stage("artifacts")
def write_seed_artifacts(result: CpcRunResult, settings: Settings, seed: int) -> Path:
    metrics_path = write_metrics(result.metrics, seed_metrics_path(settings, seed))
    save_cpc(result.model, run_dir(settings) / f"seed{seed}_cpc.ckpt",
             {"seed": seed, "dataset": settings.experiment.dataset, "encoding": settings.experiment.encoding})
    return metrics_path

def run_seed(settings: Settings, seed: int, images: Optional[Sequence[MnistImage]] = None) -> SeedOutcome:
    """One complete seed; safe to run in a worker process"""
    exp = settings.experiment
    nn_core.set_precision(exp.precision, exp.debug_finite)
    with LogContext(logger, seed=seed):
        if images is None:
            images = load_mnist(settings.data.mnist_dir, "train")
        logger.info(f"🌱 Seed {seed}: {exp.dataset} / {ENCODING_TITLES[exp.encoding]}")
        subset, train_split, val_split = prepare_subset(images, settings, seed)
        encoder = obtain_encoder(exp.encoding, subset, settings, seed)
        table = encode_subset(exp.encoding, encoder, subset, settings, seed)
        result = train_cpc_head(table, train_split, val_split, settings, seed)
        metrics_path = write_seed_artifacts(result, settings, seed)
    return SeedOutcome(seed=seed, best_val_accuracy=float(result.best_val_accuracy),
                       stopping_epoch=result.stopping_epoch,
                       val_accuracy_curve=[m.val_accuracy for m in result.metrics],
                       metrics_path=str(metrics_path))

def run_experiment(settings: Settings, images: Optional[Sequence[MnistImage]] = None) -> RunSummary:
    """Every seed of one configuration, then the aggregate summary, JSON and SVG"""
    exp = settings.experiment
    settings.paths.ensure()
    out = run_dir(settings)
    out.mkdir(parents=True, exist_ok=True)
    setup_run_logging(f"{exp.dataset}_{exp.encoding}", out, settings.logging.level)

    seeds = list(exp.seeds)
    if exp.workers > 1 and len(seeds) > 1:
        logger.info(f"🔀 Running {len(seeds)} seeds on {min(exp.workers, len(seeds))} workers")
        # Pool workers are daemonic and cannot start their own encoding pool
        worker_settings = copy.deepcopy(settings)
        worker_settings.stdp.workers = 1
        with multiprocessing.Pool(min(exp.workers, len(seeds))) as pool:
            outcomes = pool.starmap(run_seed, [(worker_settings, seed, images) for seed in seeds])
    else:
        outcomes = [run_seed(settings, seed, images) for seed in seeds]

    summary = RunSummary(dataset=exp.dataset, encoding=exp.encoding, seeds=seeds,
                         max_val_accuracy=[o.best_val_accuracy for o in outcomes],
                         stopping_epochs=[o.stopping_epoch for o in outcomes],
                         curves=[o.val_accuracy_curve for o in outcomes])
    write_summary(summary, settings, out / "summary.json")
    write_curves({ENCODING_TITLES[exp.encoding]: aggregate_runs(summary.curves)}, out / "curves.svg",
                 title=f"{exp.dataset}: {ENCODING_TITLES[exp.encoding]} validation accuracy")
    logger.info(f"✅ {exp.dataset} / {ENCODING_TITLES[exp.encoding]}: max val acc "
                f"{summary.mean_accuracy:.4f} ± {summary.std_accuracy:.4f}, epoch {summary.mean_epoch:.2f}")
    return summary

def write_summary(summary: RunSummary, settings: Settings, path: Path) -> Path:
    payload = {
        "provenance": run_provenance(settings.experiment.timezone, settings.paths.out_dir),
        "config": settings.to_dict(),
        "summary": summary.to_dict(),
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path

# ---------------------------------------------------------------------------
# Table 1
# ---------------------------------------------------------------------------

@dataclass
class Table1Row:
    dataset: str
    encoding: str
    summary: RunSummary

    @property
    def in_band(self) -> bool:
        low, high = ACCEPTANCE_BANDS[self.encoding]
        return low <= self.summary.mean_accuracy <= high

@dataclass
class Table1Report:
    rows: List[Table1Row]
    ordering: Dict[str, Optional[bool]]
    text: str = ""

    @property
    def passed(self) -> bool:
        return all(r.in_band for r in self.rows) and all(v is not False for v in self.ordering.values())

def select_rows(dataset: Optional[str] = None, encoding: Optional[str] = None) -> List[Tuple[str, str]]:
    """Table 1 rows matching optional dataset / encoding filters"""
    for value, allowed in ((dataset, DATASETS), (encoding, ENCODINGS)):
        if value is not None and value not in allowed:
            raise ValueError(f"Unknown filter value {value!r}")
    return [(d, e) for d, e in TABLE1_ROWS if dataset in (None, d) and encoding in (None, e)]

def ordering_checks(rows: Sequence[Table1Row]) -> Dict[str, Optional[bool]]:
    """
    Per dataset: autoencoder > classifier > random, each gap at least ORDERING_GAP
    (None when fewer than two of the encodings were run)
    """
    checks: Dict[str, Optional[bool]] = {}
    for dataset in DATASETS:
        means = {r.encoding: r.summary.mean_accuracy for r in rows if r.dataset == dataset}
        present = [e for e in ORDERING if e in means]
        if len(present) < 2:
            checks[dataset] = None
            continue
        checks[dataset] = all(means[a] - means[b] >= ORDERING_GAP for a, b in zip(present, present[1:]))
    return checks

def format_table1(rows: Sequence[Table1Row], ordering: Dict[str, Optional[bool]]) -> str:
    header = ("Dataset", "Encoding Method", "Max Validation Accuracy", "Epoch", "Reference", "Band")
    body = []
    for r in rows:
        ref_acc, ref_epoch = REFERENCE_RESULTS[(r.dataset, r.encoding)]
        low, high = ACCEPTANCE_BANDS[r.encoding]
        body.append((r.dataset, ENCODING_TITLES[r.encoding],
                     f"{r.summary.mean_accuracy:.4f} ± {r.summary.std_accuracy:.4f}",
                     f"{r.summary.mean_epoch:.2f}",
                     f"{ref_acc:.4f} / {ref_epoch:.2f}",
                     f"{'PASS' if r.in_band else 'FAIL'} [{low:.2f}, {high:.2f}]"))
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in [header] + body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    for dataset, ok in ordering.items():
        if ok is not None:
            lines.append(f"Ordering {dataset} (autoencoder > classifier > random, gap >= {ORDERING_GAP}): "
                         f"{'PASS' if ok else 'FAIL'}")
    return "\n".join(lines) + "\n"

def reproduce_table1(settings: Settings, dataset: Optional[str] = None, encoding: Optional[str] = None,
                     images: Optional[Sequence[MnistImage]] = None) -> Table1Report:
    """Run the selected Table 1 configurations and write table1.txt with pass/fail flags"""
    selected = select_rows(dataset, encoding)
    if images is None and selected:
        images = load_mnist(settings.data.mnist_dir, "train")
    rows = []
    for row_dataset, row_encoding in selected:
        row_settings = copy.deepcopy(settings)
        row_settings.experiment.dataset = row_dataset
        row_settings.experiment.encoding = row_encoding
        rows.append(Table1Row(row_dataset, row_encoding, run_experiment(row_settings, images)))
    ordering = ordering_checks(rows)
    report = Table1Report(rows=rows, ordering=ordering, text=format_table1(rows, ordering))
    settings.paths.out_dir.mkdir(parents=True, exist_ok=True)
    (settings.paths.out_dir / "table1.txt").write_text(report.text)
    logger.info("\n" + report.text)
    return report
