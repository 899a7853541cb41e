#!/usr/bin/env python3
"""
CPC-SNN Contrastive Predictive Coding Head
GRU context aggregation over encoded context images, one dense predictor
per future step, cosine scores averaged into a calibrated logit, BCE loss
and the patience-based training schedule
"""

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.settings import CpcConfig, DataConfig, get_logger
from services.data_pipeline import ClassBalancedSubset, SequencePair, batch_iter, frozen_pairs, generate_pairs
from services.encodings import EncodingTable, Standardizer
from services.nn_core import (
    Params, as_tensor, get_dtype, init_gru, gru_sequence, gru_sequence_backward,
    sigmoid, bce_with_logits, adam_init, adam_update,
)
from utils.checkpoints import save_arrays, load_arrays
from utils.exceptions import (
    ConfigurationError, DivergenceError, ImmutabilityError, ScoringError, ShapeMismatchError,
)
from utils.logger import log_execution_time

logger = get_logger(__name__)

CHECKPOINT_KIND = "cpc_model"
METRICS_HEADER = "# cpcsnn-metrics v1"

# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class CpcModel:
    """GRU + per-step predictors + scalar logit calibration over standardised encodings"""
    params: Params
    standardizer: Standardizer
    context_length: int = 4
    prediction_length: int = 4

    @classmethod
    def initial(cls, input_dim: int, rng: np.random.Generator, hidden_size: int = 256,
                prediction_length: int = 4, context_length: int = 4, gain_init: float = 5.0,
                standardizer: Optional[Standardizer] = None) -> "CpcModel":
        params = init_gru(input_dim, hidden_size, rng)
        bound = 1.0 / np.sqrt(hidden_size)
        params["pred_W"] = as_tensor(rng.uniform(-bound, bound, size=(prediction_length, input_dim, hidden_size)))
        params["pred_b"] = as_tensor(np.zeros((prediction_length, input_dim)))
        params["gain"] = as_tensor(gain_init)
        params["bias"] = as_tensor(0.0)
        return cls(params=params, standardizer=standardizer or Standardizer.identity(input_dim),
                   context_length=context_length, prediction_length=prediction_length)

    @property
    def input_dim(self) -> int:
        return self.params["W_z"].shape[1]

    @property
    def hidden_size(self) -> int:
        return self.params["U_z"].shape[0]

    def with_params(self, params: Params) -> "CpcModel":
        return CpcModel(dict(params), self.standardizer, self.context_length, self.prediction_length)

    def standardize(self, encodings: np.ndarray) -> np.ndarray:
        if encodings.shape[-1] != self.input_dim:
            raise ShapeMismatchError(f"Encodings of dim {encodings.shape[-1]} fed to a CPC model of dim "
                                     f"{self.input_dim}")
        return as_tensor(self.standardizer.apply(encodings))

@dataclass(frozen=True)
class ScoredSequence:
    """Per-step scores and the calibrated decision for one pair"""
    step_scores: Tuple[float, ...]
    mean_score: float
    logit: float
    probability: float
    label: int

    @property
    def prediction(self) -> int:
        return int(self.probability > 0.5)

def _predict(context_std: np.ndarray, params: Params):
    hidden, caches = gru_sequence(context_std, params)
    predictions = np.einsum("bh,tdh->btd", hidden, params["pred_W"]) + params["pred_b"]
    return predictions, hidden, caches

def predict_future(context: np.ndarray, model: CpcModel) -> np.ndarray:
    """
    Predicted encodings for every future step

    context is (context_length, d) or (batch, context_length, d) of raw
    encodings; standardisation happens here.
    """
    context = np.asarray(context)
    single = context.ndim == 2
    batch = context[None] if single else context
    if batch.shape[1] != model.context_length:
        raise ShapeMismatchError(f"Context of length {batch.shape[1]}, model expects {model.context_length}")
    predictions, _, _ = _predict(model.standardize(batch), model.params)
    return predictions[0] if single else predictions

def cosine_scores(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Cosine of matching rows along the last axis"""
    if p.shape != y.shape:
        raise ShapeMismatchError(f"score: predictions {p.shape} vs targets {y.shape}")
    p_norm = np.linalg.norm(p, axis=-1)
    y_norm = np.linalg.norm(y, axis=-1)
    if np.any(p_norm == 0) or np.any(y_norm == 0):
        raise ScoringError("Cannot score a zero-norm vector", error_code="zero_norm")
    return np.sum(p * y, axis=-1) / (p_norm * y_norm)

def score(p: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(s_t, mean over t): dot products of l2-normalised predictions and targets"""
    s = cosine_scores(np.asarray(p, dtype=np.float64), np.asarray(y, dtype=np.float64))
    return s, s.mean(axis=-1)

def bce_loss(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean BCE of sigmoid(logits) in log-sum-exp form; gradient (y_hat - y) / N"""
    return bce_with_logits(np.asarray(logits, dtype=np.float64), np.asarray(labels, dtype=np.float64))

def cpc_forward_backward(params: Params, context_std: np.ndarray, target_std: np.ndarray,
                         labels: np.ndarray, need_grads: bool = True):
    """
    Loss, gradients and logits for one batch

    GRU, predictors, gain and bias all receive gradients; the encodings are
    treated as constants.
    """
    predictions, hidden, caches = _predict(context_std, params)
    y = target_std
    dot = np.sum(predictions * y, axis=-1)
    p_norm = np.linalg.norm(predictions, axis=-1)
    y_norm = np.linalg.norm(y, axis=-1)
    if np.any(p_norm == 0) or np.any(y_norm == 0):
        raise ScoringError("Cannot score a zero-norm vector", error_code="zero_norm")
    cos = dot / (p_norm * y_norm)
    mean = cos.mean(axis=-1)
    logits = params["gain"] * mean + params["bias"]
    loss, d_logits = bce_with_logits(logits, labels)
    if not need_grads:
        return loss, None, logits, cos

    grads: Params = {"gain": np.asarray(np.sum(d_logits * mean)), "bias": np.asarray(np.sum(d_logits))}
    d_cos = (d_logits * params["gain"])[:, None] / cos.shape[1]
    d_pred = d_cos[..., None] * (y / (p_norm * y_norm)[..., None]
                                 - cos[..., None] * predictions / (p_norm ** 2)[..., None])
    grads["pred_W"] = np.einsum("btd,bh->tdh", d_pred, hidden)
    grads["pred_b"] = d_pred.sum(axis=0)
    d_hidden = np.einsum("btd,tdh->bh", d_pred, params["pred_W"])
    gru_grads, _ = gru_sequence_backward(d_hidden, caches, params)
    grads.update(gru_grads)
    return loss, grads, logits, cos

def score_pairs(model: CpcModel, encodings: EncodingTable, pairs: Sequence[SequencePair]) -> List[ScoredSequence]:
    context, target, labels = encodings.pair_arrays(pairs)
    _, _, logits, cos = cpc_forward_backward(model.params, model.standardize(context),
                                             model.standardize(target), labels, need_grads=False)
    probabilities = sigmoid(logits)
    return [ScoredSequence(step_scores=tuple(float(v) for v in cos[i]), mean_score=float(cos[i].mean()),
                           logit=float(logits[i]), probability=float(probabilities[i]), label=int(labels[i]))
            for i in range(len(pairs))]

# ---------------------------------------------------------------------------
# Schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainSchedule:
    """Optimiser, batch composition and patience settings for one CPC run"""
    learning_rate: float = 1e-4
    train_positives: int = 32
    train_negatives: int = 32
    val_positives: int = 10
    val_negatives: int = 10
    train_batches_per_epoch: int = 64
    validation_batches: int = 10
    max_epochs: int = 100
    early_stop_patience: int = 10
    lr_patience: int = 3
    lr_factor: float = 0.5
    seeds: Tuple[int, ...] = (1, 2, 3)

    def __post_init__(self):
        counts = (self.train_positives, self.train_negatives, self.val_positives, self.val_negatives,
                  self.train_batches_per_epoch, self.validation_batches, self.max_epochs)
        if min(counts) <= 0 or self.early_stop_patience < 1 or self.lr_patience < 1:
            raise ConfigurationError("Schedule counts must be positive and patience values at least 1")

    @classmethod
    def from_config(cls, cpc: CpcConfig, data: DataConfig, seeds: Tuple[int, ...] = (1, 2, 3)) -> "TrainSchedule":
        return cls(learning_rate=cpc.learning_rate, train_positives=cpc.train_positives,
                   train_negatives=cpc.train_negatives, val_positives=cpc.val_positives,
                   val_negatives=cpc.val_negatives, train_batches_per_epoch=data.train_batches_per_epoch,
                   validation_batches=data.validation_batches, max_epochs=cpc.max_epochs,
                   early_stop_patience=cpc.early_stop_patience, lr_patience=cpc.lr_patience,
                   lr_factor=cpc.lr_factor, seeds=tuple(seeds))

@dataclass(frozen=True)
class MonitorDecision:
    halve_lr: bool
    stop: bool
    reason: str = ""

class TrainingMonitor:
    """
    Patience bookkeeping on validation metrics

    Improvement means strictly better than the best value so far. Validation
    loss drives the learning-rate cut; validation accuracy drives stopping.
    With lr_patience 3 and a stalled loss after epoch 1, the cut is decided
    at the end of epoch 4 and the halved rate is first used in epoch 5.
    """

    def __init__(self, schedule: TrainSchedule):
        self.schedule = schedule
        self.best_loss = math.inf
        self.best_accuracy = -math.inf
        self.best_epoch = 0
        self.loss_stale = 0
        self.accuracy_stale = 0

    def observe(self, epoch: int, val_loss: float, val_accuracy: float) -> MonitorDecision:
        if val_accuracy > self.best_accuracy:
            self.best_accuracy = val_accuracy
            self.best_epoch = epoch
            self.accuracy_stale = 0
        else:
            self.accuracy_stale += 1

        halve = False
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.loss_stale = 0
        else:
            self.loss_stale += 1
            if self.loss_stale >= self.schedule.lr_patience:
                halve = True
                self.loss_stale = 0

        if self.accuracy_stale >= self.schedule.early_stop_patience:
            return MonitorDecision(halve, True, "early_stop")
        if epoch >= self.schedule.max_epochs:
            return MonitorDecision(halve, True, "max_epochs")
        return MonitorDecision(halve, False)

@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    learning_rate: float

@dataclass
class CpcRunResult:
    """Trained model with its per-epoch history"""
    model: CpcModel
    metrics: List[EpochMetrics] = field(default_factory=list)
    best_val_accuracy: float = float("nan")
    best_epoch: int = 0
    stop_reason: str = ""

    @property
    def stopping_epoch(self) -> int:
        return self.metrics[-1].epoch if self.metrics else 0

# ---------------------------------------------------------------------------
# Pair streams
# ---------------------------------------------------------------------------

class PairStream:
    """Training pairs per epoch: regenerated from the rng, or one frozen seeded set"""

    def __init__(self, subset: ClassBalancedSubset, schedule: TrainSchedule, context_length: int = 4,
                 prediction_length: int = 4, wrap: bool = True, frozen_seed: Optional[int] = None):
        self.subset = subset
        self.schedule = schedule
        self.shape = (context_length, prediction_length, wrap)
        self._frozen = None
        if frozen_seed is not None:
            self._frozen = frozen_pairs(subset, *self._counts(), frozen_seed, *self.shape)

    def _counts(self) -> Tuple[int, int]:
        n = self.schedule.train_batches_per_epoch
        return n * self.schedule.train_positives, n * self.schedule.train_negatives

    def epoch_pairs(self, rng: np.random.Generator) -> List[SequencePair]:
        if self._frozen is not None:
            return self._frozen
        return generate_pairs(self.subset, *self._counts(), rng, *self.shape)

def validation_pairs(subset: ClassBalancedSubset, schedule: TrainSchedule, seed: int, context_length: int = 4,
                     prediction_length: int = 4, wrap: bool = True) -> List[SequencePair]:
    """Fixed seeded validation set: validation_batches x (val_positives + val_negatives)"""
    n = schedule.validation_batches
    return frozen_pairs(subset, n * schedule.val_positives, n * schedule.val_negatives, seed,
                        context_length, prediction_length, wrap)

# ---------------------------------------------------------------------------
# Training and evaluation
# ---------------------------------------------------------------------------

def decision_accuracy(probabilities: np.ndarray, labels: np.ndarray) -> float:
    """Fraction correct under the strict probability > 0.5 rule (0.5 counts as negative)"""
    predictions = np.asarray(probabilities) > 0.5
    return float(np.mean(predictions == (np.asarray(labels) > 0.5)))

def evaluate(model: CpcModel, encodings: EncodingTable, pairs: Sequence[SequencePair]) -> Tuple[float, float]:
    """(accuracy, mean BCE loss) with the strict probability > 0.5 rule"""
    if not pairs:
        return float("nan"), float("nan")
    context, target, labels = encodings.pair_arrays(pairs)
    loss, _, logits, _ = cpc_forward_backward(model.params, model.standardize(context),
                                              model.standardize(target), labels, need_grads=False)
    return decision_accuracy(sigmoid(logits), labels), float(loss)

@log_execution_time
def train(model: CpcModel, encodings: EncodingTable, stream: PairStream, val_pairs: Sequence[SequencePair],
          schedule: TrainSchedule, rng: np.random.Generator,
          on_epoch: Optional[Callable[[EpochMetrics], None]] = None) -> CpcRunResult:
    """
    Adam on the CPC head only; the encoding table is never written

    Stops early after early_stop_patience epochs without a better validation
    accuracy and always by max_epochs. The learning rate is multiplied by
    lr_factor after lr_patience epochs without a better validation loss,
    starting with the next epoch; metrics record the rate each epoch used.
    """
    encoder_checksum = encodings.checksum()
    params = {k: as_tensor(v) for k, v in model.params.items()}
    adam = adam_init(params, schedule.learning_rate)
    monitor = TrainingMonitor(schedule)
    result = CpcRunResult(model=model)

    for epoch in range(1, schedule.max_epochs + 1):
        lr = adam.learning_rate
        batch_losses, batch_acc = [], []
        for b, batch in enumerate(batch_iter(stream.epoch_pairs(rng), schedule.train_positives,
                                             schedule.train_negatives, rng)):
            context, target, labels = encodings.pair_arrays(batch)
            report = {"epoch": epoch, "batch": b, "learning_rate": lr,
                      "history": [asdict(m) for m in result.metrics[-3:]]}
            loss, grads, logits, _ = cpc_forward_backward(params, model.standardize(context),
                                                          model.standardize(target), labels)
            if not np.isfinite(loss):
                raise DivergenceError(f"CPC loss diverged in epoch {epoch}", epoch_report=report,
                                      error_code="non_finite_loss")
            try:
                params, adam = adam_update(params, grads, adam)
            except DivergenceError as e:
                raise DivergenceError(e.message, epoch_report=report, error_code=e.error_code) from e
            batch_losses.append(loss)
            batch_acc.append(decision_accuracy(sigmoid(logits), labels))

        trained = model.with_params(params)
        val_accuracy, val_loss = evaluate(trained, encodings, val_pairs)
        metrics = EpochMetrics(epoch, float(np.mean(batch_losses)), float(np.mean(batch_acc)),
                               val_loss, val_accuracy, lr)
        result.metrics.append(metrics)
        if on_epoch is not None:
            on_epoch(metrics)
        logger.info(f"📈 Epoch {epoch}: train loss {metrics.train_loss:.4f}, val loss {val_loss:.4f}, "
                    f"val acc {val_accuracy:.3f}, lr {lr:.2e}")

        decision = monitor.observe(epoch, val_loss, val_accuracy)
        if decision.halve_lr:
            adam.learning_rate *= schedule.lr_factor
            logger.info(f"🔻 Validation loss stalled; learning rate -> {adam.learning_rate:.2e}")
        if decision.stop:
            result.stop_reason = decision.reason
            break

    if encodings.checksum() != encoder_checksum:
        raise ImmutabilityError("Encoder outputs changed during CPC training", error_code="encoder_mutated")
    result.model = model.with_params(params)
    result.best_val_accuracy = monitor.best_accuracy
    result.best_epoch = monitor.best_epoch
    logger.info(f"✅ CPC done at epoch {result.stopping_epoch} ({result.stop_reason}); "
                f"best val acc {result.best_val_accuracy:.3f} at epoch {result.best_epoch}")
    return result

# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def metrics_to_csv(metrics: Sequence[EpochMetrics]) -> str:
    """epoch, split, loss, accuracy, learning_rate; floats in round-trip form"""
    lines = [METRICS_HEADER, "epoch,split,loss,accuracy,learning_rate"]
    for m in metrics:
        lines.append(f"{m.epoch},train,{m.train_loss!r},{m.train_accuracy!r},{m.learning_rate!r}")
        lines.append(f"{m.epoch},validation,{m.val_loss!r},{m.val_accuracy!r},{m.learning_rate!r}")
    return "\n".join(lines) + "\n"

def write_metrics(metrics: Sequence[EpochMetrics], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(metrics_to_csv(metrics))
    return path

def read_metrics(path: Path) -> List[EpochMetrics]:
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2 or lines[0] != METRICS_HEADER:
        raise ShapeMismatchError(f"{path} is not a metrics file")
    rows: Dict[int, Dict[str, Tuple[float, float, float]]] = {}
    for line in lines[2:]:
        if not line:
            continue
        epoch, split, loss, acc, lr = line.split(",")
        rows.setdefault(int(epoch), {})[split] = (float(loss), float(acc), float(lr))
    out = []
    for epoch in sorted(rows):
        t, v = rows[epoch]["train"], rows[epoch]["validation"]
        out.append(EpochMetrics(epoch, t[0], t[1], v[0], v[1], t[2]))
    return out

def save_cpc(model: CpcModel, path: Path, metadata: Optional[Dict] = None) -> Path:
    arrays = dict(model.params)
    arrays["std_mean"] = model.standardizer.mean
    arrays["std_scale"] = model.standardizer.scale
    meta = {"context_length": model.context_length, "prediction_length": model.prediction_length,
            "hidden_size": model.hidden_size, "input_dim": model.input_dim}
    meta.update(metadata or {})
    return save_arrays(path, CHECKPOINT_KIND, arrays, meta)

def load_cpc(path: Path) -> CpcModel:
    arrays, meta = load_arrays(path, kind=CHECKPOINT_KIND)
    standardizer = Standardizer(mean=arrays.pop("std_mean"), scale=arrays.pop("std_scale"))
    params = {k: v.astype(get_dtype()) for k, v in arrays.items()}
    return CpcModel(params, standardizer, int(meta["context_length"]), int(meta["prediction_length"]))
