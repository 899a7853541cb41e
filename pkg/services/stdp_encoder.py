#!/usr/bin/env python3
"""
CPC-SNN Classifier Encoder
784-input, 400-excitatory LIF network trained by unsupervised STDP and
used frozen to turn each image into a vector of excitatory spike counts.

Potentials are in mV and times in ms. Every step the network runs
exponential-Euler leak toward rest, then input kicks, lateral inhibition,
threshold and reset. STDP and homeostasis are applied only while learning.
"""

import multiprocessing
from dataclasses import dataclass, asdict, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.settings import StdpConfig, get_logger
from services.data_pipeline import ClassBalancedSubset, MnistImage
from services.spike_codec import RateCodingParams, SpikeTrain, adaptive_encode
from utils.checkpoints import save_arrays, load_arrays, checkpoint_digest
from utils.exceptions import ImmutabilityError, NumericalStabilityError, SimulationError
from utils.logger import log_execution_time

logger = get_logger(__name__)

CHECKPOINT_KIND = "stdp_network"
ENCODE_STREAM = 0xE7C  # per-image stream tag for frozen encoding

@dataclass(eq=False)
class StdpNetworkState:
    """Weights, adaptive thresholds and the transient neuron state of one network"""
    config: StdpConfig
    weights: np.ndarray      # (n_input, n_exc), in [0, w_max]
    theta: np.ndarray        # (n_exc,), mV above v_thresh_base
    v_exc: np.ndarray
    v_inh: np.ndarray
    x_pre: np.ndarray
    x_post: np.ndarray
    refractory_exc: np.ndarray
    refractory_inh: np.ndarray
    pending_inhibition: np.ndarray  # inhibitory spikes from the previous step
    frozen: bool = False

    @classmethod
    def initial(cls, config: StdpConfig, rng: np.random.Generator) -> "StdpNetworkState":
        weights = rng.uniform(config.init_weight_low, config.init_weight_high,
                              size=(config.n_input, config.n_exc))
        return cls.at_rest(config, weights, np.zeros(config.n_exc))

    @classmethod
    def at_rest(cls, config: StdpConfig, weights: np.ndarray, theta: np.ndarray) -> "StdpNetworkState":
        n_in, n_exc = config.n_input, config.n_exc
        if weights.shape != (n_in, n_exc) or theta.shape != (n_exc,):
            raise SimulationError(f"Network arrays {weights.shape}/{theta.shape} do not match "
                                  f"{n_in} inputs x {n_exc} neurons")
        return cls(config=config,
                   weights=np.array(weights, dtype=np.float64),
                   theta=np.array(theta, dtype=np.float64),
                   v_exc=np.full(n_exc, config.v_rest_mv),
                   v_inh=np.full(n_exc, config.v_rest_inh_mv),
                   x_pre=np.zeros(n_in),
                   x_post=np.zeros(n_exc),
                   refractory_exc=np.zeros(n_exc, dtype=np.int64),
                   refractory_inh=np.zeros(n_exc, dtype=np.int64),
                   pending_inhibition=np.zeros(n_exc, dtype=bool))

    def resting_copy(self) -> "StdpNetworkState":
        """Fresh transient state over the same weights and thresholds"""
        return StdpNetworkState.at_rest(self.config, self.weights, self.theta)

    def freeze(self) -> "StdpNetworkState":
        """Read-only view for encoding; learning through it is rejected"""
        frozen = self.resting_copy()
        frozen.weights.flags.writeable = False
        frozen.theta.flags.writeable = False
        frozen.frozen = True
        return frozen

    def checksum(self) -> str:
        return checkpoint_digest({"weights": self.weights, "theta": self.theta})

@dataclass(frozen=True, eq=False)
class EncodingVector400:
    """Excitatory spike counts over one presentation (400 with the default network)"""
    counts: np.ndarray
    image_index: int
    image_label: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1 or np.any(counts < 0):
            raise SimulationError(f"Encoding for image {self.image_index} must be a non-negative count vector")
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

# ---------------------------------------------------------------------------
# Plasticity
# ---------------------------------------------------------------------------

def stdp_step(state: StdpNetworkState, pre_spikes: np.ndarray, post_spikes: np.ndarray,
              dt_ms: float = 1.0) -> StdpNetworkState:
    """
    One trace-STDP update

    Traces decay by exp(-dt/tau_trace). A presynaptic spike depresses its
    row by eta_pre * x_post * w^mu, a postsynaptic spike potentiates its
    column by eta_post * x_pre * (w_max - w)^mu, both using the traces before
    this step's jumps. Spiking neurons then set their trace to 1.
    """
    if state.frozen:
        raise ImmutabilityError("Cannot apply plasticity to a frozen network", error_code="frozen")
    cfg = state.config
    decay = np.exp(-dt_ms / cfg.tau_trace_ms)
    state.x_pre *= decay
    state.x_post *= decay

    pre = np.flatnonzero(pre_spikes)
    post = np.flatnonzero(post_spikes)
    w = state.weights
    if pre.size:
        w[pre, :] -= cfg.eta_pre * state.x_post[None, :] * np.power(w[pre, :], cfg.mu)
    if post.size:
        w[:, post] += cfg.eta_post * state.x_pre[:, None] * np.power(cfg.w_max - w[:, post], cfg.mu)
    if pre.size or post.size:
        np.clip(w, 0.0, cfg.w_max, out=w)

    state.x_pre[pre] = 1.0
    state.x_post[post] = 1.0
    return state

def normalize_columns(weights: np.ndarray, column_sum: float, w_max: float) -> np.ndarray:
    """
    Rescale every column to sum to column_sum with entries in [0, w_max]

    Entries that would exceed w_max are pinned there and the remainder is
    redistributed over the others. All-zero columns become uniform.
    """
    w = np.clip(weights, 0.0, w_max)
    free = np.ones_like(w, dtype=bool)
    out = w
    for _ in range(w.shape[0]):
        pinned_sum = np.where(free, 0.0, w_max).sum(axis=0)
        free_sum = np.where(free, w, 0.0).sum(axis=0)
        scale = np.divide(column_sum - pinned_sum, free_sum, out=np.zeros_like(free_sum), where=free_sum > 0)
        out = np.where(free, w * scale[None, :], w_max)
        over = free & (out > w_max)
        if not over.any():
            break
        free &= ~over
    empty = w.sum(axis=0) == 0
    if empty.any():
        out[:, empty] = column_sum / w.shape[0]
    return out

# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

def _input_raster(train: SpikeTrain, n_input: int, dt_s: float) -> np.ndarray:
    """(n_steps, n_input) spike counts per step"""
    n_steps = int(round(train.delta_t / dt_s))
    raster = np.zeros((n_steps, n_input), dtype=np.int64)
    steps, pixels = train.step_events(dt_s)
    np.add.at(raster, (steps, pixels), 1)
    return raster

def simulate_presentation(state: StdpNetworkState, train: SpikeTrain, learning: bool,
                          dt_s: float = 0.001, image_index: int = -1,
                          image_label: int = -1) -> Tuple[StdpNetworkState, EncodingVector400]:
    """
    Step the network over one presentation window and count excitatory spikes

    The state is advanced in place (a network is owned by one simulation at
    a time) and returned with the spike-count encoding.
    """
    if learning and state.frozen:
        raise ImmutabilityError("Cannot learn through a frozen network", error_code="frozen")
    cfg = state.config
    dt_ms = dt_s * 1000.0
    raster = _input_raster(train, cfg.n_input, dt_s)

    decay_exc = np.exp(-dt_ms / cfg.tau_mem_exc_ms)
    decay_inh = np.exp(-dt_ms / cfg.tau_mem_inh_ms)
    decay_theta = np.exp(-dt_ms / cfg.tau_theta_ms)
    ref_exc = int(round(cfg.refractory_exc_ms / dt_ms))
    ref_inh = int(round(cfg.refractory_inh_ms / dt_ms))
    counts = np.zeros(cfg.n_exc, dtype=np.int64)

    for step_counts in raster:
        active_in = np.flatnonzero(step_counts)

        # Excitatory layer
        awake = state.refractory_exc == 0
        state.refractory_exc[~awake] -= 1
        v = state.v_exc
        v[awake] = cfg.v_rest_mv + (v[awake] - cfg.v_rest_mv) * decay_exc
        if active_in.size:
            drive = cfg.input_gain_mv * (step_counts[active_in] @ state.weights[active_in, :])
            v[awake] += drive[awake]
        n_inh = int(state.pending_inhibition.sum())
        if n_inh:
            others = n_inh - state.pending_inhibition.astype(np.int64)
            v[awake] -= cfg.inhibition_mv * others[awake]
            np.maximum(v, cfg.v_floor_mv, out=v)
        post = awake & (v >= cfg.v_thresh_base_mv + state.theta)
        v[post] = cfg.v_reset_mv
        state.refractory_exc[post] = ref_exc
        counts += post

        # Inhibitory partners
        awake_inh = state.refractory_inh == 0
        state.refractory_inh[~awake_inh] -= 1
        u = state.v_inh
        u[awake_inh] = cfg.v_rest_inh_mv + (u[awake_inh] - cfg.v_rest_inh_mv) * decay_inh
        u[awake_inh & post] += cfg.exc_inh_kick_mv
        inh_spikes = awake_inh & (u >= cfg.v_thresh_inh_mv)
        u[inh_spikes] = cfg.v_reset_inh_mv
        state.refractory_inh[inh_spikes] = ref_inh
        state.pending_inhibition = inh_spikes

        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(u))):
            raise NumericalStabilityError(f"Non-finite membrane potential while presenting image {image_index}",
                                          error_code="non_finite_membrane")

        if learning:
            stdp_step(state, step_counts > 0, post, dt_ms)
            state.theta *= decay_theta
            state.theta[post] += cfg.theta_plus_mv

    vector = EncodingVector400(counts=counts, image_index=image_index, image_label=image_label)
    return state, vector

def rest(state: StdpNetworkState, duration_ms: float, learning: bool = True) -> StdpNetworkState:
    """
    Silent-input interval, advanced in closed form

    Without input no neuron reaches threshold, so membranes relax
    exponentially toward rest and traces and thresholds decay.
    """
    cfg = state.config
    n_inh = int(state.pending_inhibition.sum())
    if n_inh:
        awake = state.refractory_exc == 0
        others = n_inh - state.pending_inhibition.astype(np.int64)
        state.v_exc[awake] = np.maximum(state.v_exc[awake] - cfg.inhibition_mv * others[awake], cfg.v_floor_mv)
        state.pending_inhibition = np.zeros(cfg.n_exc, dtype=bool)
    state.v_exc = cfg.v_rest_mv + (state.v_exc - cfg.v_rest_mv) * np.exp(-duration_ms / cfg.tau_mem_exc_ms)
    state.v_inh = cfg.v_rest_inh_mv + (state.v_inh - cfg.v_rest_inh_mv) * np.exp(-duration_ms / cfg.tau_mem_inh_ms)
    state.refractory_exc[:] = 0
    state.refractory_inh[:] = 0
    trace_decay = np.exp(-duration_ms / cfg.tau_trace_ms)
    state.x_pre *= trace_decay
    state.x_post *= trace_decay
    if learning:
        state.theta *= np.exp(-duration_ms / cfg.tau_theta_ms)
    return state

# ---------------------------------------------------------------------------
# Training and encoding
# ---------------------------------------------------------------------------

@log_execution_time
def train_unsupervised(subset: ClassBalancedSubset, epochs: int, config: StdpConfig,
                       codec: RateCodingParams, rng: np.random.Generator) -> StdpNetworkState:
    """Present every image (adaptive Poisson coding, then rest) with STDP, homeostasis and normalisation"""
    if len(subset) == 0:
        raise SimulationError("Cannot train on an empty subset")
    state = StdpNetworkState.initial(config, rng)
    if epochs <= 0:
        return state

    total = epochs * len(subset)
    report_every = max(1, total // 10)
    for epoch in range(epochs):
        for i, image in enumerate(subset.images):
            train = adaptive_encode(image, codec, rng, with_times=True)
            state, vector = simulate_presentation(state, train, learning=True, dt_s=codec.dt,
                                                  image_index=image.index, image_label=image.label)
            rest(state, config.rest_ms)
            state.weights = normalize_columns(state.weights, config.column_sum, config.w_max)
            done = epoch * len(subset) + i + 1
            if done % report_every == 0:
                logger.info(f"🧠 STDP {done}/{total}: {int(vector.counts.sum())} spikes, "
                            f"mean theta {state.theta.mean():.4f} mV")
    logger.info(f"✅ STDP training done ({epochs} epoch(s), {len(subset)} images)")
    return state

def encode_image(state: StdpNetworkState, image: MnistImage, codec: RateCodingParams,
                 rng: np.random.Generator) -> EncodingVector400:
    """Frozen encoding from a resting copy; the given state is never modified"""
    train = adaptive_encode(image, codec, rng, with_times=True)
    scratch = state.resting_copy()
    scratch.frozen = True
    _, vector = simulate_presentation(scratch, train, learning=False, dt_s=codec.dt,
                                      image_index=image.index, image_label=image.label)
    return vector

def image_stream(seed: int, image: MnistImage) -> np.random.Generator:
    """Per-image generator so results do not depend on worker scheduling"""
    return np.random.default_rng([seed, image.index, ENCODE_STREAM])

_WORKER: Dict[str, object] = {}

def _init_worker(state: StdpNetworkState, codec: RateCodingParams, seed: int):
    _WORKER.update(state=state, codec=codec, seed=seed)

def _encode_one(image: MnistImage) -> EncodingVector400:
    return encode_image(_WORKER["state"], image, _WORKER["codec"], image_stream(_WORKER["seed"], image))

@log_execution_time
def encode_images(state: StdpNetworkState, images: Sequence[MnistImage], codec: RateCodingParams,
                  seed: int, workers: int = 1) -> List[EncodingVector400]:
    """Encode many images with the frozen network, optionally across processes"""
    frozen = state if state.frozen else state.freeze()
    if workers <= 1:
        return [encode_image(frozen, image, codec, image_stream(seed, image)) for image in images]
    logger.info(f"🔀 Encoding {len(images)} images on {workers} workers")
    with multiprocessing.Pool(workers, initializer=_init_worker, initargs=(frozen, codec, seed)) as pool:
        return pool.map(_encode_one, images, chunksize=max(1, len(images) // (4 * workers)))

# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_network(state: StdpNetworkState, path: Path, metadata: Optional[Dict] = None) -> Path:
    meta = {"config": asdict(state.config)}
    meta.update(metadata or {})
    path = save_arrays(path, CHECKPOINT_KIND, {"weights": state.weights, "theta": state.theta}, meta)
    logger.info(f"💾 Saved STDP network to {path}")
    return path

def load_network(path: Path) -> StdpNetworkState:
    """Load weights and thresholds; the network comes back at rest and frozen"""
    arrays, meta = load_arrays(path, kind=CHECKPOINT_KIND)
    known = {f.name for f in fields(StdpConfig)}
    config = StdpConfig(**{k: v for k, v in meta.get("config", {}).items() if k in known})
    return StdpNetworkState.at_rest(config, arrays["weights"], arrays["theta"]).freeze()
