#!/usr/bin/env python3
"""
CPC-SNN Autoencoder Encoder
Convolutional LIF encoder trained with surrogate gradients to reconstruct
MNIST digits; the frozen encoder turns an image into the final post-reset
membrane of its deepest layer.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config.settings import AutoencoderConfig, get_logger
from services.data_pipeline import ClassBalancedSubset, MnistImage, IMAGE_SIDE
from services.nn_core import (
    Params, FrozenParams, as_tensor, get_dtype, conv2d, conv2d_backward, init_conv,
    upsample2d, upsample2d_backward, relu, relu_backward, sigmoid, mse_loss,
    adam_init, adam_update,
)
from utils.checkpoints import save_arrays, load_arrays, checkpoint_digest
from utils.exceptions import CheckpointError, ConfigurationError, DivergenceError, ImmutabilityError
from utils.logger import log_execution_time

logger = get_logger(__name__)

CHECKPOINT_KIND = "lif_autoencoder"

@dataclass(eq=False)
class ConvLifParams:
    """Layer stack, LIF constants and the encoder/decoder weights"""
    channels: Tuple[int, ...] = (8, 8)
    kernel_size: int = 3
    stride: int = 2
    beta: float = 0.9
    v_thresh: float = 1.0
    t_steps: int = 25
    surrogate_alpha: float = 2.0
    weights: Params = field(default_factory=dict)
    smooth_spikes: bool = False

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if not (0.0 < self.beta <= 1.0):
            raise ConfigurationError(f"beta must lie in (0, 1], got {self.beta}")
        if self.v_thresh <= 0 or self.t_steps < 1 or not self.channels:
            raise ConfigurationError("v_thresh must be positive, t_steps >= 1 and at least one layer")
        if IMAGE_SIDE % (self.stride ** len(self.channels)):
            raise ConfigurationError(f"{len(self.channels)} stride-{self.stride} layers do not tile a "
                                     f"{IMAGE_SIDE}x{IMAGE_SIDE} image")

    @classmethod
    def from_config(cls, config: AutoencoderConfig, rng: np.random.Generator) -> "ConvLifParams":
        params = cls(channels=config.channels, kernel_size=config.kernel_size, stride=config.stride,
                     beta=config.beta, v_thresh=config.v_thresh, t_steps=config.t_steps,
                     surrogate_alpha=config.surrogate_alpha)
        params.weights = init_weights(params, rng)
        return params

    @property
    def n_layers(self) -> int:
        return len(self.channels)

    @property
    def latent_shape(self) -> Tuple[int, int, int]:
        side = IMAGE_SIDE // (self.stride ** self.n_layers)
        return (self.channels[-1], side, side)

    @property
    def latent_dim(self) -> int:
        return int(np.prod(self.latent_shape))

    def with_weights(self, weights: Params) -> "ConvLifParams":
        return ConvLifParams(self.channels, self.kernel_size, self.stride, self.beta, self.v_thresh,
                             self.t_steps, self.surrogate_alpha, dict(weights), self.smooth_spikes)

    def hyperparameters(self) -> Dict:
        return {"channels": list(self.channels), "kernel_size": self.kernel_size, "stride": self.stride,
                "beta": self.beta, "v_thresh": self.v_thresh, "t_steps": self.t_steps,
                "surrogate_alpha": self.surrogate_alpha}

def encoder_keys(params: ConvLifParams) -> List[str]:
    return [f"enc{l}_kernel" for l in range(params.n_layers)]

def decoder_channels(params: ConvLifParams) -> List[int]:
    """Channel plan of the decoder: encoder channels reversed, ending in one output plane"""
    return list(params.channels[::-1]) + [1]

def init_weights(params: ConvLifParams, rng: np.random.Generator) -> Params:
    weights: Params = {}
    k = params.kernel_size
    in_ch = 1
    for l, out_ch in enumerate(params.channels):
        weights[f"enc{l}_kernel"] = init_conv(in_ch, out_ch, k, rng)
        in_ch = out_ch
    plan = decoder_channels(params)
    for i in range(params.n_layers):
        weights[f"dec{i}_kernel"] = init_conv(plan[i], plan[i + 1], k, rng)
        weights[f"dec{i}_bias"] = as_tensor(np.zeros(plan[i + 1]))
    return weights

@dataclass(frozen=True, eq=False)
class LatentVector:
    """Flattened deepest-layer membrane (392 values with the default stack)"""
    values: np.ndarray
    image_index: int
    image_label: int

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise DivergenceError(f"Latent for image {self.image_index} is not finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

# ---------------------------------------------------------------------------
# LIF dynamics
# ---------------------------------------------------------------------------

def spike_fn(x: np.ndarray, alpha: float, smooth: bool = False) -> np.ndarray:
    """Heaviside(x) or, in smooth mode, 0.5 + x / (1 + alpha |x|)"""
    if smooth:
        return 0.5 + x / (1.0 + alpha * np.abs(x))
    return (x >= 0).astype(x.dtype)

def spike_grad(x: np.ndarray, alpha: float) -> np.ndarray:
    """Fast-sigmoid surrogate 1 / (1 + alpha |x|)^2"""
    return 1.0 / (1.0 + alpha * np.abs(x)) ** 2

def lif_step(v_prev: np.ndarray, input_contribution: np.ndarray, beta: float,
             v_thresh: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    v = beta * v_prev + (1 - beta) * u; spike where v >= v_thresh;
    soft reset subtracts v_thresh from spiking units

    Returns (post-reset membrane, spikes).
    """
    v = beta * v_prev + (1.0 - beta) * input_contribution
    spikes = (v >= v_thresh).astype(v.dtype)
    return v - v_thresh * spikes, spikes

@dataclass
class _EncoderTrace:
    membranes: List[List[np.ndarray]]  # pre-reset membrane per step and layer
    spikes: List[List[np.ndarray]]

def _images_to_batch(images: Union[np.ndarray, Sequence[MnistImage]]) -> np.ndarray:
    if isinstance(images, np.ndarray):
        x = images
    else:
        x = np.stack([image.pixels for image in images])
    return as_tensor(x).reshape(-1, 1, IMAGE_SIDE, IMAGE_SIDE)

def _encoder_forward(x: np.ndarray, params: ConvLifParams, weights: Params,
                     keep_trace: bool = False) -> Tuple[np.ndarray, Optional[_EncoderTrace]]:
    kernels = [weights[k] for k in encoder_keys(params)]
    beta, theta, alpha = params.beta, params.v_thresh, params.surrogate_alpha
    static_drive = conv2d(x, kernels[0], params.stride)
    membranes = [0.0] * params.n_layers
    trace = _EncoderTrace([], []) if keep_trace else None
    for _ in range(params.t_steps):
        step_v, step_s = [], []
        upstream = None
        for l in range(params.n_layers):
            drive = static_drive if l == 0 else conv2d(upstream, kernels[l], params.stride)
            v = beta * membranes[l] + (1.0 - beta) * drive
            s = spike_fn(v - theta, alpha, params.smooth_spikes)
            membranes[l] = v - theta * s
            step_v.append(v)
            step_s.append(s)
            upstream = s
        if trace is not None:
            trace.membranes.append(step_v)
            trace.spikes.append(step_s)
    return membranes[-1], trace

def _encoder_backward(grad_latent: np.ndarray, x: np.ndarray, params: ConvLifParams, weights: Params,
                      trace: _EncoderTrace) -> Params:
    """BPTT through every layer and step; the soft reset is differentiated, not detached"""
    keys = encoder_keys(params)
    kernels = [weights[k] for k in keys]
    beta, theta, alpha = params.beta, params.v_thresh, params.surrogate_alpha
    grads = {k: np.zeros_like(weights[k]) for k in keys}
    grad_m: List = [0.0] * params.n_layers
    grad_m[-1] = grad_latent
    drive_grad_total = 0.0
    for t in reversed(range(params.t_steps)):
        grad_s = None
        for l in reversed(range(params.n_layers)):
            sg = spike_grad(trace.membranes[t][l] - theta, alpha)
            grad_v = grad_m[l] * (1.0 - theta * sg)
            if grad_s is not None:
                grad_v = grad_v + grad_s * sg
            grad_drive = (1.0 - beta) * grad_v
            if l == 0:
                drive_grad_total = drive_grad_total + grad_drive
            else:
                grad_s, dk, _ = conv2d_backward(grad_drive, trace.spikes[t][l - 1], kernels[l], params.stride)
                grads[keys[l]] += dk
            grad_m[l] = beta * grad_v
    _, dk0, _ = conv2d_backward(drive_grad_total, x, kernels[0], params.stride)
    grads[keys[0]] += dk0
    return grads

def _decoder_forward(latent_maps: np.ndarray, params: ConvLifParams, weights: Params):
    h = latent_maps
    cache = []
    last = params.n_layers - 1
    for i in range(params.n_layers):
        up = upsample2d(h, params.stride)
        pre = conv2d(up, weights[f"dec{i}_kernel"], 1, None, weights[f"dec{i}_bias"])
        h = sigmoid(pre) if i == last else relu(pre)
        cache.append((up, pre, h))
    return h, cache

def _decoder_backward(grad_out: np.ndarray, params: ConvLifParams, weights: Params, cache) -> Tuple[np.ndarray, Params]:
    grads: Params = {}
    g = grad_out
    last = params.n_layers - 1
    for i in reversed(range(params.n_layers)):
        up, pre, out = cache[i]
        g = g * out * (1.0 - out) if i == last else relu_backward(g, pre)
        g_up, dk, db = conv2d_backward(g, up, weights[f"dec{i}_kernel"], 1, None)
        grads[f"dec{i}_kernel"] = dk
        grads[f"dec{i}_bias"] = db
        g = upsample2d_backward(g_up, params.stride)
    return g, grads

# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def encode_batch(images: Union[np.ndarray, Sequence[MnistImage]], params: ConvLifParams) -> np.ndarray:
    """(batch, latent_dim) post-reset membranes after the last step"""
    x = _images_to_batch(images)
    latent, _ = _encoder_forward(x, params, params.weights)
    return latent.reshape(x.shape[0], -1)

def encode(image: MnistImage, params: ConvLifParams) -> LatentVector:
    """Present the static image for t_steps and read out the deepest membrane"""
    values = encode_batch([image], params)[0]
    return LatentVector(values=values, image_index=image.index, image_label=image.label)

def decode(latent: Union[LatentVector, np.ndarray], params: ConvLifParams) -> np.ndarray:
    """Reconstruct 28x28 image(s) in (0, 1) from latent vector(s)"""
    values = latent.values if isinstance(latent, LatentVector) else np.asarray(latent)
    single = values.ndim == 1
    flat = as_tensor(values).reshape(-1, params.latent_dim)
    maps = flat.reshape((flat.shape[0],) + params.latent_shape)
    out, _ = _decoder_forward(maps, params, params.weights)
    images = out.reshape(-1, IMAGE_SIDE, IMAGE_SIDE)
    return images[0] if single else images

def reconstruction_loss(x: np.ndarray, params: ConvLifParams, weights: Params) -> float:
    latent, _ = _encoder_forward(x, params, weights)
    out, _ = _decoder_forward(latent, params, weights)
    loss, _ = mse_loss(out, x)
    return loss

def reconstruction_loss_and_grads(x: np.ndarray, params: ConvLifParams,
                                  weights: Params) -> Tuple[float, Params]:
    """MSE between image and reconstruction with gradients for every weight"""
    latent, trace = _encoder_forward(x, params, weights, keep_trace=True)
    out, cache = _decoder_forward(latent, params, weights)
    loss, grad_out = mse_loss(out, x)
    grad_latent, grads = _decoder_backward(grad_out, params, weights, cache)
    grads.update(_encoder_backward(grad_latent, x, params, weights, trace))
    return loss, grads

@dataclass
class ReconstructionHistory:
    """Per-epoch mean training loss"""
    epoch_losses: List[float] = field(default_factory=list)

    def moving_average(self, window: int = 5) -> List[float]:
        out = []
        for i in range(len(self.epoch_losses)):
            chunk = self.epoch_losses[max(0, i - window + 1):i + 1]
            out.append(float(np.mean(chunk)))
        return out

@log_execution_time
def train_reconstruction(subset: ClassBalancedSubset, params: ConvLifParams, schedule: AutoencoderConfig,
                         rng: np.random.Generator) -> Tuple[ConvLifParams, ReconstructionHistory]:
    """Adam on the MSE reconstruction loss, batches reshuffled every epoch"""
    if params.smooth_spikes:
        raise ConfigurationError("Smooth spikes are a verification mode; train with hard spikes")
    x_all = _images_to_batch(subset.images)
    weights = {k: as_tensor(v) for k, v in params.weights.items()}
    adam = adam_init(weights, schedule.learning_rate)
    history = ReconstructionHistory()

    for epoch in range(1, schedule.epochs + 1):
        order = rng.permutation(x_all.shape[0])
        losses = []
        for start in range(0, len(order), schedule.batch_size):
            batch = x_all[order[start:start + schedule.batch_size]]
            loss, grads = reconstruction_loss_and_grads(batch, params, weights)
            if not np.isfinite(loss):
                raise DivergenceError(f"Reconstruction loss diverged in epoch {epoch}",
                                      epoch_report={"epoch": epoch, "batch_start": start,
                                                    "losses": history.epoch_losses},
                                      error_code="non_finite_loss")
            weights, adam = adam_update(weights, grads, adam)
            losses.append(loss)
        history.epoch_losses.append(float(np.mean(losses)))
        logger.info(f"🧠 Autoencoder epoch {epoch}/{schedule.epochs}: loss {history.epoch_losses[-1]:.5f} "
                    f"(5-epoch avg {history.moving_average()[-1]:.5f})")
    logger.info("✅ Autoencoder training done")
    return params.with_weights(weights), history

class FrozenEncoder:
    """Encode-only handle over trained encoder weights"""

    def __init__(self, params: ConvLifParams):
        frozen = params.with_weights({})
        frozen.weights = FrozenParams({k: params.weights[k] for k in encoder_keys(params)})
        object.__setattr__(self, "params", frozen)
        object.__setattr__(self, "checksum", checkpoint_digest(dict(self.params.weights)))

    def __setattr__(self, name, value):
        raise ImmutabilityError("Frozen encoder cannot be modified", error_code="frozen")

    @property
    def weights(self) -> FrozenParams:
        return self.params.weights

    @property
    def latent_dim(self) -> int:
        return self.params.latent_dim

    def encode(self, image: MnistImage) -> LatentVector:
        return encode(image, self.params)

    def encode_batch(self, images: Union[np.ndarray, Sequence[MnistImage]]) -> np.ndarray:
        return encode_batch(images, self.params)

    def encode_images(self, images: Sequence[MnistImage], batch_size: int = 256) -> List[LatentVector]:
        vectors = []
        for start in range(0, len(images), batch_size):
            chunk = images[start:start + batch_size]
            for image, values in zip(chunk, self.encode_batch(chunk)):
                vectors.append(LatentVector(values=values, image_index=image.index, image_label=image.label))
        return vectors

    def update(self, *args, **kwargs):
        raise ImmutabilityError("Frozen encoder rejects parameter updates", error_code="frozen")

def freeze_encoder(trained: ConvLifParams) -> FrozenEncoder:
    if trained.smooth_spikes:
        raise ConfigurationError("Cannot freeze a smooth-spike verification model")
    return FrozenEncoder(trained)

# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_autoencoder(params: ConvLifParams, path: Path, metadata: Optional[Dict] = None) -> Path:
    meta = {"hyperparameters": params.hyperparameters()}
    meta.update(metadata or {})
    path = save_arrays(path, CHECKPOINT_KIND, dict(params.weights), meta)
    logger.info(f"💾 Saved autoencoder to {path}")
    return path

def load_autoencoder(path: Path) -> ConvLifParams:
    arrays, meta = load_arrays(path, kind=CHECKPOINT_KIND)
    hp = meta.get("hyperparameters", {})
    params = ConvLifParams(**hp)
    params.weights = {k: v.astype(get_dtype()) for k, v in arrays.items()}
    missing = set(encoder_keys(params)) - set(params.weights)
    if missing:
        raise CheckpointError(f"Autoencoder checkpoint {path} lacks {sorted(missing)}")
    return params
