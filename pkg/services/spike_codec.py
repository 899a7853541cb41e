#!/usr/bin/env python3
"""
CPC-SNN Spike Codec
Poisson rate coding of images with the adaptive intensity retry
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from config.settings import CodecConfig, get_logger
from services.data_pipeline import MnistImage
from utils.exceptions import ConfigurationError, EncodingError, EncodingFailureError

logger = get_logger(__name__)

@dataclass(frozen=True)
class RateCodingParams:
    """Poisson coding constants; times in seconds"""
    k: float = 2.0
    delta_k: float = 1.0
    s_min: int = 5
    delta_t: float = 0.35
    dt: float = 0.001
    retry_cap: int = 50

    def __post_init__(self):
        if not (self.k > 0 and self.delta_k > 0 and self.s_min >= 0 and self.delta_t > 0 and self.dt > 0):
            raise ConfigurationError("Rate coding parameters must be positive", details=self.__dict__.copy())
        steps = self.delta_t / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigurationError(f"dt={self.dt} does not divide the window {self.delta_t}")

    @property
    def n_steps(self) -> int:
        return int(round(self.delta_t / self.dt))

    @classmethod
    def from_config(cls, config: CodecConfig) -> "RateCodingParams":
        return cls(k=config.initial_k, delta_k=config.delta_k, s_min=config.s_min,
                   delta_t=config.window_s, dt=config.dt_s, retry_cap=config.retry_cap)

@dataclass(frozen=True, eq=False)
class SpikeTrain:
    """Per-pixel spike counts over one presentation window"""
    counts: np.ndarray
    total: int
    effective_k: float
    delta_t: float
    times: Optional[List[np.ndarray]] = None

    def step_events(self, dt: float):
        """(step indices, pixel indices) of every spike, sorted by step"""
        if self.times is None:
            raise EncodingError("Spike times were not materialized for this train")
        pixels = np.repeat(np.arange(len(self.counts)), self.counts)
        if pixels.size == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        times = np.concatenate([t for t in self.times if t.size])
        n_steps = int(round(self.delta_t / dt))
        steps = np.minimum((times / dt).astype(np.int64), n_steps - 1)
        order = np.argsort(steps, kind="stable")
        return steps[order], pixels[order]

def encode_poisson(image: MnistImage, params: RateCodingParams, rng: np.random.Generator,
                   with_times: bool = False, k: Optional[float] = None) -> SpikeTrain:
    """counts[i] ~ Poisson(k * I_i * delta_t), the expected count over the window"""
    k = params.k if k is None else k
    lam = k * image.pixels * params.delta_t
    counts = rng.poisson(lam).astype(np.int64)
    times = None
    if with_times:
        # Uniform order statistics inside [0, delta_t)
        times = [np.sort(rng.uniform(0.0, params.delta_t, size=c)) for c in counts]
    return SpikeTrain(counts=counts, total=int(counts.sum()), effective_k=float(k),
                      delta_t=params.delta_t, times=times)

def adaptive_encode(image: MnistImage, params: RateCodingParams, rng: np.random.Generator,
                    with_times: bool = False) -> SpikeTrain:
    """Redraw the whole train with k += delta_k until total >= s_min or the retry cap is hit"""
    k = params.k
    train = encode_poisson(image, params, rng, with_times, k)
    retries = 0
    while train.total < params.s_min:
        if retries >= params.retry_cap:
            if not np.any(image.pixels):
                raise EncodingFailureError(
                    f"Image {image.index} produced no spikes after {retries} retries (all-zero image)",
                    image_index=image.index, error_code="encoding_failure",
                    details={"effective_k": k, "s_min": params.s_min})
            logger.warning(f"⚠️ Image {image.index}: retry cap hit with {train.total} spikes at k={k}")
            break
        retries += 1
        k += params.delta_k
        train = encode_poisson(image, params, rng, with_times, k)
    return train

def raster_to_text(train: SpikeTrain) -> str:
    """Delimited raster: index, count, semicolon-joined spike times in ms"""
    lines = ["# cpcsnn-raster v1"]
    for i, count in enumerate(train.counts):
        times = "" if train.times is None else ";".join(f"{t * 1000.0:.3f}" for t in train.times[i])
        lines.append(f"{i},{int(count)},{times}")
    return "\n".join(lines) + "\n"

def dump_raster(train: SpikeTrain, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(raster_to_text(train))
    return path
