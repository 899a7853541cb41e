#!/usr/bin/env python3
"""
CPC-SNN Tensor Kernel
Dense, GRU and convolution layers with exact backward passes, Adam and
finite-difference gradient checking, all on numpy arrays.

Arrays are row-major numpy ndarrays. Tests run in float64, experiment runs
default to float32 (see set_precision).
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from utils.exceptions import DivergenceError, ImmutabilityError, ShapeMismatchError

Tensor = np.ndarray
Params = Dict[str, np.ndarray]

_PRECISION = {"dtype": np.float64, "debug_finite": False}

def set_precision(name: str = "float64", debug_finite: Optional[bool] = None):
    """Select the working dtype ('float64' for checks, 'float32' for runs)"""
    _PRECISION["dtype"] = {"float64": np.float64, "float32": np.float32}[name]
    if debug_finite is not None:
        _PRECISION["debug_finite"] = bool(debug_finite)

def get_dtype():
    return _PRECISION["dtype"]

def as_tensor(values, shape: Optional[Tuple[int, ...]] = None) -> Tensor:
    array = np.asarray(values, dtype=get_dtype())
    if shape is not None:
        if int(np.prod(shape)) != array.size:
            raise ShapeMismatchError(f"Cannot view {array.size} values as shape {shape}")
        array = array.reshape(shape)
    return array

def _checked(name: str, array: Tensor) -> Tensor:
    if _PRECISION["debug_finite"] and not np.all(np.isfinite(array)):
        raise DivergenceError(f"Non-finite values produced by {name}", error_code="non_finite")
    return array

def _require(condition: bool, message: str):
    if not condition:
        raise ShapeMismatchError(message)

# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------

def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic function"""
    x = np.asarray(x)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))

def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0)

def relu_backward(grad_out: Tensor, x: Tensor) -> Tensor:
    return grad_out * (x > 0)

# ---------------------------------------------------------------------------
# Dense
# ---------------------------------------------------------------------------

def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """y = W x + b for every leading index; W has shape (out, in)"""
    _require(weights.ndim == 2 and x.shape[-1] == weights.shape[1],
             f"dense: input dim {x.shape[-1]} does not match weights {weights.shape}")
    _require(bias.shape == (weights.shape[0],), f"dense: bias {bias.shape} vs weights {weights.shape}")
    return _checked("dense", x @ weights.T + bias)

def dense_backward(grad_out: Tensor, x: Tensor, weights: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
    """Gradients w.r.t. input, weights and bias"""
    _require(grad_out.shape[:-1] == x.shape[:-1] and grad_out.shape[-1] == weights.shape[0],
             f"dense_backward: grad {grad_out.shape} vs input {x.shape} / weights {weights.shape}")
    g2 = grad_out.reshape(-1, weights.shape[0])
    x2 = x.reshape(-1, weights.shape[1])
    return grad_out @ weights, g2.T @ x2, g2.sum(axis=0)

def init_dense(in_dim: int, out_dim: int, rng: np.random.Generator, prefix: str = "") -> Params:
    bound = 1.0 / np.sqrt(in_dim)
    return {f"{prefix}W": as_tensor(rng.uniform(-bound, bound, size=(out_dim, in_dim))),
            f"{prefix}b": as_tensor(np.zeros(out_dim))}

# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------

GRU_GATES = ("z", "r", "h")
GRU_KEYS = tuple(f"{kind}_{gate}" for gate in GRU_GATES for kind in ("W", "U", "b"))

def init_gru(input_dim: int, hidden_size: int, rng: np.random.Generator) -> Params:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights, zero biases"""
    bound = 1.0 / np.sqrt(hidden_size)
    params: Params = {}
    for gate in GRU_GATES:
        params[f"W_{gate}"] = as_tensor(rng.uniform(-bound, bound, size=(hidden_size, input_dim)))
        params[f"U_{gate}"] = as_tensor(rng.uniform(-bound, bound, size=(hidden_size, hidden_size)))
        params[f"b_{gate}"] = as_tensor(np.zeros(hidden_size))
    return params

@dataclass
class GruCache:
    x: Tensor
    h_prev: Tensor
    z: Tensor
    r: Tensor
    candidate: Tensor

def gru_step(x_t: Tensor, h_prev: Tensor, params: Params) -> Tuple[Tensor, GruCache]:
    """
    One GRU step (batch-major):
        z = sigmoid(W_z x + U_z h + b_z)
        r = sigmoid(W_r x + U_r h + b_r)
        c = tanh(W_h x + U_h (r * h) + b_h)
        h' = z * h + (1 - z) * c
    """
    hidden = params["U_z"].shape[0]
    _require(h_prev.shape[-1] == hidden, f"gru_step: hidden {h_prev.shape} vs {hidden}")
    _require(x_t.shape[-1] == params["W_z"].shape[1], f"gru_step: input {x_t.shape} vs {params['W_z'].shape}")
    z = sigmoid(x_t @ params["W_z"].T + h_prev @ params["U_z"].T + params["b_z"])
    r = sigmoid(x_t @ params["W_r"].T + h_prev @ params["U_r"].T + params["b_r"])
    candidate = np.tanh(x_t @ params["W_h"].T + (r * h_prev) @ params["U_h"].T + params["b_h"])
    h = z * h_prev + (1.0 - z) * candidate
    return _checked("gru_step", h), GruCache(x_t, h_prev, z, r, candidate)

def gru_backward(grad_h: Tensor, cache: GruCache, params: Params) -> Tuple[Tensor, Tensor, Params]:
    """Backprop one step: returns (dx, dh_prev, parameter grads)"""
    x, h_prev, z, r, c = cache.x, cache.h_prev, cache.z, cache.r, cache.candidate
    x2, hp2 = x.reshape(-1, x.shape[-1]), h_prev.reshape(-1, h_prev.shape[-1])

    d_z = grad_h * (h_prev - c)
    d_c = grad_h * (1.0 - z)
    dh_prev = grad_h * z

    a_c = d_c * (1.0 - c * c)
    a_z = d_z * z * (1.0 - z)
    rh = r * h_prev
    d_rh = a_c @ params["U_h"]
    a_r = d_rh * h_prev * r * (1.0 - r)
    dh_prev = dh_prev + d_rh * r + a_z @ params["U_z"] + a_r @ params["U_r"]
    dx = a_c @ params["W_h"] + a_z @ params["W_z"] + a_r @ params["W_r"]

    grads: Params = {}
    for gate, a, h_in in (("z", a_z, hp2), ("r", a_r, hp2), ("h", a_c, rh.reshape(hp2.shape))):
        a2 = a.reshape(-1, a.shape[-1])
        grads[f"W_{gate}"] = a2.T @ x2
        grads[f"U_{gate}"] = a2.T @ h_in
        grads[f"b_{gate}"] = a2.sum(axis=0)
    return dx, dh_prev, grads

def gru_sequence(xs: Tensor, params: Params, h0: Optional[Tensor] = None) -> Tuple[Tensor, List[GruCache]]:
    """Run a (batch, time, features) sequence; returns final hidden state and caches"""
    hidden = params["U_z"].shape[0]
    h = np.zeros(xs.shape[:-2] + (hidden,), dtype=xs.dtype) if h0 is None else h0
    caches = []
    for t in range(xs.shape[-2]):
        h, cache = gru_step(xs[..., t, :], h, params)
        caches.append(cache)
    return h, caches

def gru_sequence_backward(grad_h_last: Tensor, caches: List[GruCache], params: Params) -> Tuple[Params, Tensor]:
    """BPTT from the final hidden state; returns (parameter grads, input grads)"""
    grads = {name: np.zeros_like(params[name]) for name in GRU_KEYS}
    dxs = []
    dh = grad_h_last
    for cache in reversed(caches):
        dx, dh, step_grads = gru_backward(dh, cache, params)
        for name, value in step_grads.items():
            grads[name] += value
        dxs.append(dx)
    return grads, np.stack(dxs[::-1], axis=-2)

# ---------------------------------------------------------------------------
# Convolution (cross-correlation, no kernel flip)
# ---------------------------------------------------------------------------

def _conv_geometry(x: Tensor, kernels: Tensor, stride: int, padding: Optional[int]):
    _require(x.ndim == 4, f"conv2d: input must be (batch, channels, H, W), got {x.shape}")
    _require(kernels.ndim == 4 and kernels.shape[1] == x.shape[1],
             f"conv2d: kernels {kernels.shape} do not match input channels {x.shape[1]}")
    kh, kw = kernels.shape[2:]
    pad = kh // 2 if padding is None else padding
    h_out = (x.shape[2] + 2 * pad - kh) // stride + 1
    w_out = (x.shape[3] + 2 * pad - kw) // stride + 1
    _require(h_out > 0 and w_out > 0, f"conv2d: kernel {kernels.shape} too large for input {x.shape}")
    return kh, kw, pad, h_out, w_out

def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: Optional[int] = None,
           bias: Optional[Tensor] = None) -> Tensor:
    """
    out[b, o, i, j] = sum_{c, u, v} kernels[o, c, u, v] * xpad[b, c, i*s + u, j*s + v]

    Zero padding defaults to kernel_size // 2 (1 for 3x3, 0 for 1x1).
    """
    kh, kw, pad, h_out, w_out = _conv_geometry(x, kernels, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    out = np.zeros((x.shape[0], kernels.shape[0], h_out, w_out), dtype=np.result_type(x, kernels))
    for u in range(kh):
        for v in range(kw):
            patch = xp[:, :, u:u + stride * (h_out - 1) + 1:stride, v:v + stride * (w_out - 1) + 1:stride]
            out += np.einsum("bchw,oc->bohw", patch, kernels[:, :, u, v], optimize=True)
    if bias is not None:
        _require(bias.shape == (kernels.shape[0],), f"conv2d: bias {bias.shape} vs {kernels.shape[0]} channels")
        out += bias[None, :, None, None]
    return _checked("conv2d", out)

def conv2d_backward(grad_out: Tensor, x: Tensor, kernels: Tensor, stride: int = 1,
                    padding: Optional[int] = None) -> Tuple[Tensor, Tensor, Tensor]:
    """Gradients w.r.t. input, kernels and bias"""
    kh, kw, pad, h_out, w_out = _conv_geometry(x, kernels, stride, padding)
    _require(grad_out.shape == (x.shape[0], kernels.shape[0], h_out, w_out),
             f"conv2d_backward: grad {grad_out.shape} does not match output geometry")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    dxp = np.zeros_like(xp, dtype=np.result_type(x, grad_out))
    dk = np.zeros_like(kernels, dtype=np.result_type(kernels, grad_out))
    for u in range(kh):
        for v in range(kw):
            rows = slice(u, u + stride * (h_out - 1) + 1, stride)
            cols = slice(v, v + stride * (w_out - 1) + 1, stride)
            dk[:, :, u, v] = np.einsum("bohw,bchw->oc", grad_out, xp[:, :, rows, cols], optimize=True)
            dxp[:, :, rows, cols] += np.einsum("bohw,oc->bchw", grad_out, kernels[:, :, u, v], optimize=True)
    dx = dxp[:, :, pad:pad + x.shape[2], pad:pad + x.shape[3]] if pad else dxp
    return dx, dk, grad_out.sum(axis=(0, 2, 3))

def init_conv(in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator) -> Tensor:
    """He-uniform kernels"""
    fan_in = in_channels * kernel_size * kernel_size
    bound = np.sqrt(6.0 / fan_in)
    return as_tensor(rng.uniform(-bound, bound, size=(out_channels, in_channels, kernel_size, kernel_size)))

def upsample2d(x: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbour upsampling of the two spatial axes"""
    return x.repeat(factor, axis=2).repeat(factor, axis=3)

def upsample2d_backward(grad_out: Tensor, factor: int = 2) -> Tensor:
    b, c, h, w = grad_out.shape
    return grad_out.reshape(b, c, h // factor, factor, w // factor, factor).sum(axis=(3, 5))

# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def mse_loss(prediction: Tensor, target: Tensor) -> Tuple[float, Tensor]:
    _require(prediction.shape == target.shape, f"mse_loss: {prediction.shape} vs {target.shape}")
    diff = prediction - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size

def bce_with_logits(logits: Tensor, labels: Tensor) -> Tuple[float, Tensor]:
    """Mean binary cross-entropy of sigmoid(logits); gradient (sigmoid(z) - y) / N"""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=logits.dtype)
    _require(logits.shape == labels.shape, f"bce: logits {logits.shape} vs labels {labels.shape}")
    per_sample = np.maximum(logits, 0) - logits * labels + np.log1p(np.exp(-np.abs(logits)))
    return float(np.mean(per_sample)), (sigmoid(logits) - labels) / logits.size

# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moments per parameter plus the step counter"""
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

def adam_init(params: Params, learning_rate: float) -> AdamState:
    return AdamState(learning_rate=learning_rate,
                     m={k: np.zeros_like(p) for k, p in params.items()},
                     v={k: np.zeros_like(p) for k, p in params.items()})

def adam_update(params: Params, grads: Params, state: AdamState) -> Tuple[Params, AdamState]:
    """Bias-corrected Adam step; returns new parameter arrays and the advanced state"""
    if isinstance(params, FrozenParams):
        raise ImmutabilityError("Parameters are frozen and cannot be updated", error_code="frozen")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"Non-finite gradient for {name} at step {state.step + 1}",
                                  error_code="non_finite_gradient")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    updated: Params = {}
    for name, p in params.items():
        if name not in grads:
            updated[name] = p
            continue
        g = grads[name]
        _require(g.shape == p.shape, f"adam_update: grad {name} {g.shape} vs param {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        updated[name] = (p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(p.dtype)
    return updated, state

class FrozenParams(dict):
    """Read-only parameter mapping; arrays are non-writeable copies"""

    def __init__(self, params: Params):
        super().__init__()
        for name, value in params.items():
            frozen = np.array(value, copy=True)
            frozen.flags.writeable = False
            dict.__setitem__(self, name, frozen)

    def _reject(self, *args, **kwargs):
        raise ImmutabilityError("Parameters are frozen and cannot be updated", error_code="frozen")

    __setitem__ = _reject
    __delitem__ = _reject
    update = _reject
    pop = _reject
    popitem = _reject
    clear = _reject
    setdefault = _reject

# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients with central differences"""
    name: str
    max_rel_error: float
    tolerance: float
    per_param: Dict[str, float]

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tolerance)

def relative_error(analytic: Tensor, numeric: Tensor, floor: float = 1e-6) -> float:
    """||a - n|| / max(||a|| + ||n||, floor) over one parameter array"""
    diff = float(np.linalg.norm(np.ravel(analytic) - np.ravel(numeric)))
    scale = float(np.linalg.norm(analytic) + np.linalg.norm(numeric))
    return diff / max(scale, floor)

def grad_check(closure: Callable[[Params], float], params: Params, analytic: Params,
               h: float = 1e-5, tolerance: float = 1e-6, name: str = "grad_check") -> GradCheckReport:
    """Central finite differences per coordinate against the supplied analytic gradients"""
    working = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    per_param: Dict[str, float] = {}
    for pname in analytic:
        value = working[pname]
        numeric = np.zeros_like(value)
        flat, nflat = value.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            plus = float(closure(working))
            flat[i] = original - h
            minus = float(closure(working))
            flat[i] = original
            nflat[i] = (plus - minus) / (2.0 * h)
        per_param[pname] = relative_error(np.asarray(analytic[pname], dtype=np.float64), numeric)
    max_err = max(per_param.values()) if per_param else 0.0
    return GradCheckReport(name=name, max_rel_error=max_err, tolerance=tolerance, per_param=per_param)
