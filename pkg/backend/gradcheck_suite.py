#!/usr/bin/env python3
"""
CPC-SNN Gradient Check Suite
Registered finite-difference checks for every hand-written backward pass
"""

from typing import Callable, Dict, Iterable, List, Optional

import numpy as np

from config.settings import get_logger
from services import nn_core
from services.cpc_core import CpcModel, cpc_forward_backward
from services.lif_autoencoder import ConvLifParams, init_weights, reconstruction_loss, reconstruction_loss_and_grads
from services.nn_core import GradCheckReport, grad_check

logger = get_logger(__name__)

CheckFn = Callable[[np.random.Generator], GradCheckReport]

REGISTRY: Dict[str, CheckFn] = {}

def register_check(name: str):
    """Decorator adding a check to the suite under the given name"""
    def decorator(func: CheckFn) -> CheckFn:
        REGISTRY[name] = func
        return func
    return decorator

@register_check("dense")
def check_dense(rng: np.random.Generator) -> GradCheckReport:
    x = rng.standard_normal((4, 5))
    params = {"W": rng.standard_normal((3, 5)), "b": rng.standard_normal(3)}
    upstream = rng.standard_normal((4, 3))

    def loss(p):
        return float(np.sum(nn_core.dense(x, p["W"], p["b"]) * upstream))

    _, dW, db = nn_core.dense_backward(upstream, x, params["W"])
    return grad_check(loss, params, {"W": dW, "b": db}, tolerance=1e-6, name="dense")

@register_check("bce_with_logits")
def check_bce(rng: np.random.Generator) -> GradCheckReport:
    params = {"logits": rng.standard_normal(8) * 2.0}
    labels = rng.integers(0, 2, size=8).astype(np.float64)

    def loss(p):
        return nn_core.bce_with_logits(p["logits"], labels)[0]

    _, grad = nn_core.bce_with_logits(params["logits"], labels)
    return grad_check(loss, params, {"logits": grad}, tolerance=1e-6, name="bce_with_logits")

@register_check("gru_bptt_3_steps")
def check_gru(rng: np.random.Generator) -> GradCheckReport:
    params = nn_core.init_gru(3, 4, rng)
    for key in params:
        if key.startswith("b_"):
            params[key] = rng.standard_normal(params[key].shape) * 0.1
    xs = rng.standard_normal((2, 3, 3))
    upstream = rng.standard_normal((2, 4))

    def loss(p):
        h, _ = nn_core.gru_sequence(xs, p)
        return float(np.sum(h * upstream))

    _, caches = nn_core.gru_sequence(xs, params)
    grads, _ = nn_core.gru_sequence_backward(upstream, caches, params)
    return grad_check(loss, params, grads, tolerance=1e-4, name="gru_bptt_3_steps")

@register_check("conv2d_stride2")
def check_conv(rng: np.random.Generator) -> GradCheckReport:
    x = rng.standard_normal((2, 2, 6, 6))
    params = {"kernels": rng.standard_normal((3, 2, 3, 3)), "bias": rng.standard_normal(3)}
    out_shape = nn_core.conv2d(x, params["kernels"], 2, None, params["bias"]).shape
    upstream = rng.standard_normal(out_shape)

    def loss(p):
        return float(np.sum(nn_core.conv2d(x, p["kernels"], 2, None, p["bias"]) * upstream))

    _, dk, db = nn_core.conv2d_backward(upstream, x, params["kernels"], 2)
    return grad_check(loss, params, {"kernels": dk, "bias": db}, tolerance=1e-4, name="conv2d_stride2")

@register_check("upsample_conv_sigmoid")
def check_decoder_stage(rng: np.random.Generator) -> GradCheckReport:
    x = rng.standard_normal((2, 2, 3, 3))
    params = {"kernels": rng.standard_normal((1, 2, 3, 3)) * 0.5, "bias": rng.standard_normal(1) * 0.1}
    target = rng.uniform(0, 1, size=(2, 1, 6, 6))

    def forward(p):
        up = nn_core.upsample2d(x, 2)
        return up, nn_core.sigmoid(nn_core.conv2d(up, p["kernels"], 1, None, p["bias"]))

    def loss(p):
        return nn_core.mse_loss(forward(p)[1], target)[0]

    up, out = forward(params)
    _, g = nn_core.mse_loss(out, target)
    _, dk, db = nn_core.conv2d_backward(g * out * (1 - out), up, params["kernels"], 1)
    return grad_check(loss, params, {"kernels": dk, "bias": db}, tolerance=1e-4, name="upsample_conv_sigmoid")

@register_check("autoencoder_surrogate_bptt")
def check_autoencoder(rng: np.random.Generator) -> GradCheckReport:
    model = ConvLifParams(channels=(2, 2), t_steps=3, smooth_spikes=True)
    weights = {k: v * 2.0 for k, v in init_weights(model, rng).items()}
    x = rng.uniform(0, 1, size=(1, 1, 28, 28))

    def loss(p):
        return reconstruction_loss(x, model, p)

    _, grads = reconstruction_loss_and_grads(x, model, weights)
    return grad_check(loss, weights, grads, tolerance=1e-4, name="autoencoder_surrogate_bptt")

@register_check("cpc_end_to_end")
def check_cpc(rng: np.random.Generator) -> GradCheckReport:
    model = CpcModel.initial(input_dim=3, rng=rng, hidden_size=4, prediction_length=2, context_length=3)
    params = dict(model.params)
    params["gain"] = np.asarray(1.5)
    params["bias"] = np.asarray(0.2)
    context = rng.standard_normal((6, 3, 3))
    target = rng.standard_normal((6, 2, 3))
    labels = np.array([1, 0, 1, 0, 1, 0], dtype=np.float64)

    def loss(p):
        return cpc_forward_backward(p, context, target, labels, need_grads=False)[0]

    _, grads, _, _ = cpc_forward_backward(params, context, target, labels)
    return grad_check(loss, params, grads, tolerance=1e-4, name="cpc_end_to_end")

def gradcheck_all(names: Optional[Iterable[str]] = None, seed: int = 0,
                  extra: Optional[Dict[str, CheckFn]] = None) -> List[GradCheckReport]:
    """Run registered checks (plus any extras) in float64; failures are reported, not raised"""
    checks = dict(REGISTRY)
    checks.update(extra or {})
    selected = list(names) if names is not None else list(checks)
    previous = nn_core.get_dtype()
    nn_core.set_precision("float64")
    reports = []
    try:
        for name in selected:
            report = checks[name](np.random.default_rng([seed, len(reports)]))
            report.name = name
            reports.append(report)
            status = "✅" if report.passed else "❌"
            logger.info(f"{status} {name}: max rel error {report.max_rel_error:.3e} (tol {report.tolerance:.0e})")
    finally:
        nn_core.set_precision("float32" if previous == np.float32 else "float64")
    return reports

def format_report(reports: List[GradCheckReport]) -> str:
    """Aligned pass/fail table"""
    width = max([len(r.name) for r in reports] + [5])
    lines = [f"{'check':<{width}}  {'max rel error':>13}  {'tolerance':>9}  result",
             f"{'-' * width}  {'-' * 13}  {'-' * 9}  ------"]
    for r in reports:
        lines.append(f"{r.name:<{width}}  {r.max_rel_error:>13.3e}  {r.tolerance:>9.0e}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines) + "\n"
