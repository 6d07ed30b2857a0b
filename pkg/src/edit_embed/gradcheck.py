"""Central finite differences for checking analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T

STEP = 1e-5
# Below this magnitude a gradient entry is compared in absolute terms:
# central differences carry roughly eps * |f| / h of round-off.
REL_FLOOR = 1e-5
TOLERANCE = 1e-4
# Random instances closer than this to a ReLU, hinge or |.| kink are redrawn.
_KINK = 1e-3


def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float = STEP) -> np.ndarray:
    """Gradient of ``f()`` w.r.t. ``x``, perturbing ``x`` in place."""
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"], op_flags=[["readwrite"]])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise ValueError(f"shape mismatch {analytic.shape} vs {numeric.shape}")
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


@dataclass
class GradReport:
    name: str
    instances: int
    max_error: float

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} gradient {self.name}: {self.instances} instances, max rel error {self.max_error:.2e}"


def _layer_instance(rng, name):
    """(forward(params) -> out, backward(G) -> grads, params) for one random layer."""
    if name == "conv":
        B, C, O, W = (int(v) for v in rng.integers(1, 5, 4))
        x, w, b = rng.standard_normal((B, C, W)), rng.standard_normal((O, C, 3)), rng.standard_normal(O)
        return (lambda: T.conv1d_forward(x, w, b)[0]), (lambda G: T.conv1d_backward(G, T.conv1d_forward(x, w, b)[1])), (x, w, b)
    if name in ("maxpool", "avgpool"):
        k = int(rng.integers(2, 5))
        W = int(rng.integers(1, 13))
        # Distinct, well separated values keep the max away from ties.
        x = (rng.permutation(4 * W)[:W] * 0.1).reshape(1, 1, W).astype(np.float64)
        fwd, bwd = (T.maxpool1d, T.maxpool1d_backward) if name == "maxpool" else (T.avgpool1d, T.avgpool1d_backward)
        return (lambda: fwd(x, k)[0]), (lambda G: (bwd(G, fwd(x, k)[1]),)), (x,)
    if name == "linear":
        B, m, n = (int(v) for v in rng.integers(1, 6, 3))
        x, W, b = rng.standard_normal((B, m)), rng.standard_normal((n, m)), rng.standard_normal(n)
        return (lambda: T.linear(x, W, b)[0]), (lambda G: T.linear_backward(G, T.linear(x, W, b)[1])), (x, W, b)
    if name == "relu":
        x = rng.standard_normal((2, 3, 5))
        x = np.where(np.abs(x) < _KINK, 10 * _KINK, x)
        return (lambda: T.relu(x)[0]), (lambda G: (T.relu_backward(G, T.relu(x)[1]),)), (x,)
    raise ValueError(name)


def _check_layer(rng, name, instances):
    worst = 0.0
    for _ in range(instances):
        fwd, bwd, params = _layer_instance(rng, name)
        G = rng.standard_normal(fwd().shape)
        analytic = bwd(G)
        for a, p in zip(analytic, params):
            num = numerical_gradient(lambda: float(np.sum(fwd() * G)), p)
            worst = max(worst, max_relative_error(a, num))
    return GradReport(name, instances, worst)


def _check_loss(rng, term, instances):
    from .train import batch_loss

    worst, done = 0.0, 0
    while done < instances:
        ys = [rng.standard_normal((4, 3)) * 3 for _ in range(3)]
        d = rng.integers(0, 8, (3, 4)).astype(np.float64)
        d_ap, d_an, d_pn = np.minimum(d[0], d[1]), np.maximum(d[0], d[1]), d[2]
        e = [np.linalg.norm(ys[i] - ys[j], axis=1) for i, j in ((0, 1), (0, 2), (1, 2))]
        kinks = np.concatenate([e[0] - e[1] - (d_ap - d_an), e[0] - d_ap, e[1] - d_an, e[2] - d_pn])
        if np.abs(kinks).min() < _KINK:
            continue
        if term == "triplet":
            grads = batch_loss(*ys, d_ap, d_an, d_pn, 0.0)[1]
            f = lambda: batch_loss(*ys, d_ap, d_an, d_pn, 0.0)[0].triplet_term
        else:
            with_approx = batch_loss(*ys, d_ap, d_an, d_pn, 1.0)[1]
            without = batch_loss(*ys, d_ap, d_an, d_pn, 0.0)[1]
            grads = [g1 - g0 for g1, g0 in zip(with_approx, without)]
            f = lambda: batch_loss(*ys, d_ap, d_an, d_pn, 1.0)[0].approx_term
        for g, y in zip(grads, ys):
            worst = max(worst, max_relative_error(g, numerical_gradient(f, y)))
        done += 1
    return GradReport(f"{term} loss", instances, worst)


def _check_model(rng, instances):
    from .model import ModelConfig, backward, forward, init_model, input_grad

    cfg = ModelConfig(3, 8, n_conv_layers=2, kernels_per_layer=2, output_dim=4)
    worst = 0.0
    for i in range(instances):
        params = init_model(cfg, i)
        for v in params.tensors.values():
            v += 0.1 * rng.standard_normal(v.shape)
        x = rng.standard_normal((2, 3, 8))
        G = rng.standard_normal((2, 4))
        f = lambda: float(np.sum(forward(params, cfg, x)[0] * G))
        _, cache = forward(params, cfg, x)
        grads = backward(params, cfg, cache, G)
        for name, v in params.tensors.items():
            worst = max(worst, max_relative_error(grads[name], numerical_gradient(f, v)))
        worst = max(worst, max_relative_error(input_grad(params, cfg, cache, G), numerical_gradient(f, x)))
    return GradReport("2-layer model", instances, worst)


def gradient_suite(instances: int = 20, seed: int = 0) -> list[GradReport]:
    """Analytic vs. central-difference gradients for every layer, both loss terms and a small model."""
    rng = np.random.default_rng(seed)
    reports = [_check_layer(rng, name, instances) for name in ("conv", "maxpool", "avgpool", "linear", "relu")]
    reports += [_check_loss(rng, term, instances) for term in ("triplet", "approx")]
    reports.append(_check_model(rng, instances))
    return reports
