"""Adam optimizer with the stepped learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ConvLayer, ModelParams

_LAYER_NAMES = ("layer1", "layer2", "layer3")


@dataclass
class AdamState:
    """First/second moment accumulators (shaped like the parameters) plus the
    global step count and hyperparameters."""

    t: int
    beta1: float
    beta2: float
    eps: float
    m: ModelParams
    v: ModelParams


def _zeros_like(params: ModelParams) -> ModelParams:
    return ModelParams(
        *[
            ConvLayer(np.zeros_like(l.weights), np.zeros_like(l.biases))
            for l in params.layers
        ]
    )


def init_adam(
    params: ModelParams, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
) -> AdamState:
    return AdamState(0, beta1, beta2, eps, _zeros_like(params), _zeros_like(params))


def lr_schedule(epoch: int) -> float:
    """Stepped decay: 1e-4 through epoch 20, 1e-5 through 60, 1e-6 after."""
    if epoch < 1:
        raise ValueError("epochs count from 1")
    if epoch <= 20:
        return 1e-4
    if epoch <= 60:
        return 1e-5
    return 1e-6


def adam_step(
    params: ModelParams, grads: ModelParams, state: AdamState, lr: float
) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    t = state.t + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_layers, new_m, new_v = [], [], []
    for name, pl, gl, ml, vl in zip(
        _LAYER_NAMES, params.layers, grads.layers, state.m.layers, state.v.layers
    ):
        updated = []
        for kind, pa, ga, ma, va in (
            ("weights", pl.weights, gl.weights, ml.weights, vl.weights),
            ("biases", pl.biases, gl.biases, ml.biases, vl.biases),
        ):
            if not np.isfinite(ga).all():
                raise ValueError(f"non-finite gradient in {name} {kind}")
            m = state.beta1 * ma + (1.0 - state.beta1) * ga
            v = state.beta2 * va + (1.0 - state.beta2) * (ga * ga)
            step = lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
            updated.append((pa - step, m, v))
        (w2, mw, vw), (b2, mb, vb) = updated
        new_layers.append(ConvLayer(w2, b2))
        new_m.append(ConvLayer(mw, mb))
        new_v.append(ConvLayer(vw, vb))
    return (
        ModelParams(*new_layers),
        AdamState(t, state.beta1, state.beta2, state.eps, ModelParams(*new_m), ModelParams(*new_v)),
    )
