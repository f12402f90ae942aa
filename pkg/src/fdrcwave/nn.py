"""Three-layer 3x3 convolutional surrogate predicting one-step field deltas.

Input channels are (u, v, p, sigma*dt); output channels (du, dv, dp).  Zero
padding of one cell preserves the spatial size, ReLU follows the two hidden
layers only (deltas must take both signs).  Convolutions run as im2col + GEMM
so the heavy lifting stays inside BLAS; the backward pass is written out by
hand and reuses the cached patch matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import DomainSpec, SigmaField, WaveState, inject_sources

IN_CHANNELS = 4
HIDDEN_CHANNELS = 32
OUT_CHANNELS = 3
# ReLU after layers 1 and 2, linear output
_ACTIVATE = (True, True, False)


@dataclass
class ConvLayer:
    weights: np.ndarray  # (out, in, 3, 3)
    biases: np.ndarray  # (out,)

    def __post_init__(self):
        if self.weights.ndim != 4 or self.weights.shape[2:] != (3, 3):
            raise ValueError(f"conv kernels must be 3x3, got shape {self.weights.shape}")
        if self.biases.shape != (self.weights.shape[0],):
            raise ValueError("bias count must match output channels")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]


@dataclass
class ModelParams:
    """The 4 -> 32 -> 32 -> 3 parameter set; also reused as the container for
    parameter gradients and Adam moments (identical shapes)."""

    layer1: ConvLayer
    layer2: ConvLayer
    layer3: ConvLayer

    def __post_init__(self):
        chain = (
            self.layer1.in_channels,
            self.layer1.out_channels,
            self.layer2.in_channels,
            self.layer2.out_channels,
            self.layer3.in_channels,
            self.layer3.out_channels,
        )
        expected = (
            IN_CHANNELS,
            HIDDEN_CHANNELS,
            HIDDEN_CHANNELS,
            HIDDEN_CHANNELS,
            HIDDEN_CHANNELS,
            OUT_CHANNELS,
        )
        if chain != expected:
            raise ValueError(f"channel chain {chain} != required {expected}")

    @property
    def layers(self) -> tuple[ConvLayer, ConvLayer, ConvLayer]:
        return (self.layer1, self.layer2, self.layer3)

    @property
    def dtype(self):
        return self.layer1.weights.dtype

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            *[
                ConvLayer(l.weights.astype(dtype), l.biases.astype(dtype))
                for l in self.layers
            ]
        )

    def copy(self) -> "ModelParams":
        return self.astype(self.dtype)


# The output layer starts 10x smaller than He scale: the surrogate ADDS its
# output to the input fields, so a near-unit-gain initial net amplifies every
# pool write-back and the replay pool blows up long before the loss can fall.
OUTPUT_INIT_SCALE = 0.1


def init_params(rng: np.random.Generator, dtype=np.float64) -> ModelParams:
    """He fan-in scaled normal weights (output layer damped), zero biases."""

    def layer(cin: int, cout: int, scale: float = 1.0) -> ConvLayer:
        std = scale * math.sqrt(2.0 / (cin * 9))
        w = rng.standard_normal((cout, cin, 3, 3)) * std
        return ConvLayer(w.astype(dtype), np.zeros(cout, dtype))

    return ModelParams(
        layer(IN_CHANNELS, HIDDEN_CHANNELS),
        layer(HIDDEN_CHANNELS, HIDDEN_CHANNELS),
        layer(HIDDEN_CHANNELS, OUT_CHANNELS, scale=OUTPUT_INIT_SCALE),
    )


def _im2col(x: np.ndarray) -> np.ndarray:
    """(B, C, H, W) -> (B, C*9, H*W) patch matrix under zero padding of 1.

    Built from nine aligned slice copies; the reshape is free, so the GEMMs
    downstream see contiguous operands."""
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((b, c, 3, 3, h, w), x.dtype)
    for k in range(3):
        for l in range(3):
            cols[:, :, k, l] = xp[:, :, k : k + h, l : l + w]
    return cols.reshape(b, c * 9, h * w)


def _conv_forward(x: np.ndarray, layer: ConvLayer):
    b, _, h, w = x.shape
    cols = _im2col(x)
    wmat = layer.weights.reshape(layer.out_channels, -1)
    y = np.matmul(wmat, cols)
    y += layer.biases[:, None]
    return y.reshape(b, layer.out_channels, h, w), cols


@dataclass
class ForwardCache:
    """Per-layer patch matrices and ReLU activity masks for the backward pass."""

    x_shape: tuple[int, int, int, int]
    cols: list
    relu: list
    batched: bool


def forward(params: ModelParams, x: np.ndarray):
    """Run the network on a (4, H, W) stack or a (B, 4, H, W) batch.

    Returns (delta, cache); delta has 3 channels and the input's spatial size.
    """
    x = np.asarray(x)
    batched = x.ndim == 4
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != IN_CHANNELS:
        raise ValueError(
            f"expected {IN_CHANNELS} input channels (u, v, p, sigma*dt), got shape {x.shape}"
        )
    out = x.astype(params.dtype, copy=False)
    cache = ForwardCache(out.shape, [], [], batched)
    for layer, activate in zip(params.layers, _ACTIVATE):
        out, cols = _conv_forward(out, layer)
        cache.cols.append(cols)
        if activate:
            mask = out > 0
            np.maximum(out, 0, out=out)
            cache.relu.append(mask)
        else:
            cache.relu.append(None)
    return (out if batched else out[0]), cache


def backward(params: ModelParams, cache: ForwardCache, grad_delta: np.ndarray) -> ModelParams:
    """Parameter gradients given d(loss)/d(delta); ReLU subgradient is 0 at 0."""
    g = np.asarray(grad_delta)
    if g.ndim == 3:
        g = g[None]
    b, _, h, w = cache.x_shape
    if g.shape != (b, OUT_CHANNELS, h, w):
        raise ValueError(f"grad_delta shape {g.shape} does not match forward pass")
    if len(cache.cols) != len(params.layers):
        raise ValueError("cache does not match this parameter set")
    g = np.ascontiguousarray(g, dtype=params.dtype)
    grads: list[ConvLayer | None] = [None, None, None]
    for li in (2, 1, 0):
        layer = params.layers[li]
        if cache.cols[li].shape[1] != layer.in_channels * 9:
            raise ValueError("cache does not match this parameter set")
        gmat = g.reshape(b, layer.out_channels, h * w)
        gw = (
            np.matmul(gmat, cache.cols[li].transpose(0, 2, 1))
            .sum(axis=0)
            .reshape(layer.weights.shape)
        )
        gb = gmat.sum(axis=(0, 2))
        grads[li] = ConvLayer(gw, gb)
        if li > 0:
            # grad wrt the layer input: convolve g with spatially flipped,
            # in/out swapped kernels, then gate through the preceding ReLU
            wflip = layer.weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            gcols = _im2col(g)
            g = np.matmul(wflip.reshape(layer.in_channels, -1), gcols).reshape(
                b, layer.in_channels, h, w
            )
            np.multiply(g, cache.relu[li - 1], out=g)
    return ModelParams(*grads)


def input_stack(state: WaveState, sigma: SigmaField, spec: DomainSpec, dtype=None) -> np.ndarray:
    """Stack (u, v, p, sigma*dt) as the network input channels."""
    dtype = state.dtype if dtype is None else dtype
    return np.stack(
        [state.u, state.v, state.p, sigma * spec.dt]
    ).astype(dtype, copy=False)


def predict_step(
    params: ModelParams,
    state: WaveState,
    sigma: SigmaField,
    spec: DomainSpec,
    sources=(),
) -> WaveState:
    """One surrogate step: add the predicted deltas, then inject sources."""
    delta, _ = forward(params, input_stack(state, sigma, spec, dtype=params.dtype))
    nxt = WaveState(
        state.u + delta[0], state.v + delta[1], state.p + delta[2], state.step + 1
    )
    return inject_sources(nxt, sources, spec)


def save_params(params: ModelParams, path) -> None:
    from . import io

    io.write_model(path, params)


def load_params(path, dtype=None) -> ModelParams:
    from . import io

    params, _ = io.read_model(path, dtype=dtype)
    return params
