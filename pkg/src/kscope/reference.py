"""Layer-by-layer reference inference, the functional oracle for both PEs.

Semantics shared with the hardware model:
  - input bytes are Fix8 bit patterns as-is,
  - each linear layer accumulates products and its bias exactly in WideAcc,
    requantizes once, then applies the activation table,
  - pooling takes the maximum by decoded value after activation,
  - a recurrent cell folds x*Wx + h*Wh + bias into a single accumulation.

Bias is folded by augmenting the input vector with a constant 1.0 element
against a weight row holding the bias values, which is exactly how the
compiler realizes it on the PEs.
"""

from __future__ import annotations

import numpy as np

from .fix8 import build_act_table, encode
from .linalg import Fix8Matrix, Fix8Vector, gemm_ref, gemv_ref
from .models import Conv1D, Dense, MaxPool1D, ModelSpec, RNNCell, WeightsFile, check_weights

ONE = encode(1.0)


def _augmented(matrix: np.ndarray, bias: np.ndarray) -> Fix8Matrix:
    stacked = np.vstack([matrix, bias.reshape(1, -1)])
    return Fix8Matrix.from_bits(stacked)


def _dense(x: np.ndarray, layer: Dense, mat: np.ndarray, bias: np.ndarray) -> np.ndarray:
    v = Fix8Vector.from_bits(np.concatenate([x, [ONE]]))
    out = gemv_ref(v, _augmented(mat, bias), build_act_table(layer.act))
    return out.elems


def _conv(x: np.ndarray, layer: Conv1D, mat: np.ndarray, bias: np.ndarray) -> np.ndarray:
    positions, in_ch = x.shape
    out_pos = (positions - layer.kernel) // layer.stride + 1
    k = layer.kernel * in_ch
    cols = np.zeros((out_pos, k + 1), dtype=np.uint8)
    for p in range(out_pos):
        window = x[p * layer.stride : p * layer.stride + layer.kernel, :]
        cols[p, :k] = window.reshape(-1)
        cols[p, k] = ONE
    a = Fix8Matrix.from_bits(cols)
    out = gemm_ref(a, _augmented(mat, bias), build_act_table(layer.act))
    return out.elems  # (out_pos, out_ch)


def _pool(x: np.ndarray, layer: MaxPool1D) -> np.ndarray:
    positions, ch = x.shape
    out_pos = (positions - layer.window) // layer.stride + 1
    out = np.zeros((out_pos, ch), dtype=np.uint8)
    for p in range(out_pos):
        window = x[p * layer.stride : p * layer.stride + layer.window, :].view(np.int8)
        out[p] = window.max(axis=0).view(np.uint8)
    return out


def _rnn(x: np.ndarray, layer: RNNCell, mat: np.ndarray, bias: np.ndarray) -> np.ndarray:
    table = build_act_table(layer.act)
    aug = _augmented(mat, bias)
    h = np.zeros(layer.hidden, dtype=np.uint8)
    steps = x.reshape(layer.timesteps, layer.in_dim)
    for t in range(layer.timesteps):
        v = Fix8Vector.from_bits(np.concatenate([steps[t], h, [ONE]]))
        h = gemv_ref(v, aug, table).elems
    return h


def forward(spec: ModelSpec, weights: WeightsFile, input_bytes: bytes) -> Fix8Vector:
    """Logits of the model over one input; bit-exact against the PE simulators."""
    check_weights(spec, weights)
    if len(input_bytes) != spec.input_len:
        raise ValueError(f"input is {len(input_bytes)} bytes, model expects {spec.input_len}")
    x: np.ndarray = np.frombuffer(input_bytes, dtype=np.uint8).copy()
    for layer, lw in zip(spec.layers, weights.layers):
        if isinstance(layer, Dense):
            if x.ndim > 1:
                x = x.reshape(-1)
            x = _dense(x, layer, lw.matrix, lw.bias)
        elif isinstance(layer, Conv1D):
            if x.ndim == 1:
                x = x.reshape(-1, layer.in_ch)
            x = _conv(x, layer, lw.matrix, lw.bias)
        elif isinstance(layer, MaxPool1D):
            x = _pool(x, layer)
        elif isinstance(layer, RNNCell):
            x = _rnn(x.reshape(-1), layer, lw.matrix, lw.bias)
    return Fix8Vector.from_bits(x.reshape(-1))


def classify(spec: ModelSpec, weights: WeightsFile, input_bytes: bytes) -> int:
    from .fpe import argmax

    return argmax(forward(spec, weights, input_bytes))
