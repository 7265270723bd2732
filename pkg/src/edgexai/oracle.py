"""Float64 reference implementations, structured for independence.

Nothing here shares code with the fixed-point engine: convolutions are
direct per-position summation loops, their adjoints are scatter loops,
and a central-difference differentiator closes the loop on the chain
rule itself.  Agreement between this module and the engine is evidence;
shared bugs would require the same mistake written twice.
"""

from __future__ import annotations

import numpy as np

from .methods import AttributionMethod
from .model import (
    Conv2dSpec,
    FCSpec,
    MaxPool2dSpec,
    NetworkSpec,
    ReLUSpec,
    read_weight_file,
)

FloatParams = dict[int, tuple[np.ndarray, np.ndarray]]


def float_params_from_file(file_bytes: bytes, spec: NetworkSpec) -> FloatParams:
    """Decode a weight container to float64 arrays keyed by layer index."""
    records = read_weight_file(file_bytes)
    out: FloatParams = {}
    for (kind, dims, w, b), (idx, _layer) in zip(records, spec.parameterized()):
        out[idx] = (w, b)
    return out


def _conv_ref(x: np.ndarray, w: np.ndarray, b: np.ndarray, pad: int) -> np.ndarray:
    ic, h, win = x.shape
    oc, _, kh, kw = w.shape
    oh, ow = h + 2 * pad - kh + 1, win + 2 * pad - kw + 1
    xp = np.zeros((ic, h + 2 * pad, win + 2 * pad))
    xp[:, pad:pad + h, pad:pad + win] = x
    out = np.empty((oc, oh, ow))
    for o in range(oc):
        for i in range(oh):
            for j in range(ow):
                out[o, i, j] = np.sum(xp[:, i:i + kh, j:j + kw] * w[o]) + b[o]
    return out


def _conv_bp_ref(gy: np.ndarray, w: np.ndarray, pad: int,
                 in_shape: tuple[int, int, int]) -> np.ndarray:
    """Adjoint of _conv_ref: scatter each output gradient through its taps."""
    ic, h, win = in_shape
    oc, _, kh, kw = w.shape
    gp = np.zeros((ic, h + 2 * pad, win + 2 * pad))
    _, oh, ow = gy.shape
    for o in range(oc):
        for i in range(oh):
            for j in range(ow):
                gp[:, i:i + kh, j:j + kw] += gy[o, i, j] * w[o]
    return gp[:, pad:pad + h, pad:pad + win]


def _pool_ref(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c, h, w = x.shape
    out = np.empty((c, h // 2, w // 2))
    arg = np.empty((c, h // 2, w // 2), dtype=np.int64)
    for ch in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                window = x[ch, 2 * i:2 * i + 2, 2 * j:2 * j + 2].ravel()
                k = int(np.argmax(window))
                out[ch, i, j] = window[k]
                arg[ch, i, j] = k
    return out, arg


def _unpool_ref(gy: np.ndarray, arg: np.ndarray) -> np.ndarray:
    c, h, w = gy.shape
    out = np.zeros((c, 2 * h, 2 * w))
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                k = arg[ch, i, j]
                out[ch, 2 * i + k // 2, 2 * j + k % 2] = gy[ch, i, j]
    return out


def forward_ref(spec: NetworkSpec, float_weights: FloatParams,
                image: np.ndarray) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Reference forward pass.  Returns (logits, per-layer outputs)."""
    x = np.asarray(image, dtype=np.float64)
    acts: dict[int, np.ndarray] = {}
    for idx, layer in enumerate(spec.layers):
        if isinstance(layer, Conv2dSpec):
            w, b = float_weights[idx]
            x = _conv_ref(x, w, b, layer.pad)
            if layer.fused_relu:
                x = np.maximum(x, 0.0)
        elif isinstance(layer, MaxPool2dSpec):
            x, _ = _pool_ref(x)
        elif isinstance(layer, FCSpec):
            w, b = float_weights[idx]
            x = w @ x.reshape(-1) + b
        elif isinstance(layer, ReLUSpec):
            x = np.maximum(x, 0.0)
        acts[idx] = x
    return x, acts


def _relu_rule(g: np.ndarray, pre: np.ndarray, method: AttributionMethod) -> np.ndarray:
    if method is AttributionMethod.SALIENCY:
        return g * (pre > 0)
    if method is AttributionMethod.DECONVNET:
        return np.maximum(g, 0.0)
    return np.maximum(g, 0.0) * (pre > 0)


def backward_ref(spec: NetworkSpec, float_weights: FloatParams, image: np.ndarray,
                 method: AttributionMethod, class_idx: int) -> np.ndarray:
    """Reference attribution: forward with caching, then the reverse walk."""
    x = np.asarray(image, dtype=np.float64)
    chain = spec.shape_chain()
    pre_relu: dict[int, np.ndarray] = {}
    pool_arg: dict[int, np.ndarray] = {}
    for idx, layer in enumerate(spec.layers):
        if isinstance(layer, Conv2dSpec):
            w, b = float_weights[idx]
            x = _conv_ref(x, w, b, layer.pad)
            if layer.fused_relu:
                pre_relu[idx] = x
                x = np.maximum(x, 0.0)
        elif isinstance(layer, MaxPool2dSpec):
            x, pool_arg[idx] = _pool_ref(x)
        elif isinstance(layer, FCSpec):
            w, b = float_weights[idx]
            x = w @ x.reshape(-1) + b
        elif isinstance(layer, ReLUSpec):
            pre_relu[idx] = x
            x = np.maximum(x, 0.0)

    g = np.zeros(x.shape)
    g[class_idx] = 1.0
    for idx in reversed(range(len(spec.layers))):
        layer = spec.layers[idx]
        in_dims = chain[idx][0]
        if isinstance(layer, FCSpec):
            w, _ = float_weights[idx]
            g = w.T @ g
        elif isinstance(layer, ReLUSpec):
            g = _relu_rule(g, pre_relu[idx], method)
        elif isinstance(layer, MaxPool2dSpec):
            g = _unpool_ref(g, pool_arg[idx])
        elif isinstance(layer, Conv2dSpec):
            w, _ = float_weights[idx]
            if layer.fused_relu:
                g = _relu_rule(g, pre_relu[idx], method)
            g = _conv_bp_ref(g, w, layer.pad, in_dims)
        g = g.reshape(in_dims)
    return g


def finite_diff_grad(spec: NetworkSpec, float_weights: FloatParams, image: np.ndarray,
                     class_idx: int, eps: float = 1e-4) -> np.ndarray:
    """Central differences of the selected logit with respect to each pixel."""
    x = np.asarray(image, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    base = x.copy().reshape(-1)
    for i in range(base.size):
        saved = base[i]
        base[i] = saved + eps
        hi = forward_ref(spec, float_weights, base.reshape(x.shape))[0][class_idx]
        base[i] = saved - eps
        lo = forward_ref(spec, float_weights, base.reshape(x.shape))[0][class_idx]
        base[i] = saved
        flat[i] = (hi - lo) / (2.0 * eps)
    return grad
