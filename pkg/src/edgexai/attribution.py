"""Input-relevance computation from recorded masks.

One forward pass records rectifier masks and pooling argmax codes; the
backward walk then needs no cached activations at all.  Each backward
step is logged with its gradient sparsity and precision-loss tallies so
runs can be compared across methods.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backward import (
    conv2d_bp,
    relu_bp_deconvnet,
    relu_bp_guided,
    relu_bp_saliency,
    unpool_bp,
    vmm_bp,
)
from .forward import MaskStore, TileConfig, forward_pass
from .fxp import FxpFormat, QuantStats, Tensor, quantize
from .methods import AttributionMethod, needs_relu_mask
from .model import (
    Conv2dSpec,
    FCSpec,
    MaxPool2dSpec,
    NetworkSpec,
    ReLUSpec,
    ValidationError,
    WeightStore,
)


@dataclass(frozen=True)
class RelevanceMap:
    """Per-input-element relevance in the run's fixed-point format."""

    values: Tensor
    class_idx: int
    method: AttributionMethod


@dataclass
class StepRecord:
    """One backward step: which layer, and what the gradient looked like after."""

    layer_idx: int
    kind: str
    sparsity: float
    stats: QuantStats


@dataclass
class AttributionTrace:
    """Diagnostics for one attribution run."""

    class_idx: int
    logits: np.ndarray = field(default_factory=lambda: np.zeros(0))
    steps: list[StepRecord] = field(default_factory=list)
    forward_stats: QuantStats = field(default_factory=QuantStats)

    @property
    def mean_sparsity(self) -> float:
        if not self.steps:
            return 0.0
        return float(np.mean([s.sparsity for s in self.steps]))


def sparsity(t: Tensor) -> float:
    """Fraction of exactly-zero elements."""
    if t.size == 0:
        raise ValidationError("sparsity of an empty tensor is undefined")
    return 1.0 - np.count_nonzero(t.raw) / t.size


def seed_gradient(logits: Tensor, class_idx: int, fmt: FxpFormat) -> Tensor:
    """One-hot gradient of the selected logit with respect to the logits."""
    if len(logits.dims) != 1:
        raise ValidationError(f"logits must be flat, got dims {logits.dims}")
    n = logits.dims[0]
    if not 0 <= class_idx < n:
        raise ValidationError(f"class index {class_idx} outside [0, {n})")
    seed = np.zeros(n, dtype=np.int16)
    seed[class_idx] = quantize(1.0, fmt).raw
    return Tensor(seed)


def _relu_rule(g: Tensor, mask: np.ndarray | None, method: AttributionMethod) -> Tensor:
    if method is AttributionMethod.SALIENCY:
        return relu_bp_saliency(g, mask)
    if method is AttributionMethod.DECONVNET:
        return relu_bp_deconvnet(g)
    return relu_bp_guided(g, mask)


def backward_pass(net: NetworkSpec, weights: WeightStore, masks: MaskStore,
                  seed: Tensor, method: AttributionMethod,
                  tiles: TileConfig = TileConfig(),
                  trace: AttributionTrace | None = None) -> Tensor:
    """Walk the layers in reverse, propagating the seed to the input."""
    chain = net.shape_chain()
    g = seed
    for idx in reversed(range(len(net.layers))):
        layer = net.layers[idx]
        in_dims = chain[idx][0]
        step = QuantStats()
        if isinstance(layer, FCSpec):
            g = vmm_bp(g, weights.params[idx].weight, tiles, weights.fmt, step)
            kind = "FC"
        elif isinstance(layer, ReLUSpec):
            g = _relu_rule(g, masks.relu.get(idx), method)
            kind = "ReLU"
        elif isinstance(layer, MaxPool2dSpec):
            pool_mask = masks.pool.get(idx)
            if pool_mask is None:
                raise ValidationError(f"no pooling indices recorded for layer {idx}")
            g = unpool_bp(g, pool_mask)
            kind = "MaxPool2d"
        elif isinstance(layer, Conv2dSpec):
            if layer.fused_relu:
                g = _relu_rule(g, masks.relu.get(idx), method)
            # adjoint of a pad-p convolution pads its own input by k-1-p
            g = conv2d_bp(g, weights.params[idx].weight, tiles, weights.fmt,
                          layer.kernel - 1 - layer.pad, step)
            kind = "Conv2d+ReLU" if layer.fused_relu else "Conv2d"
        g = g.reshape(in_dims)
        if trace is not None:
            trace.steps.append(StepRecord(idx, kind, sparsity(g), step))
    return g


def attribute(net: NetworkSpec, weights: WeightStore, image: Tensor,
              method: AttributionMethod, tiles: TileConfig = TileConfig(),
              class_idx: int | None = None) -> tuple[RelevanceMap, AttributionTrace]:
    """Forward with mask recording, then backward to input relevance.

    ``class_idx=None`` selects the predicted class (argmax logit, lowest
    index on ties).  An explicit out-of-range index raises.
    """
    fwd_stats = QuantStats()
    logits, masks = forward_pass(net, weights, image, tiles, method, stats=fwd_stats)
    chosen = int(np.argmax(logits.raw)) if class_idx is None else class_idx
    seed = seed_gradient(logits, chosen, weights.fmt)
    trace = AttributionTrace(class_idx=chosen, logits=logits.to_floats(weights.fmt),
                             forward_stats=fwd_stats)
    g = backward_pass(net, weights, masks, seed, method, tiles, trace)
    return RelevanceMap(values=g, class_idx=chosen, method=method), trace


def to_heatmap(rmap: RelevanceMap, fmt: FxpFormat) -> np.ndarray:
    """Collapse relevance to a uint8 (h, w) image.

    Channels reduce by maximum absolute value; the surface then min-max
    normalizes to 0..255.  A constant surface maps to mid-gray.
    """
    vals = rmap.values.to_floats(fmt)
    if vals.ndim != 3:
        raise ValidationError(f"relevance must be (c, h, w), got {vals.shape}")
    surface = np.max(np.abs(vals), axis=0)
    lo, hi = float(surface.min()), float(surface.max())
    if hi == lo:
        return np.full(surface.shape, 128, dtype=np.uint8)
    scaled = np.round((surface - lo) / (hi - lo) * 255.0)
    return scaled.astype(np.uint8)
