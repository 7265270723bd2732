"""Tiled fixed-point inference kernels.

Every kernel is output-stationary: a 32-bit accumulator per output
element, saturating after each multiply-accumulate, requantized once.
Tiling and threading choose how the output space is partitioned; they
never change results, because accumulation is reassociated only where
saturation provably cannot occur (see ``_accumulate`` below) and
potentially-saturating elements are replayed in canonical order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .fxp import (
    DEFAULT_FORMAT,
    INT32_MAX,
    FxpFormat,
    QuantStats,
    Tensor,
    requantize_array,
    saturating_sum,
)
from .methods import AttributionMethod, needs_relu_mask
from .model import (
    Conv2dSpec,
    DimensionError,
    FCSpec,
    MaxPool2dSpec,
    NetworkSpec,
    ReLUSpec,
    WeightFormatError,
    WeightStore,
)

# Products of two int16 values stay under 2**30, so a reduction chunk of
# length n keeps every partial sum under n * 2**30.  Chunks shorter than
# _EXACT_CHUNK therefore stay far below 2**53 and can be summed in float64
# (BLAS) with zero rounding error; longer reductions are split.
_EXACT_CHUNK = 1 << 20


class TileError(ValueError):
    """Tile geometry that cannot be scheduled."""


@dataclass(frozen=True)
class TileConfig:
    """Execution-shape knobs.

    ``t_*`` bound the tile extents over output rows/cols/channels and the
    input-channel (reduction) axis; ``None`` means untiled.  ``n_oh`` and
    ``n_ow`` describe the convolution MAC array and ``vmm_unroll`` the
    fully-connected lane count; both feed the cost model only.  ``workers``
    sets how many threads execute convolution tiles.
    """

    t_oh: int | None = None
    t_ow: int | None = None
    t_ic: int | None = None
    t_oc: int | None = None
    n_oh: int = 4
    n_ow: int = 4
    vmm_unroll: int = 16
    workers: int = 1

    def __post_init__(self) -> None:
        for name in ("t_oh", "t_ow", "t_ic", "t_oc"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise TileError(f"{name} must be positive, got {v}")
        if self.n_oh < 1 or self.n_ow < 1 or self.vmm_unroll < 1:
            raise TileError("n_oh, n_ow and vmm_unroll must be positive")
        if self.workers < 1:
            raise TileError(f"workers must be positive, got {self.workers}")


@dataclass
class MaskStore:
    """Compact forward-pass bookkeeping for the backward pass.

    ``relu`` holds one boolean per rectified activation (was it positive),
    ``pool`` one 2-bit code per pooled window naming the argmax corner in
    row-major order (0=TL, 1=TR, 2=BL, 3=BR).  Keys are layer indices.
    """

    relu: dict[int, np.ndarray] = field(default_factory=dict)
    pool: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def relu_mask_bits(self) -> int:
        return sum(m.size for m in self.relu.values())

    @property
    def pool_index_bits(self) -> int:
        return 2 * sum(m.size for m in self.pool.values())


@dataclass
class ActivationLog:
    """Optional capture of each layer's output, keyed by layer index."""

    outputs: dict[int, Tensor] = field(default_factory=dict)


def _spans(total: int, step: int | None) -> list[slice]:
    step = total if step is None else min(step, total)
    return [slice(s, min(s + step, total)) for s in range(0, total, step)]


def _accumulate(acc: np.ndarray, sabs: np.ndarray, lhs: np.ndarray, alhs: np.ndarray,
                rhs: np.ndarray, arhs: np.ndarray, spec: str) -> None:
    """Add an exact integer einsum product into int64 accumulators.

    Inputs are float64 views holding int16 values.  Every partial sum in
    the float64 contraction is an integer bounded by the running absolute
    sum, which callers keep under 2**53 by chunking the reduction, so the
    BLAS result is exact and order-independent.
    """
    acc += np.einsum(spec, lhs, rhs, optimize=True).astype(np.int64)
    sabs += np.einsum(spec, alhs, arhs, optimize=True).astype(np.int64)


def conv2d_fp(x: Tensor, weight: np.ndarray, bias: np.ndarray | None,
              tiles: TileConfig = TileConfig(), fmt: FxpFormat = DEFAULT_FORMAT,
              pad: int = 1, stats: QuantStats | None = None) -> Tensor:
    """Stride-1 2-D convolution over a (c, h, w) tensor.

    ``weight`` is int16 with dims (out_ch, in_ch, kh, kw); ``bias`` is one
    int16 per output channel, pre-shifted into the accumulator at doubled
    fractional bits.  Output element (o, i, j) accumulates products in
    input-channel-major, then kernel-row, then kernel-column order; order
    only matters if the accumulator saturates, and exactly those elements
    are computed step by step.
    """
    if len(x.dims) != 3:
        raise DimensionError(f"convolution input must be (c, h, w), got {x.dims}")
    if weight.ndim != 4 or weight.shape[1] != x.dims[0]:
        raise DimensionError(
            f"weight dims {weight.shape} do not match input channels {x.dims[0]}")
    ic, h, w_in = x.dims
    oc, _, kh, kw = weight.shape
    oh, ow = h + 2 * pad - kh + 1, w_in + 2 * pad - kw + 1
    if oh < 1 or ow < 1:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {x.dims}")
    if bias is not None and bias.shape != (oc,):
        raise DimensionError(f"bias dims {bias.shape}, expected ({oc},)")

    padded = np.zeros((ic, h + 2 * pad, w_in + 2 * pad), dtype=np.int64)
    padded[:, pad:pad + h, pad:pad + w_in] = x.raw
    padded_f = padded.astype(np.float64)
    windows = sliding_window_view(padded_f, (kh, kw), axis=(1, 2))
    abs_windows = sliding_window_view(np.abs(padded_f), (kh, kw), axis=(1, 2))
    w_f = weight.astype(np.float64)
    abs_w = np.abs(w_f)

    bias64 = np.zeros(oc, dtype=np.int64) if bias is None else bias.astype(np.int64)
    init = bias64 << np.int64(fmt.frac_bits)
    acc = np.broadcast_to(init[:, None, None], (oc, oh, ow)).copy()
    sabs = np.abs(acc)

    ic_step = tiles.t_ic if tiles.t_ic is not None else ic
    ic_step = max(1, min(ic_step, _EXACT_CHUNK // (kh * kw)))
    ic_spans = _spans(ic, ic_step)
    tasks = [(os_, hs, ws)
             for os_ in _spans(oc, tiles.t_oc)
             for hs in _spans(oh, tiles.t_oh)
             for ws in _spans(ow, tiles.t_ow)]

    def run(task: tuple[slice, slice, slice]) -> None:
        os_, hs, ws = task
        for is_ in ic_spans:
            _accumulate(acc[os_, hs, ws], sabs[os_, hs, ws],
                        windows[is_, hs, ws], abs_windows[is_, hs, ws],
                        w_f[os_, is_], abs_w[os_, is_], "ihwkl,oikl->ohw")

    if tiles.workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=tiles.workers) as pool:
            list(pool.map(run, tasks))
    else:
        for task in tasks:
            run(task)

    overflowed = 0
    for ocx, ohx, owx in np.argwhere(sabs > INT32_MAX):
        patch = padded[:, ohx:ohx + kh, owx:owx + kw]
        terms = (patch * weight[ocx].astype(np.int64)).ravel()
        total, clipped = saturating_sum(int(init[ocx]), terms)
        acc[ocx, ohx, owx] = total
        overflowed += int(clipped)
    if stats is not None:
        stats.overflowed += overflowed
    return Tensor(requantize_array(acc, fmt, stats))


def vmm_fp(x: Tensor, matrix: np.ndarray, bias: np.ndarray | None,
           tiles: TileConfig = TileConfig(), fmt: FxpFormat = DEFAULT_FORMAT,
           stats: QuantStats | None = None) -> Tensor:
    """Vector-matrix multiply: out[o] = sum_i matrix[o, i] * x[i] + bias[o].

    Accumulation order per output is ascending input index.  Tiled over
    outputs (``t_oc``) and the reduction (``t_ic``) without changing bits.
    """
    if len(x.dims) != 1:
        raise DimensionError(f"vector input must be flat, got {x.dims}")
    n = x.dims[0]
    if matrix.ndim != 2 or matrix.shape[1] != n:
        raise DimensionError(f"matrix dims {matrix.shape} do not match input length {n}")
    out = matrix.shape[0]
    if bias is not None and bias.shape != (out,):
        raise DimensionError(f"bias dims {bias.shape}, expected ({out},)")

    x_f = x.raw.astype(np.float64)
    m_f = matrix.astype(np.float64)
    bias64 = np.zeros(out, dtype=np.int64) if bias is None else bias.astype(np.int64)
    acc = bias64 << np.int64(fmt.frac_bits)
    sabs = np.abs(acc).copy()

    ic_step = tiles.t_ic if tiles.t_ic is not None else n
    ic_step = max(1, min(ic_step, _EXACT_CHUNK))
    for os_ in _spans(out, tiles.t_oc):
        for is_ in _spans(n, ic_step):
            _accumulate(acc[os_], sabs[os_], m_f[os_, is_], np.abs(m_f[os_, is_]),
                        x_f[is_], np.abs(x_f[is_]), "oi,i->o")

    overflowed = 0
    x64 = x.raw.astype(np.int64)
    for (ox,) in np.argwhere(sabs > INT32_MAX):
        terms = matrix[ox].astype(np.int64) * x64
        total, clipped = saturating_sum(int(bias64[ox]) << fmt.frac_bits, terms)
        acc[ox] = total
        overflowed += int(clipped)
    if stats is not None:
        stats.overflowed += overflowed
    return Tensor(requantize_array(acc, fmt, stats))


def relu_fp(x: Tensor, record_mask: bool = True) -> tuple[Tensor, np.ndarray | None]:
    """Clamp negatives to zero; optionally record the strict-positive mask."""
    mask = (x.raw > 0) if record_mask else None
    return Tensor(np.maximum(x.raw, 0)), mask


def maxpool_fp(x: Tensor) -> tuple[Tensor, np.ndarray]:
    """2x2 stride-2 max pooling with recorded argmax corners.

    Ties resolve to the lowest row-major corner index, matching a
    comparator tree that only replaces the running maximum on a strictly
    greater value.
    """
    if len(x.dims) != 3:
        raise DimensionError(f"pooling input must be (c, h, w), got {x.dims}")
    c, h, w = x.dims
    if h % 2 or w % 2:
        raise DimensionError(f"pooling needs even spatial dims, got {h}x{w}")
    v = x.raw.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4)
    v = v.reshape(c, h // 2, w // 2, 4)
    idx = np.argmax(v, axis=-1)  # first maximum wins ties
    out = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]
    return Tensor(out), idx.astype(np.uint8)


def forward_pass(net: NetworkSpec, weights: WeightStore, image: Tensor,
                 tiles: TileConfig = TileConfig(),
                 method: AttributionMethod | None = None,
                 log: ActivationLog | None = None,
                 stats: QuantStats | None = None) -> tuple[Tensor, MaskStore]:
    """Run the network end to end, recording masks for a later backward pass.

    With ``method`` set, pooling argmax codes are always kept and rectifier
    masks are kept when the method consumes them; with ``method=None`` the
    pass is plain inference and records nothing.
    """
    if image.dims != net.input_dims:
        raise DimensionError(
            f"image dims {image.dims} do not match network input {net.input_dims}")
    masks = MaskStore()
    keep_relu = method is not None and needs_relu_mask(method)
    cur = image
    for idx, layer in enumerate(net.layers):
        if isinstance(layer, (Conv2dSpec, FCSpec)):
            p = weights.params.get(idx)
            if p is None:
                raise WeightFormatError(f"no parameters loaded for layer {idx}")
        if isinstance(layer, Conv2dSpec):
            cur = conv2d_fp(cur, p.weight, p.bias, tiles, weights.fmt, layer.pad, stats)
            if layer.fused_relu:
                cur, m = relu_fp(cur, keep_relu)
                if keep_relu:
                    masks.relu[idx] = m
        elif isinstance(layer, MaxPool2dSpec):
            cur, pidx = maxpool_fp(cur)
            if method is not None:
                masks.pool[idx] = pidx
        elif isinstance(layer, FCSpec):
            cur = vmm_fp(cur.reshape((layer.in_features,)), p.weight, p.bias,
                         tiles, weights.fmt, stats)
        elif isinstance(layer, ReLUSpec):
            cur, m = relu_fp(cur, keep_relu)
            if keep_relu:
                masks.relu[idx] = m
        if log is not None:
            log.outputs[idx] = cur
    return cur, masks
