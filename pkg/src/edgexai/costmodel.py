"""Analytical accelerator cost model.

Counts are exact functions of the network shape chain and the execution
configuration; nothing here runs the network.  Byte traffic assumes
16-bit words, a pooling stage absorbed into the neighbouring
convolution's store (forward) and load (backward) paths, and rectifiers
applied in place.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .forward import TileConfig
from .methods import AttributionMethod, needs_relu_mask
from .model import Conv2dSpec, FCSpec, MaxPool2dSpec, NetworkSpec, ReLUSpec

BYTES_PER_ELEMENT = 2
DEFAULT_BUS_BYTES_PER_CYCLE = 8
DEFAULT_AUTODIFF_BITS = 32


@dataclass(frozen=True)
class CostReport:
    mask_bits: int
    autodiff_cache_bits: int
    dram_bytes_fp: int
    dram_bytes_bp: int
    mac_count_fp: int
    mac_count_bp: int
    est_cycles_fp: int
    est_cycles_bp: int
    dsp_count: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _size(dims: tuple[int, ...]) -> int:
    return int(np.prod(dims))


def mask_overhead_bits(net: NetworkSpec, method: AttributionMethod) -> int:
    """Bits of forward bookkeeping the backward pass needs.

    One bit per rectified activation (skipped entirely for methods that
    ignore the forward decision) and two bits per pooled output element.
    """
    chain = net.shape_chain()
    bits = 0
    for (layer, (_in, out)) in zip(net.layers, chain):
        if isinstance(layer, MaxPool2dSpec):
            bits += 2 * _size(out)
        elif needs_relu_mask(method):
            if isinstance(layer, ReLUSpec):
                bits += _size(out)
            elif isinstance(layer, Conv2dSpec) and layer.fused_relu:
                bits += _size(out)
    return bits


def autodiff_cache_bits(net: NetworkSpec, precision_bits: int = DEFAULT_AUTODIFF_BITS) -> int:
    """Cache footprint of a framework that keeps every layer output."""
    return precision_bits * sum(_size(out) for _in, out in net.shape_chain())


def mac_count(net: NetworkSpec, phase: str = "fp") -> int:
    """Multiply-accumulates per pass.

    Forward convolutions cost out_elements * in_ch * k^2; their adjoints
    cost in_elements * out_ch * k^2.  Fully-connected layers cost the
    matrix size either way.  Rectifiers and pooling are MAC-free.
    """
    if phase not in ("fp", "bp"):
        raise ValueError(f"phase must be 'fp' or 'bp', got {phase!r}")
    total = 0
    for layer, (in_dims, out_dims) in zip(net.layers, net.shape_chain()):
        if isinstance(layer, Conv2dSpec):
            taps = layer.kernel * layer.kernel
            if phase == "fp":
                total += _size(out_dims) * layer.in_ch * taps
            else:
                total += _size(in_dims) * layer.out_ch * taps
        elif isinstance(layer, FCSpec):
            total += layer.out_features * layer.in_features
    return total


def _pooled_after(net: NetworkSpec, idx: int) -> bool:
    return idx + 1 < len(net.layers) and isinstance(net.layers[idx + 1], MaxPool2dSpec)


def dram_traffic_bytes(net: NetworkSpec, phase: str = "fp") -> int:
    """Off-chip words moved, in bytes.

    Each weighted layer loads its operands and stores its result.  A
    convolution followed by pooling stores only the pooled surface
    (forward) and loads only the pooled gradient (backward); pooling and
    rectifier layers themselves move nothing.  Backward skips biases.
    """
    if phase not in ("fp", "bp"):
        raise ValueError(f"phase must be 'fp' or 'bp', got {phase!r}")
    chain = net.shape_chain()
    elements = 0
    for idx, (layer, (in_dims, out_dims)) in enumerate(zip(net.layers, chain)):
        if not isinstance(layer, (Conv2dSpec, FCSpec)):
            continue
        if isinstance(layer, Conv2dSpec):
            w_els = layer.out_ch * layer.in_ch * layer.kernel * layer.kernel
            result = _size(chain[idx + 1][1]) if _pooled_after(net, idx) else _size(out_dims)
            bias = layer.out_ch
        else:
            w_els = layer.out_features * layer.in_features
            result = _size(out_dims)
            bias = layer.out_features
        if phase == "fp":
            elements += _size(in_dims) + w_els + bias + result
        else:
            elements += result + w_els + _size(in_dims)
    return BYTES_PER_ELEMENT * elements


def est_cycles(net: NetworkSpec, tiles: TileConfig, phase: str = "fp",
               bus_bytes_per_cycle: int = DEFAULT_BUS_BYTES_PER_CYCLE) -> int:
    """Latency estimate: MAC-array occupancy plus bus occupancy.

    Convolutions issue n_oh * n_ow MACs per cycle, fully-connected layers
    ``vmm_unroll`` per cycle, and every DRAM byte crosses the bus at
    ``bus_bytes_per_cycle``.
    """
    conv_lanes = tiles.n_oh * tiles.n_ow
    cycles = 0
    for layer, (in_dims, out_dims) in zip(net.layers, net.shape_chain()):
        if isinstance(layer, Conv2dSpec):
            taps = layer.kernel * layer.kernel
            if phase == "fp":
                macs = _size(out_dims) * layer.in_ch * taps
            else:
                macs = _size(in_dims) * layer.out_ch * taps
            cycles += _ceil_div(macs, conv_lanes)
        elif isinstance(layer, FCSpec):
            cycles += _ceil_div(layer.out_features * layer.in_features, tiles.vmm_unroll)
    cycles += _ceil_div(dram_traffic_bytes(net, phase), bus_bytes_per_cycle)
    return cycles


def dsp_count(tiles: TileConfig) -> int:
    """Multipliers instantiated: the conv MAC array plus the FC lanes."""
    return tiles.n_oh * tiles.n_ow + tiles.vmm_unroll


def build_report(net: NetworkSpec, method: AttributionMethod,
                 tiles: TileConfig = TileConfig(),
                 autodiff_precision_bits: int = DEFAULT_AUTODIFF_BITS,
                 bus_bytes_per_cycle: int = DEFAULT_BUS_BYTES_PER_CYCLE) -> CostReport:
    return CostReport(
        mask_bits=mask_overhead_bits(net, method),
        autodiff_cache_bits=autodiff_cache_bits(net, autodiff_precision_bits),
        dram_bytes_fp=dram_traffic_bytes(net, "fp"),
        dram_bytes_bp=dram_traffic_bytes(net, "bp"),
        mac_count_fp=mac_count(net, "fp"),
        mac_count_bp=mac_count(net, "bp"),
        est_cycles_fp=est_cycles(net, tiles, "fp", bus_bytes_per_cycle),
        est_cycles_bp=est_cycles(net, tiles, "bp", bus_bytes_per_cycle),
        dsp_count=dsp_count(tiles),
    )
