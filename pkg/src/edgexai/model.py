"""Network description and parameter loading.

A network is a flat sequence of layer descriptors validated as a shape
chain.  Parameters arrive in a little-endian binary container (magic
"EXAI") holding float32 weights; loading quantizes them once into the
run's fixed-point format.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .fxp import FormatError, FxpFormat, QuantStats, quantize_array

MAGIC = b"EXAI"
VERSION = 1
_KIND_CONV = 1
_KIND_FC = 2


class ValidationError(ValueError):
    """Base for config, weight, and dimension failures."""


class ConfigError(ValidationError):
    """Network description that fails to parse or to chain."""


class WeightFormatError(ValidationError):
    """Weight container violating its framing or the target network."""


class DimensionError(ValidationError):
    """Runtime tensor whose shape disagrees with the network."""


@dataclass(frozen=True)
class Conv2dSpec:
    """3x3-style convolution; padding keeps spatial size when 2*pad == kernel-1."""

    in_ch: int
    out_ch: int
    kernel: int = 3
    stride: int = 1
    pad: int = 1
    fused_relu: bool = False


@dataclass(frozen=True)
class MaxPool2dSpec:
    window: int = 2
    stride: int = 2


@dataclass(frozen=True)
class FCSpec:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class ReLUSpec:
    pass


LayerSpec = Conv2dSpec | MaxPool2dSpec | FCSpec | ReLUSpec


def _out_dims(idx: int, layer: LayerSpec, dims: tuple[int, ...]) -> tuple[int, ...]:
    """One shape-chain step; raises ConfigError naming the offending layer."""
    if isinstance(layer, Conv2dSpec):
        if len(dims) != 3:
            raise ConfigError(f"layer {idx}: Conv2d needs (c, h, w) input, got {dims}")
        c, h, w = dims
        if c != layer.in_ch:
            raise ConfigError(f"layer {idx}: Conv2d expects {layer.in_ch} channels, got {c}")
        if layer.stride != 1:
            raise ConfigError(f"layer {idx}: only stride-1 convolutions are supported")
        if layer.kernel < 1 or layer.pad < 0:
            raise ConfigError(f"layer {idx}: bad kernel/pad ({layer.kernel}, {layer.pad})")
        oh = h + 2 * layer.pad - layer.kernel + 1
        ow = w + 2 * layer.pad - layer.kernel + 1
        if oh < 1 or ow < 1:
            raise ConfigError(f"layer {idx}: kernel {layer.kernel} larger than padded input {dims}")
        return (layer.out_ch, oh, ow)
    if isinstance(layer, MaxPool2dSpec):
        if len(dims) != 3:
            raise ConfigError(f"layer {idx}: MaxPool2d needs (c, h, w) input, got {dims}")
        if layer.window != 2 or layer.stride != 2:
            raise ConfigError(f"layer {idx}: only 2x2 stride-2 pooling is supported")
        c, h, w = dims
        if h % 2 or w % 2:
            raise ConfigError(f"layer {idx}: pooling needs even spatial dims, got {h}x{w}")
        return (c, h // 2, w // 2)
    if isinstance(layer, FCSpec):
        n = int(np.prod(dims))
        if n != layer.in_features:
            raise ConfigError(
                f"layer {idx}: FC expects {layer.in_features} inputs, "
                f"previous layer provides {n}")
        return (layer.out_features,)
    if isinstance(layer, ReLUSpec):
        return dims
    raise ConfigError(f"layer {idx}: unknown layer kind {type(layer).__name__}")


@dataclass(frozen=True)
class NetworkSpec:
    """Validated layer sequence.  Construction runs the shape chain."""

    layers: tuple[LayerSpec, ...]
    input_dims: tuple[int, int, int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_dims", tuple(self.input_dims))
        if not self.layers:
            raise ConfigError("network has no layers")
        if len(self.input_dims) != 3 or any(d < 1 for d in self.input_dims):
            raise ConfigError(f"input_dims must be three positive ints, got {self.input_dims}")
        self.shape_chain()

    def shape_chain(self) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
        """Per-layer (input_dims, output_dims) pairs."""
        chain = []
        dims: tuple[int, ...] = self.input_dims
        for idx, layer in enumerate(self.layers):
            out = _out_dims(idx, layer, dims)
            chain.append((dims, out))
            dims = out
        return chain

    @property
    def output_dims(self) -> tuple[int, ...]:
        return self.shape_chain()[-1][1]

    def parameterized(self) -> list[tuple[int, LayerSpec]]:
        """Indices of layers that carry weights, in network order."""
        return [(i, l) for i, l in enumerate(self.layers)
                if isinstance(l, (Conv2dSpec, FCSpec))]


def param_count(layer: LayerSpec) -> int:
    """Weights plus biases held by one layer."""
    if isinstance(layer, Conv2dSpec):
        return layer.out_ch * layer.in_ch * layer.kernel * layer.kernel + layer.out_ch
    if isinstance(layer, FCSpec):
        return layer.out_features * layer.in_features + layer.out_features
    return 0


def total_params(net: NetworkSpec) -> int:
    return sum(param_count(l) for l in net.layers)


_LAYER_PARSERS = {
    "Conv2d": lambda d: Conv2dSpec(
        in_ch=int(d["in_ch"]), out_ch=int(d["out_ch"]),
        kernel=int(d.get("kernel", 3)), stride=int(d.get("stride", 1)),
        pad=int(d.get("pad", 1)), fused_relu=bool(d.get("fused_relu", False))),
    "MaxPool2d": lambda d: MaxPool2dSpec(
        window=int(d.get("window", 2)), stride=int(d.get("stride", 2))),
    "FC": lambda d: FCSpec(
        in_features=int(d["in_features"]), out_features=int(d["out_features"])),
    "ReLU": lambda d: ReLUSpec(),
}


def parse_config(config_text: str) -> tuple[NetworkSpec, FxpFormat]:
    """Parse a JSON network description plus its run format.

    Top-level keys: ``input_dims`` [c, h, w], ``layers`` (list of objects
    with a ``kind`` field), and optional ``fxp_format`` like "q8.8".
    """
    try:
        doc = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    try:
        input_dims = tuple(int(d) for d in doc["input_dims"])
        raw_layers = doc["layers"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"config missing or malformed input_dims/layers: {exc}") from exc
    if not isinstance(raw_layers, list):
        raise ConfigError("config 'layers' must be a list")
    layers: list[LayerSpec] = []
    for idx, entry in enumerate(raw_layers):
        if not isinstance(entry, dict) or "kind" not in entry:
            raise ConfigError(f"layer {idx}: each layer needs a 'kind' field")
        kind = entry["kind"]
        parser = _LAYER_PARSERS.get(kind)
        if parser is None:
            raise ConfigError(f"layer {idx}: unknown kind {kind!r}")
        try:
            layers.append(parser(entry))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"layer {idx}: bad {kind} fields: {exc}") from exc
    try:
        fmt = FxpFormat.parse(doc.get("fxp_format", "q8.8"))
    except FormatError as exc:
        raise ConfigError(str(exc)) from exc
    if len(input_dims) != 3:
        raise ConfigError(f"input_dims must have three entries, got {input_dims}")
    return NetworkSpec(layers=tuple(layers), input_dims=input_dims), fmt


def load_network(config_text: str) -> NetworkSpec:
    """Parse a JSON network description, discarding the format field."""
    return parse_config(config_text)[0]


@dataclass
class LayerParams:
    """Quantized parameters for one layer: int16 weight and bias arrays."""

    weight: np.ndarray
    bias: np.ndarray


@dataclass
class WeightStore:
    """All quantized parameters, keyed by layer index, plus load statistics."""

    params: dict[int, LayerParams]
    fmt: FxpFormat
    stats: QuantStats = field(default_factory=QuantStats)


def _expected_dims(layer: LayerSpec) -> tuple[int, ...]:
    if isinstance(layer, Conv2dSpec):
        return (layer.out_ch, layer.in_ch, layer.kernel, layer.kernel)
    if isinstance(layer, FCSpec):
        return (layer.out_features, layer.in_features)
    raise ValueError("layer carries no parameters")


class _Cursor:
    """Sequential reader over the weight container bytes."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightFormatError(f"weight file truncated while reading {what}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def f32_array(self, count: int, what: str) -> np.ndarray:
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64)


def read_weight_file(data: bytes) -> list[tuple[int, tuple[int, ...], np.ndarray, np.ndarray]]:
    """Decode the container into (kind, dims, weights, biases) records.

    Weights come back as float64 arrays in row-major declaration order;
    framing violations raise WeightFormatError.
    """
    cur = _Cursor(data)
    if cur.take(4, "magic") != MAGIC:
        raise WeightFormatError("weight file: bad magic")
    version = cur.u16("version")
    if version != VERSION:
        raise WeightFormatError(f"weight file: unsupported version {version}")
    layer_count = cur.u16("layer count")
    records = []
    for n in range(layer_count):
        kind = cur.u8(f"record {n} kind")
        if kind == _KIND_CONV:
            dims = tuple(cur.u32(f"record {n} dims") for _ in range(4))
        elif kind == _KIND_FC:
            dims = tuple(cur.u32(f"record {n} dims") for _ in range(2))
        else:
            raise WeightFormatError(f"weight file: record {n} has unknown kind {kind}")
        w_count = int(np.prod(dims))
        b_count = dims[0]
        w = cur.f32_array(w_count, f"record {n} weights").reshape(dims)
        b = cur.f32_array(b_count, f"record {n} biases")
        records.append((kind, dims, w, b))
    if cur.pos != len(data):
        raise WeightFormatError(f"weight file: {len(data) - cur.pos} trailing bytes")
    return records


def load_weights(file_bytes: bytes, spec: NetworkSpec, fmt: FxpFormat) -> WeightStore:
    """Decode, check against the network, and quantize all parameters."""
    records = read_weight_file(file_bytes)
    targets = spec.parameterized()
    if len(records) != len(targets):
        raise WeightFormatError(
            f"weight file holds {len(records)} layers, network needs {len(targets)}")
    stats = QuantStats()
    params: dict[int, LayerParams] = {}
    for (kind, dims, w, b), (idx, layer) in zip(records, targets):
        want_kind = _KIND_CONV if isinstance(layer, Conv2dSpec) else _KIND_FC
        if kind != want_kind:
            raise WeightFormatError(f"weight file: record for layer {idx} has kind {kind}")
        want_dims = _expected_dims(layer)
        if dims != want_dims:
            raise WeightFormatError(
                f"weight file: layer {idx} dims {dims} do not match network {want_dims}")
        params[idx] = LayerParams(
            weight=quantize_array(w, fmt, stats),
            bias=quantize_array(b, fmt, stats))
    return WeightStore(params=params, fmt=fmt, stats=stats)


def write_weight_file(spec: NetworkSpec,
                      float_params: dict[int, tuple[np.ndarray, np.ndarray]]) -> bytes:
    """Build a weight container from float arrays keyed like the network."""
    targets = spec.parameterized()
    missing = [i for i, _ in targets if i not in float_params]
    if missing:
        raise ValueError(f"missing parameters for layers {missing}")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HH", VERSION, len(targets))
    for idx, layer in targets:
        w, b = float_params[idx]
        dims = _expected_dims(layer)
        w = np.asarray(w, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if w.shape != dims or b.shape != (dims[0],):
            raise ValueError(f"layer {idx}: arrays {w.shape}/{b.shape} do not match {dims}")
        if isinstance(layer, Conv2dSpec):
            out += struct.pack("<B4I", _KIND_CONV, *dims)
        else:
            out += struct.pack("<B2I", _KIND_FC, *dims)
        out += w.astype("<f4").tobytes()
        out += b.astype("<f4").tobytes()
    return bytes(out)


def image_classifier(fused_relu: bool = False) -> NetworkSpec:
    """The 32x32 RGB reference classifier: four 3x3 convolutions in two
    pooled stages, then a 128-wide hidden layer and ten outputs.

    ``fused_relu`` switches the convolutions' store-path rectification on;
    off by default so the convolution outputs stay linear.
    """
    return NetworkSpec(
        layers=(
            Conv2dSpec(3, 32, fused_relu=fused_relu),
            Conv2dSpec(32, 32, fused_relu=fused_relu),
            MaxPool2dSpec(),
            Conv2dSpec(32, 64, fused_relu=fused_relu),
            Conv2dSpec(64, 64, fused_relu=fused_relu),
            MaxPool2dSpec(),
            FCSpec(4096, 128),
            ReLUSpec(),
            FCSpec(128, 10),
        ),
        input_dims=(3, 32, 32),
    )
