"""Bit-accurate fixed-point CNN inference with mask-based feature attribution
and an analytical accelerator cost model."""

from .attribution import (
    AttributionTrace,
    RelevanceMap,
    attribute,
    backward_pass,
    seed_gradient,
    sparsity,
    to_heatmap,
)
from .backward import (
    MaskError,
    conv2d_bp,
    flip_transpose,
    relu_bp_deconvnet,
    relu_bp_guided,
    relu_bp_saliency,
    unpool_bp,
    vmm_bp,
)
from .costmodel import CostReport, build_report
from .forward import (
    ActivationLog,
    MaskStore,
    TileConfig,
    TileError,
    conv2d_fp,
    forward_pass,
    maxpool_fp,
    relu_fp,
    vmm_fp,
)
from .fxp import (
    DEFAULT_FORMAT,
    Acc32,
    FormatError,
    Fxp16,
    FxpFormat,
    QuantStats,
    Tensor,
    dequantize,
    mac,
    quantize,
    requantize,
)
from .methods import AttributionMethod, needs_relu_mask
from .model import (
    ConfigError,
    Conv2dSpec,
    DimensionError,
    FCSpec,
    MaxPool2dSpec,
    NetworkSpec,
    ReLUSpec,
    ValidationError,
    WeightFormatError,
    WeightStore,
    image_classifier,
    load_network,
    load_weights,
    param_count,
    parse_config,
    total_params,
    write_weight_file,
)

__version__ = "0.1.0"
