"""Gradient propagation on the forward datapaths.

The backward convolution is literally the forward kernel fed with
flipped, channel-transposed weights, and the backward vector-matrix
product is the forward one fed with the transposed matrix, so both
inherit tiling, saturation, and requantization behaviour bit for bit.
Rectifier and pooling steps consume the masks recorded on the way up.
"""

from __future__ import annotations

import numpy as np

from .fxp import DEFAULT_FORMAT, FxpFormat, QuantStats, Tensor
from .forward import TileConfig, conv2d_fp, vmm_fp
from .model import DimensionError, ValidationError


class MaskError(ValidationError):
    """Missing or mismatched forward-pass mask."""


def flip_transpose(weight: np.ndarray) -> np.ndarray:
    """Adjoint weights: swap channel roles and rotate each kernel 180 degrees.

    out[i, o, r, c] = weight[o, i, kh-1-r, kw-1-c]
    """
    if weight.ndim != 4:
        raise DimensionError(f"weight dims {weight.shape}, expected 4 axes")
    return np.ascontiguousarray(weight.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])


def conv2d_bp(grad_out: Tensor, weight: np.ndarray,
              tiles: TileConfig = TileConfig(), fmt: FxpFormat = DEFAULT_FORMAT,
              pad: int = 1, stats: QuantStats | None = None) -> Tensor:
    """Propagate gradients through a stride-1 convolution, no bias.

    ``pad`` is this backward convolution's own padding; the adjoint of a
    forward convolution with kernel k and padding p needs ``pad=k-1-p``
    (which is again p for the same-padding case p=(k-1)/2).
    """
    return conv2d_fp(grad_out, flip_transpose(weight), None, tiles, fmt, pad, stats)


def vmm_bp(grad_out: Tensor, matrix: np.ndarray,
           tiles: TileConfig = TileConfig(), fmt: FxpFormat = DEFAULT_FORMAT,
           stats: QuantStats | None = None) -> Tensor:
    """Propagate gradients through a fully-connected layer: matrix^T @ grad."""
    if matrix.ndim != 2:
        raise DimensionError(f"matrix dims {matrix.shape}, expected 2 axes")
    return vmm_fp(grad_out, np.ascontiguousarray(matrix.T), None, tiles, fmt, stats)


def _check_mask(grad: Tensor, mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        raise MaskError("rectifier mask required but not recorded")
    if mask.shape != grad.raw.shape:
        raise MaskError(f"mask dims {mask.shape} do not match gradient {grad.raw.shape}")
    return mask


def relu_bp_saliency(grad: Tensor, mask: np.ndarray) -> Tensor:
    """Chain rule: pass gradient only where the forward input was positive."""
    mask = _check_mask(grad, mask)
    return Tensor(np.where(mask, grad.raw, np.int16(0)))


def relu_bp_deconvnet(grad: Tensor) -> Tensor:
    """Rectify the gradient itself, ignoring the forward decision."""
    return Tensor(np.maximum(grad.raw, 0))


def relu_bp_guided(grad: Tensor, mask: np.ndarray) -> Tensor:
    """Pass only positive gradients at positions that fired forward.

    Composition of the other two rules, in either order.
    """
    mask = _check_mask(grad, mask)
    keep = mask & (grad.raw > 0)
    return Tensor(np.where(keep, grad.raw, np.int16(0)))


def unpool_bp(grad: Tensor, index_mask: np.ndarray) -> Tensor:
    """Scatter each pooled gradient to its recorded argmax corner.

    ``index_mask`` holds row-major corner codes (0=TL, 1=TR, 2=BL, 3=BR)
    from the forward pooling; all other positions receive zero.
    """
    if len(grad.dims) != 3:
        raise DimensionError(f"unpool input must be (c, h, w), got {grad.dims}")
    if index_mask.shape != grad.raw.shape:
        raise MaskError(
            f"index mask dims {index_mask.shape} do not match gradient {grad.raw.shape}")
    if index_mask.dtype != np.uint8 or (index_mask > 3).any():
        raise MaskError("index mask must hold uint8 corner codes in [0, 3]")
    c, h, w = grad.dims
    corners = np.zeros((c, h, w, 4), dtype=np.int16)
    np.put_along_axis(corners, index_mask[..., None].astype(np.intp),
                      grad.raw[..., None], axis=-1)
    out = corners.reshape(c, h, w, 2, 2).transpose(0, 1, 3, 2, 4)
    return Tensor(out.reshape(c, 2 * h, 2 * w))
