"""External file formats: images in, heatmaps and relevance out.

Images arrive either as raw little-endian float32 in channel-major
order or as binary PPM (P6, maxval 255) scaled to [0, 1].  Heatmaps
leave as binary PGM (P5); raw relevance leaves as little-endian
float32 in channel-major order.
"""

from __future__ import annotations

import numpy as np

from .fxp import FxpFormat, QuantStats, Tensor, quantize_array
from .model import DimensionError


def _parse_ppm(data: bytes) -> np.ndarray:
    """Binary PPM to a float (3, h, w) array in [0, 1]."""
    pos = 2  # past the "P6" magic
    fields: list[int] = []
    while len(fields) < 3:
        if pos >= len(data):
            raise DimensionError("PPM header truncated")
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        elif ch.isdigit():
            start = pos
            while pos < len(data) and data[pos:pos + 1].isdigit():
                pos += 1
            fields.append(int(data[start:pos]))
        else:
            raise DimensionError(f"PPM header has unexpected byte {ch!r}")
    w, h, maxval = fields
    if maxval != 255:
        raise DimensionError(f"PPM maxval must be 255, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    pixels = data[pos:pos + 3 * w * h]
    if len(pixels) != 3 * w * h:
        raise DimensionError(f"PPM pixel data truncated: {len(pixels)} of {3 * w * h} bytes")
    hwc = np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3)
    return hwc.transpose(2, 0, 1).astype(np.float64) / 255.0


def load_image_bytes(data: bytes, dims: tuple[int, int, int], fmt: FxpFormat,
                     stats: QuantStats | None = None) -> Tensor:
    """Decode an image file body and quantize it to the run format.

    PPM is detected by its magic; anything else must be exactly
    4 * c * h * w bytes of little-endian float32, channel-major.
    """
    c, h, w = dims
    if data[:2] == b"P6":
        floats = _parse_ppm(data)
        if floats.shape != (c, h, w):
            raise DimensionError(
                f"PPM image is {floats.shape}, network wants {(c, h, w)}")
    else:
        want = 4 * c * h * w
        if len(data) != want:
            raise DimensionError(
                f"raw image holds {len(data)} bytes, network wants {want} "
                f"(float32 x {(c, h, w)})")
        floats = np.frombuffer(data, dtype="<f4").astype(np.float64).reshape(c, h, w)
    return Tensor.from_floats(floats, fmt, stats)


def write_pgm(path: str, gray: np.ndarray) -> None:
    """Binary PGM (P5, maxval 255) from a uint8 (h, w) array."""
    if gray.dtype != np.uint8 or gray.ndim != 2:
        raise ValueError(f"PGM output needs a uint8 (h, w) array, got {gray.dtype} {gray.shape}")
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(gray.tobytes())


def write_relevance(path: str, values: np.ndarray) -> None:
    """Little-endian float32 dump in channel-major order."""
    with open(path, "wb") as f:
        f.write(np.ascontiguousarray(values, dtype="<f4").tobytes())
