"""16-bit fixed-point arithmetic with a 32-bit saturating accumulator.

Values live in a signed Q-format: a 16-bit integer ``raw`` represents
``raw / 2**frac_bits``.  Multiply-accumulate chains run at twice the
fractional precision in 32 bits and saturate (never wrap) after every
step.  A result is requantized back to 16 bits exactly once, with
round-to-nearest-even on the dropped fraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INT16_MIN = -(1 << 15)
INT16_MAX = (1 << 15) - 1
INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1


class FormatError(ValueError):
    """Malformed or unsupported Q-format description."""


@dataclass(frozen=True)
class FxpFormat:
    """Signed qI.F layout with I + F = 16 (sign bit counted in I)."""

    frac_bits: int
    total_bits: int = 16

    def __post_init__(self) -> None:
        if self.total_bits != 16:
            raise FormatError(f"only 16-bit formats are supported, got {self.total_bits}")
        if not 0 <= self.frac_bits <= 15:
            raise FormatError(f"frac_bits must be in [0, 15], got {self.frac_bits}")

    @property
    def int_bits(self) -> int:
        return self.total_bits - self.frac_bits

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    @property
    def eps(self) -> float:
        """Smallest representable step."""
        return 1.0 / self.scale

    @property
    def min_value(self) -> float:
        return INT16_MIN / self.scale

    @property
    def max_value(self) -> float:
        return INT16_MAX / self.scale

    @classmethod
    def parse(cls, text: str) -> "FxpFormat":
        """Parse a format spelled like ``q8.8`` (case-insensitive)."""
        s = text.strip().lower()
        if not s.startswith("q") or "." not in s:
            raise FormatError(f"bad format spec {text!r}, expected e.g. 'q8.8'")
        try:
            int_part, frac_part = s[1:].split(".", 1)
            int_bits, frac_bits = int(int_part), int(frac_part)
        except ValueError as exc:
            raise FormatError(f"bad format spec {text!r}") from exc
        if int_bits + frac_bits != 16:
            raise FormatError(f"q{int_bits}.{frac_bits}: integer and fraction bits must sum to 16")
        return cls(frac_bits=frac_bits)

    def __str__(self) -> str:
        return f"q{self.int_bits}.{self.frac_bits}"


DEFAULT_FORMAT = FxpFormat(frac_bits=8)


@dataclass
class QuantStats:
    """Running tally of precision-loss events across a computation."""

    saturated: int = 0  # outputs clipped to the 16-bit range
    overflowed: int = 0  # accumulator clips during a MAC chain
    total: int = 0  # values quantized or requantized

    def merge(self, other: "QuantStats") -> None:
        self.saturated += other.saturated
        self.overflowed += other.overflowed
        self.total += other.total


@dataclass(frozen=True)
class Fxp16:
    """One 16-bit fixed-point value.  The format is carried by context."""

    raw: int

    def __post_init__(self) -> None:
        if not INT16_MIN <= self.raw <= INT16_MAX:
            raise ValueError(f"raw {self.raw} outside int16 range")

    def value(self, fmt: FxpFormat = DEFAULT_FORMAT) -> float:
        return self.raw / fmt.scale


@dataclass(frozen=True)
class Acc32:
    """32-bit accumulator state at 2*frac_bits fractional precision."""

    raw: int = 0
    overflow: bool = False

    def __post_init__(self) -> None:
        if not INT32_MIN <= self.raw <= INT32_MAX:
            raise ValueError(f"raw {self.raw} outside int32 range")


def _clamp(v: int, lo: int, hi: int) -> tuple[int, bool]:
    if v > hi:
        return hi, True
    if v < lo:
        return lo, True
    return v, False


def quantize(x: float, fmt: FxpFormat = DEFAULT_FORMAT, stats: QuantStats | None = None) -> Fxp16:
    """Round a real value to the nearest representable Fxp16, ties to even.

    Out-of-range values saturate to the format limits and are counted in
    ``stats.saturated`` when a tally is supplied.
    """
    scaled = int(np.round(x * fmt.scale))  # np.round is round-half-even
    raw, hit = _clamp(scaled, INT16_MIN, INT16_MAX)
    if stats is not None:
        stats.total += 1
        stats.saturated += int(hit)
    return Fxp16(raw)


def dequantize(v: Fxp16, fmt: FxpFormat = DEFAULT_FORMAT) -> float:
    return v.raw / fmt.scale


def mac(acc: Acc32, a: Fxp16, b: Fxp16) -> Acc32:
    """One multiply-accumulate step: acc + a*b at doubled fractional bits.

    The 16x16 product is exact in 32 bits; only the addition can clip.
    Saturation is sticky in the ``overflow`` flag.
    """
    total = acc.raw + a.raw * b.raw
    raw, hit = _clamp(total, INT32_MIN, INT32_MAX)
    return Acc32(raw, acc.overflow or hit)


def requantize(acc: Acc32 | int, fmt: FxpFormat = DEFAULT_FORMAT, stats: QuantStats | None = None) -> Fxp16:
    """Drop the extra fractional bits of an accumulator and saturate to 16 bits.

    Rounding is to nearest, ties to even, matching ``quantize``.
    """
    raw_in = acc.raw if isinstance(acc, Acc32) else int(acc)
    shifted = _rshift_round_even_int(raw_in, fmt.frac_bits)
    raw, hit = _clamp(shifted, INT16_MIN, INT16_MAX)
    if stats is not None:
        stats.total += 1
        stats.saturated += int(hit)
    return Fxp16(raw)


def _rshift_round_even_int(v: int, shift: int) -> int:
    if shift == 0:
        return v
    half = 1 << (shift - 1)
    q = v >> shift  # arithmetic shift: floor division
    r = v & ((1 << shift) - 1)  # remainder is non-negative in two's complement
    if r > half or (r == half and (q & 1)):
        q += 1
    return q


def saturating_sum(init: int, terms: np.ndarray) -> tuple[int, bool]:
    """Fold int64 terms into a 32-bit saturating accumulator, in order.

    Reproduces a chain of ``mac`` steps: each addition clips to the int32
    range before the next term lands.  Returns (total, any_clip).
    """
    total = int(init)
    total, hit = _clamp(total, INT32_MIN, INT32_MAX)
    for t in terms:
        total += int(t)
        if total > INT32_MAX:
            total = INT32_MAX
            hit = True
        elif total < INT32_MIN:
            total = INT32_MIN
            hit = True
    return total, hit


# ---------------------------------------------------------------------------
# Array variants.  These are the kernels' workhorses; semantics match the
# scalar functions element for element.

def quantize_array(x: np.ndarray, fmt: FxpFormat = DEFAULT_FORMAT, stats: QuantStats | None = None) -> np.ndarray:
    """Vectorized ``quantize``: float array to int16 raw array."""
    scaled = np.round(np.asarray(x, dtype=np.float64) * fmt.scale)
    clipped = np.clip(scaled, INT16_MIN, INT16_MAX)
    if stats is not None:
        stats.total += scaled.size
        stats.saturated += int(np.count_nonzero(clipped != scaled))
    return clipped.astype(np.int16)


def dequantize_array(raw: np.ndarray, fmt: FxpFormat = DEFAULT_FORMAT) -> np.ndarray:
    return raw.astype(np.float64) / fmt.scale


def rshift_round_even(v: np.ndarray, shift: int) -> np.ndarray:
    """Arithmetic right shift with round-to-nearest-even, on int64 arrays."""
    if shift == 0:
        return v.copy()
    half = np.int64(1) << np.int64(shift - 1)
    q = v >> np.int64(shift)
    r = v & ((np.int64(1) << np.int64(shift)) - 1)
    up = (r > half) | ((r == half) & ((q & 1) == 1))
    return q + up.astype(np.int64)


def requantize_array(acc: np.ndarray, fmt: FxpFormat = DEFAULT_FORMAT, stats: QuantStats | None = None) -> np.ndarray:
    """Vectorized ``requantize``: int64 accumulator array to int16 raw array."""
    shifted = rshift_round_even(np.asarray(acc, dtype=np.int64), fmt.frac_bits)
    clipped = np.clip(shifted, INT16_MIN, INT16_MAX)
    if stats is not None:
        stats.total += shifted.size
        stats.saturated += int(np.count_nonzero(clipped != shifted))
    return clipped.astype(np.int16)


@dataclass
class Tensor:
    """A fixed-point tensor: contiguous int16 raw values plus their shape.

    The Q-format is ambient (one format per run), so only raw storage is
    carried.  Kernels treat instances as immutable.
    """

    raw: np.ndarray

    def __post_init__(self) -> None:
        if self.raw.dtype != np.int16:
            raise TypeError(f"raw storage must be int16, got {self.raw.dtype}")
        if not self.raw.flags["C_CONTIGUOUS"]:
            self.raw = np.ascontiguousarray(self.raw)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.raw.shape

    @property
    def size(self) -> int:
        return self.raw.size

    @classmethod
    def zeros(cls, dims: tuple[int, ...]) -> "Tensor":
        return cls(np.zeros(dims, dtype=np.int16))

    @classmethod
    def from_floats(cls, x: np.ndarray, fmt: FxpFormat = DEFAULT_FORMAT,
                    stats: QuantStats | None = None) -> "Tensor":
        return cls(quantize_array(x, fmt, stats))

    def to_floats(self, fmt: FxpFormat = DEFAULT_FORMAT) -> np.ndarray:
        return dequantize_array(self.raw, fmt)

    def reshape(self, dims: tuple[int, ...]) -> "Tensor":
        return Tensor(self.raw.reshape(dims))
