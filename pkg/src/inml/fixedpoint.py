"""Bit-exact Q-format codec and saturating integer arithmetic.

Quantized values are plain Python ints holding the two's-complement word
of a signed 32-bit register (a "raw" value).  A real number ``w`` maps to
raw storage as

    raw = round(w * 2**scale_bits) + offset      # round half away from zero
    w  ~= (raw - offset) / 2**scale_bits

The offset is a storage-encoding affordance only: every arithmetic helper
(q_add, q_sub, q_mul, q_shift_round) requires offset 0.  Results saturate
to the signed 32-bit range instead of wrapping, and each operation reports
whether it saturated so callers can keep a sticky overflow flag.

All functions are pure; there is no shared state.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import isfinite
from typing import NamedTuple

I32_MIN = -(1 << 31)
I32_MAX = (1 << 31) - 1
I64_MIN = -(1 << 63)
I64_MAX = (1 << 63) - 1

MAX_SCALE_BITS = 30


@dataclass(frozen=True)
class FixedPointFormat:
    """Scale/offset parameters governing a quantization domain.

    scale_bits: number of fractional bits (the shift count).
    offset:     constant added after scaling, stored in the raw word.
    width:      storage width; fixed at 32 to match the wire format.
    """

    scale_bits: int
    offset: int = 0
    width: int = 32

    def __post_init__(self):
        if not 0 <= self.scale_bits <= MAX_SCALE_BITS:
            raise ValueError(
                f"scale_bits must be in [0, {MAX_SCALE_BITS}], got {self.scale_bits}"
            )
        if not I32_MIN <= self.offset <= I32_MAX:
            raise ValueError(f"offset {self.offset} outside signed 32-bit range")
        if self.width != 32:
            raise ValueError(f"width is fixed at 32, got {self.width}")

    @property
    def one(self) -> int:
        """Raw magnitude of 1.0 in this format (offset excluded)."""
        return 1 << self.scale_bits

    def require_no_offset(self):
        if self.offset != 0:
            raise ValueError("arithmetic requires a format with offset 0")


class QResult(NamedTuple):
    """Raw 32-bit result plus a did-it-saturate flag."""

    raw: int
    saturated: bool


def saturate32(v: int) -> QResult:
    """Clamp to the signed 32-bit range; never wraps."""
    if v > I32_MAX:
        return QResult(I32_MAX, True)
    if v < I32_MIN:
        return QResult(I32_MIN, True)
    return QResult(v, False)


def saturate64(v: int) -> QResult:
    """Clamp to the signed 64-bit range (widened accumulators)."""
    if v > I64_MAX:
        return QResult(I64_MAX, True)
    if v < I64_MIN:
        return QResult(I64_MIN, True)
    return QResult(v, False)


def _round_half_away(num: int, den: int) -> int:
    # Exact round-half-away-from-zero of the rational num/den, den > 0.
    if num >= 0:
        return (2 * num + den) // (2 * den)
    return -((-2 * num + den) // (2 * den))


def encode(w: float, fmt: FixedPointFormat) -> QResult:
    """Quantize a finite real into the format's raw integer domain.

    Rounds half away from zero, adds the offset, saturates to 32 bits.
    The scaling is done in exact rational arithmetic (floats are dyadic),
    so results never depend on float rounding of the product.
    """
    if not isfinite(w):
        raise ValueError(f"cannot encode non-finite value {w!r}")
    scaled = Fraction(w) * fmt.one
    raw = _round_half_away(scaled.numerator, scaled.denominator) + fmt.offset
    return saturate32(raw)


def decode(raw: int, fmt: FixedPointFormat) -> float:
    """Map a raw integer back to its real value (raw - offset) / 2**s.

    Exact: any 32-bit numerator over a power-of-two denominator is
    representable in a float.
    """
    return (raw - fmt.offset) / fmt.one


def q_add(a: int, b: int) -> QResult:
    """Saturating signed addition of two raw values (offset-0 formats)."""
    return saturate32(a + b)


def q_sub(a: int, b: int) -> QResult:
    """Saturating signed subtraction a - b (offset-0 formats)."""
    return saturate32(a - b)


def q_neg(a: int) -> QResult:
    """Saturating negation (only -2**31 saturates)."""
    return saturate32(-a)


def q_shift_round(v: int, s: int) -> QResult:
    """Rescale a widened value down by 2**s with round half away from zero.

    Computed on the magnitude so negatives mirror positives exactly; a
    biased arithmetic shift alone would round negative exact multiples
    down an extra step.  Saturates to 32 bits.
    """
    if not 0 <= s <= MAX_SCALE_BITS:
        raise ValueError(f"shift count must be in [0, {MAX_SCALE_BITS}], got {s}")
    if s == 0:
        return saturate32(v)
    half = 1 << (s - 1)
    if v >= 0:
        return saturate32((v + half) >> s)
    return saturate32(-((-v + half) >> s))


def q_mul(a: int, b: int, fmt: FixedPointFormat) -> QResult:
    """Fixed-point product: full widened multiply, then rounding rescale.

    The raw product of two 32-bit values always fits in 63 bits, so the
    intermediate never overflows; only the rescaled result can saturate.
    """
    fmt.require_no_offset()
    return q_shift_round(a * b, fmt.scale_bits)
