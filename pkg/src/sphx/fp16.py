"""Software IEEE 754 binary16 and precision-parameterized rounding.

Three layers share one rounding rule (round to nearest, ties to even):

* :class:`Binary16`, a bit-exact scalar built from integer arithmetic only.
  It is slow and serves as the reference.
* :func:`round_to`, a vectorized numpy path for whole arrays.
* :func:`round_jit`, a numba-compiled scalar used inside the neighbor-search
  and integration kernels.

Arithmetic at reduced precision follows one model everywhere: widen the
operands to float64, compute, round once. For ``+ - *`` on binary16 or
binary32 operands the float64 result is exact, and for ``sqrt`` the float64
result carries more than ``2p + 2`` bits, so the single final rounding is a
correct rounding.
"""
from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from numba import njit, types
from numba.extending import intrinsic

__all__ = [
    "Binary16",
    "Precision",
    "from_f64",
    "to_f64",
    "add16",
    "sub16",
    "mul16",
    "fma16",
    "sqrt16",
    "round_to",
    "round_jit",
    "MAX_FINITE",
]

MAX_FINITE = 65504.0
MIN_NORMAL = 2.0**-14
MIN_SUBNORMAL = 2.0**-24

_CANONICAL_NAN = 0x7E00
_INF = 0x7C00


class Precision(enum.IntEnum):
    """Floating-point format used for a computation.

    The integer value is what the compiled kernels dispatch on.
    """

    FP64 = 0
    FP32 = 1
    FP16 = 2

    @classmethod
    def parse(cls, value) -> "Precision":
        if isinstance(value, Precision):
            return value
        if isinstance(value, str):
            try:
                return cls[value.strip().upper()]
            except KeyError:
                raise ValueError(f"unknown precision {value!r}") from None
        return cls(value)

    @property
    def dtype(self):
        return {0: np.float64, 1: np.float32, 2: np.float16}[int(self)]

    @property
    def unit_roundoff(self) -> float:
        return {0: 2.0**-53, 1: 2.0**-24, 2: 2.0**-11}[int(self)]

    @property
    def tiny(self) -> float:
        """Smallest positive subnormal."""
        return {0: 5e-324, 1: 2.0**-149, 2: MIN_SUBNORMAL}[int(self)]

    def __str__(self) -> str:
        return self.name.lower()


def _f64_bits(x: float) -> int:
    return struct.unpack("<Q", struct.pack("<d", x))[0]


def _encode(sign: int, q: int, k: int) -> int:
    """Encode ``(-1)**sign * q * 2**k`` where q fits in 11 bits after rounding."""
    if q == 0:
        return sign << 15
    if q >= 1 << 11:
        # carry out of the significand; q is even here
        q >>= 1
        k += 1
    if q < 1 << 10:
        # only reachable with k == -24
        return (sign << 15) | q
    biased = k + 25
    if biased >= 31:
        return (sign << 15) | _INF
    return (sign << 15) | (biased << 10) | (q - (1 << 10))


def _round_scaled(M: int, E: int, sign: int) -> int:
    """Round the exact value ``M * 2**E`` (M > 0) to binary16 bits."""
    e = M.bit_length() - 1 + E
    k = max(e, -14) - 10
    shift = k - E
    if shift <= 0:
        q = M << -shift
    else:
        q = M >> shift
        rem = M & ((1 << shift) - 1)
        half = 1 << (shift - 1)
        if rem > half or (rem == half and q & 1):
            q += 1
    if q >= 1 << 12:
        # exponent already far past the binary16 range
        return (sign << 15) | _INF
    return _encode(sign, q, k)


def _bits_from_f64(x: float) -> int:
    bits = _f64_bits(x)
    sign = bits >> 63
    exp = (bits >> 52) & 0x7FF
    man = bits & ((1 << 52) - 1)
    if exp == 0x7FF:
        return _CANONICAL_NAN if man else (sign << 15) | _INF
    if exp == 0 and man == 0:
        return sign << 15
    if exp == 0:
        M, E = man, -1074
    else:
        M, E = man | (1 << 52), exp - 1075
    return _round_scaled(M, E, sign)


def _bits_from_fraction(x: Fraction) -> int:
    if x == 0:
        return 0
    sign = 1 if x < 0 else 0
    x = abs(x)
    num, den = x.numerator, x.denominator
    # pick k so that num/den * 2**-k has 11 integer bits, then round
    e = num.bit_length() - den.bit_length()
    if Fraction(num, den) < Fraction(2) ** e:
        e -= 1
    k = max(e, -14) - 10
    scaled = x / Fraction(2) ** k
    q = scaled.numerator // scaled.denominator
    rem = scaled - q
    if rem > Fraction(1, 2) or (rem == Fraction(1, 2) and q & 1):
        q += 1
    if q >= 1 << 12:
        return (sign << 15) | _INF
    return _encode(sign, q, k)


@dataclass(frozen=True)
class Binary16:
    """An IEEE 754-2008 binary16 value held as its 16-bit pattern."""

    bits: int

    def __post_init__(self):
        if not 0 <= self.bits <= 0xFFFF:
            raise ValueError(f"bit pattern out of range: {self.bits:#x}")

    @classmethod
    def from_f64(cls, x: float) -> "Binary16":
        return cls(_bits_from_f64(float(x)))

    @classmethod
    def from_fraction(cls, x: Fraction) -> "Binary16":
        """Correctly rounded conversion of an exact rational."""
        return cls(_bits_from_fraction(Fraction(x)))

    def to_f64(self) -> float:
        b = self.bits
        sign = -1.0 if b >> 15 else 1.0
        exp = (b >> 10) & 0x1F
        man = b & 0x3FF
        if exp == 0x1F:
            return math.nan if man else sign * math.inf
        if exp == 0:
            return sign * math.ldexp(man, -24)
        return sign * math.ldexp(man | 0x400, exp - 25)

    @property
    def sign(self) -> int:
        return self.bits >> 15

    @property
    def exponent(self) -> int:
        return (self.bits >> 10) & 0x1F

    @property
    def mantissa(self) -> int:
        return self.bits & 0x3FF

    def is_nan(self) -> bool:
        return self.exponent == 0x1F and self.mantissa != 0

    def is_inf(self) -> bool:
        return self.exponent == 0x1F and self.mantissa == 0

    def is_finite(self) -> bool:
        return self.exponent != 0x1F

    def __float__(self) -> float:
        return self.to_f64()

    def __add__(self, other):
        return add16(self, _coerce(other))

    def __sub__(self, other):
        return sub16(self, _coerce(other))

    def __mul__(self, other):
        return mul16(self, _coerce(other))

    def __neg__(self):
        if self.is_nan():
            return self
        return Binary16(self.bits ^ 0x8000)

    def __lt__(self, other):
        return self.to_f64() < _coerce(other).to_f64()

    def __le__(self, other):
        return self.to_f64() <= _coerce(other).to_f64()

    def __repr__(self) -> str:
        return f"Binary16({self.bits:#06x} = {self.to_f64()!r})"


def _coerce(x) -> Binary16:
    return x if isinstance(x, Binary16) else Binary16.from_f64(float(x))


def from_f64(x: float) -> Binary16:
    return Binary16.from_f64(x)


def to_f64(b: Binary16) -> float:
    return b.to_f64()


def add16(a: Binary16, b: Binary16) -> Binary16:
    return Binary16.from_f64(a.to_f64() + b.to_f64())


def sub16(a: Binary16, b: Binary16) -> Binary16:
    return Binary16.from_f64(a.to_f64() - b.to_f64())


def mul16(a: Binary16, b: Binary16) -> Binary16:
    return Binary16.from_f64(a.to_f64() * b.to_f64())


def fma16(a: Binary16, b: Binary16, c: Binary16) -> Binary16:
    """``a * b + c`` with a single rounding.

    The float64 sum of a binary16 product and addend is not always exact, so
    finite operands go through exact rationals.
    """
    fa, fb, fc = a.to_f64(), b.to_f64(), c.to_f64()
    if not all(math.isfinite(v) for v in (fa, fb, fc)):
        return Binary16.from_f64(fa * fb + fc)
    return Binary16.from_fraction(Fraction(fa) * Fraction(fb) + Fraction(fc))


def sqrt16(a: Binary16) -> Binary16:
    x = a.to_f64()
    if x < 0:
        return Binary16(_CANONICAL_NAN)
    return Binary16.from_f64(math.sqrt(x))


def round_to(x, prec: Precision):
    """Round float64 values into ``prec`` and hand them back as float64."""
    prec = Precision.parse(prec)
    arr = np.asarray(x, dtype=np.float64)
    if prec is Precision.FP64:
        return arr.copy() if isinstance(x, np.ndarray) else arr
    with np.errstate(over="ignore", invalid="ignore"):
        return arr.astype(prec.dtype).astype(np.float64)


# --- compiled scalar rounding -------------------------------------------------


@intrinsic
def _bitcast_f64_u64(typingctx, x):
    sig = types.uint64(types.float64)

    def codegen(context, builder, signature, args):
        return builder.bitcast(args[0], context.get_value_type(types.uint64))

    return sig, codegen


@intrinsic
def _bitcast_u64_f64(typingctx, x):
    sig = types.float64(types.uint64)

    def codegen(context, builder, signature, args):
        return builder.bitcast(args[0], context.get_value_type(types.float64))

    return sig, codegen


_LOW42 = np.uint64((1 << 42) - 1)
_HALF42 = np.uint64((1 << 41) - 1)
_ONE = np.uint64(1)
_SH42 = np.uint64(42)


@njit(cache=True, inline="always")
def round_half_jit(x):
    a = abs(x)
    if a >= MIN_NORMAL and a < MAX_FINITE:
        b = _bitcast_f64_u64(x)
        b = (b + _HALF42 + ((b >> _SH42) & _ONE)) & ~_LOW42
        return _bitcast_u64_f64(b)
    if a < MIN_NORMAL:
        # subnormal range: fixed quantum 2**-24; the scaling is exact
        return np.rint(x * 16777216.0) / 16777216.0
    if x != x:
        return x
    if a < 65520.0:
        return math.copysign(MAX_FINITE, x)
    return math.copysign(math.inf, x)


@njit(cache=True, inline="always")
def round_single_jit(x):
    return np.float64(np.float32(x))


@njit(cache=True, inline="always")
def round_jit(x, code):
    """Round ``x`` into the precision with integer code ``code``."""
    if code == 0:
        return x
    if code == 1:
        return round_single_jit(x)
    return round_half_jit(x)
