"""Independent reference implementations used by the tests.

None of these call into the package's rounding or search code.
"""
from __future__ import annotations

import bisect
import math
import struct
from fractions import Fraction
from functools import lru_cache

import numpy as np

# --- binary16 by enumeration --------------------------------------------------


def half_bits_to_fraction(bits: int) -> Fraction | None:
    """Exact value of a finite binary16 pattern, None for inf/nan."""
    sign = -1 if bits >> 15 else 1
    exp = (bits >> 10) & 0x1F
    man = bits & 0x3FF
    if exp == 0x1F:
        return None
    if exp == 0:
        return sign * Fraction(man, 2**24)
    if exp < 25:
        return sign * Fraction(man | 0x400, 2 ** (25 - exp))
    return sign * Fraction((man | 0x400) * 2 ** (exp - 25))


@lru_cache(maxsize=1)
def positive_halves() -> tuple[list, list]:
    """Sorted exact values of all finite non-negative binary16 numbers and their bits."""
    vals, bits = [], []
    for b in range(0x7C00):
        vals.append(half_bits_to_fraction(b))
        bits.append(b)
    return vals, bits


MAX_HALF = Fraction(65504)
# values at or beyond max + half an ulp (2**4) round to infinity
OVERFLOW = Fraction(65520)


def round_fraction_to_half(q: Fraction) -> int:
    """Bits of the nearest binary16 to ``q``, ties to the even pattern."""
    sign = 0x8000 if q < 0 else 0
    a = abs(q)
    if a >= OVERFLOW:
        return sign | 0x7C00
    vals, bits = positive_halves()
    k = bisect.bisect_left(vals, a)
    if k < len(vals) and vals[k] == a:
        return sign | bits[k]
    lo, hi = vals[k - 1], vals[k] if k < len(vals) else None
    if hi is None:
        return sign | bits[k - 1]
    dl, dh = a - lo, hi - a
    if dl < dh or (dl == dh and bits[k - 1] % 2 == 0):
        return sign | bits[k - 1]
    return sign | bits[k]


def round_sqrt_to_half(a: Fraction) -> int:
    """Bits of the binary16 nearest to ``sqrt(a)`` for ``a >= 0``, exactly."""
    vals, bits = positive_halves()
    # largest v with v*v <= a, then compare against the midpoint squared
    lo, hi = 0, len(vals) - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if vals[mid] * vals[mid] <= a:
            lo = mid
        else:
            hi = mid - 1
    if vals[lo] * vals[lo] == a or lo == len(vals) - 1:
        return bits[lo]
    m = (vals[lo] + vals[lo + 1]) / 2
    if m * m > a or (m * m == a and bits[lo] % 2 == 0):
        return bits[lo]
    return bits[lo + 1]


def f64_to_fraction(x: float) -> Fraction:
    return Fraction(x)


def float32_round(x: float) -> float:
    """Round a double to binary32 through the struct module."""
    return struct.unpack("<f", struct.pack("<f", x))[0]


# --- neighbor sets ------------------------------------------------------------


def neighbor_sets(x: np.ndarray, cutoff: float, spans=None) -> list[set]:
    """O(n^2) float64 reference, optional minimum image on axes with span > 0."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = []
    for i in range(len(x)):
        d = x - x[i]
        if spans is not None:
            for k, s in enumerate(spans):
                if s:
                    d[:, k] -= s * np.round(d[:, k] / s)
        r = np.sqrt(np.einsum("ij,ij->i", d, d))
        hit = np.flatnonzero(r < cutoff)
        out.append(set(hit[hit != i].tolist()))
    return out


# --- kernel -------------------------------------------------------------------


def cubic_spline_ref(R: float, d: int, h: float) -> float:
    alpha = {1: 1.0 / h, 2: 15.0 / (7.0 * math.pi * h * h), 3: 3.0 / (2.0 * math.pi * h**3)}[d]
    if R < 1:
        return alpha * (2.0 / 3.0 - R * R + R**3 / 2.0)
    if R < 2:
        return alpha * (2.0 - R) ** 3 / 6.0
    return 0.0
