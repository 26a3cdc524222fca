"""Q16.16 fixed-point samples and exact wide accumulation.

A sample (``QNum``) is a signed 32-bit raw integer ``r`` standing for
``r / 2**16``.  Products of two samples are Q32.32 integers that fit in
int64.  Sums of products are kept as an :class:`Acc`, a pair of int64 arrays
``(hi, lo)`` whose value is ``(hi * 2**32 + lo) / 2**32`` with ``0 <= lo <
2**32``; ``hi`` gives 31 guard bits above Q32.32, so the accumulator is a
96-bit integer in disguise.

Raw samples are carried in int64 arrays throughout; only the value range is
restricted to int32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AccOverflowError, MostNegativeError

FRAC_BITS = 16
ONE = 1 << FRAC_BITS
RAW_MIN = -(1 << 31)
RAW_MAX = (1 << 31) - 1

ACC_FRAC_BITS = 2 * FRAC_BITS
_LO_MASK = (1 << 32) - 1
# |hi| of one product is below 2**30; this many can be summed into int64
# lo/hi lanes without wrapping.
MAX_FAN_IN = 1 << 31
_HI_LIMIT = 1 << 62


def quantize(x):
    """Real value(s) to raw Q16.16, truncating toward -inf and saturating."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantize non-finite values")
    scaled = np.floor(x * ONE)
    raw = np.clip(scaled, RAW_MIN, RAW_MAX).astype(np.int64)
    return raw if raw.ndim else int(raw)


def to_real(raw):
    """Raw Q16.16 to float64; exact for every representable sample."""
    out = np.asarray(raw, dtype=np.float64) / ONE
    return out if out.ndim else float(out)


def split_sign(raw):
    """Split raw samples into (sign, magnitude), sign in {+1, -1}.

    Zero maps to sign +1.  Raises :class:`MostNegativeError` for -2**31.
    """
    r = np.asarray(raw, dtype=np.int64)
    if np.any(r == RAW_MIN):
        raise MostNegativeError("raw -2**31 has no magnitude; saturate first")
    sign = np.where(r < 0, -1, 1)
    mag = np.abs(r)
    if r.ndim == 0:
        return int(sign), int(mag)
    return sign, mag


@dataclass(frozen=True)
class Acc:
    """Exact accumulator value(s): ``(hi * 2**32 + lo)`` in units of 2**-32."""

    hi: np.ndarray
    lo: np.ndarray

    @classmethod
    def zeros(cls, shape=()):
        return cls(np.zeros(shape, np.int64), np.zeros(shape, np.int64))

    @classmethod
    def from_raw(cls, raw):
        """Build from Q32.32 raw value(s) (Python ints or int64 arrays)."""
        if isinstance(raw, int):
            if abs(raw >> 32) >= _HI_LIMIT:
                raise AccOverflowError("value outside accumulator range")
            return cls(np.int64(raw >> 32), np.int64(raw & _LO_MASK))
        raw = np.asarray(raw, dtype=np.int64)
        return cls(raw >> 32, raw & _LO_MASK)

    @classmethod
    def from_qnum(cls, raw):
        """Widen raw Q16.16 sample(s) without loss."""
        raw = np.asarray(raw, dtype=np.int64)
        return cls(raw >> FRAC_BITS, (raw & (ONE - 1)) << FRAC_BITS)

    @property
    def raw(self):
        """Exact Q32.32 value as a Python int (scalar) or object array."""
        if np.ndim(self.hi) == 0:
            return (int(self.hi) << 32) + int(self.lo)
        hi = self.hi.astype(object)
        return hi * (1 << 32) + self.lo.astype(object)

    def to_real(self):
        out = self.hi.astype(np.float64) + self.lo.astype(np.float64) / 2**32
        return out if np.ndim(out) else float(out)

    def _normalized(self):
        hi = self.hi + (self.lo >> 32)
        if np.any(np.abs(hi) >= _HI_LIMIT):
            raise AccOverflowError("accumulator guard bits exhausted")
        return Acc(hi, self.lo & _LO_MASK)


def acc_add(a: Acc, b: Acc) -> Acc:
    """Exact sum of two accumulators; raises AccOverflowError past 94 bits."""
    return Acc(a.hi + b.hi, a.lo + b.lo)._normalized()


def acc_sum(products, axis=-1) -> Acc:
    """Exactly sum Q32.32 int64 products along ``axis``.

    Integer addition makes the result independent of summation order.
    """
    products = np.asarray(products, dtype=np.int64)
    n = products.shape[axis] if products.ndim else 1
    if n >= MAX_FAN_IN:
        raise AccOverflowError(f"fan-in {n} exceeds accumulator lanes")
    hi = np.sum(products >> 32, axis=axis)
    lo = np.sum(products & _LO_MASK, axis=axis)
    return Acc(hi, lo)._normalized()


def narrow(acc: Acc):
    """Accumulator to raw Q16.16: floor the low bits, saturate the range.

    Returns ``(raw, n_saturated)``.
    """
    hi = np.asarray(acc.hi, dtype=np.int64)
    lo = np.asarray(acc.lo, dtype=np.int64)
    over = hi >= (1 << 15)
    under = hi < -(1 << 15)
    safe_hi = np.where(over | under, 0, hi)
    raw = (safe_hi << FRAC_BITS) + (lo >> FRAC_BITS)
    raw = np.where(over, RAW_MAX, np.where(under, RAW_MIN, raw))
    n_sat = int(np.count_nonzero(over | under))
    return (raw if raw.ndim else int(raw)), n_sat


def saturate(raw):
    """Clamp int64 raw values into Q16.16; returns ``(raw, n_saturated)``."""
    raw = np.asarray(raw, dtype=np.int64)
    clipped = np.clip(raw, RAW_MIN, RAW_MAX)
    return clipped, int(np.count_nonzero(clipped != raw))
