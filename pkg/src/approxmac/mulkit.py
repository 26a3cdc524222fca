"""Bit-exact models of exact and approximate multipliers.

Every fixed-point multiplier takes raw Q16.16 operands (ints or int64
arrays, broadcast together) and returns raw Q32.32 products as int64.  The
log-domain designs all work on integer magnitudes: for ``M > 0`` with its
leading one at bit ``k`` and ``f = M - 2**k``,

    log2(M) ~= k + f / 2**k

so the Mitchell antilog of a sum of two such logs is an integer expression
in ``k`` and ``f`` and no internal rounding is needed.

The bfloat16 multiplier lives in the binary32 pipeline and takes/returns
float32 arrays.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .errors import InvalidSpecError, MostNegativeError
from .qformat import RAW_MIN

KINDS = ("exact", "mitchell", "mitchw", "drum", "iterlog", "bf16", "inject")
SIGN_MODES = ("exact", "c1")

# operand width kept by the first pass of the iterative multiplier
ITERLOG_OPERAND_BITS = 16


@dataclass(frozen=True)
class MultiplierSpec:
    """Which multiplier to use and its parameters.

    ``w`` is the Mitch-w operand width (leading one plus ``w - 1`` mantissa
    bits) and also the residue width of the iterative multiplier; ``k`` is
    the DRUM kept-bit count.  ``e`` is only used by the test-only constant
    error injector.
    """

    kind: str = "exact"
    w: int = 6
    k: int = 6
    sign: str = "exact"
    e: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidSpecError(f"unknown multiplier kind {self.kind!r}")
        if self.sign not in SIGN_MODES:
            raise InvalidSpecError(f"unknown sign mode {self.sign!r}")
        if self.kind in ("mitchw", "iterlog") and self.w < 2:
            raise InvalidSpecError(f"parameter w must be >= 2, got w={self.w}")
        if self.kind == "drum" and self.k < 3:
            raise InvalidSpecError(f"parameter k must be >= 3, got k={self.k}")
        if self.kind == "inject" and not self.e > -1:
            raise InvalidSpecError(f"parameter e must be > -1, got e={self.e}")

    @property
    def is_float(self) -> bool:
        return self.kind == "bf16"

    def __str__(self):
        if self.kind == "mitchw":
            return f"mitchw:w={self.w}:sign={self.sign}"
        if self.kind == "drum":
            return f"drum:k={self.k}" + (":sign=c1" if self.sign == "c1" else "")
        if self.kind == "iterlog":
            return f"iterlog:w={self.w}" + (":sign=c1" if self.sign == "c1" else "")
        if self.kind == "mitchell" and self.sign == "c1":
            return "mitchell:sign=c1"
        if self.kind == "inject":
            return f"inject:e={self.e!r}"
        return self.kind


_ALIASES = {"bfloat16": "bf16", "iterlogtrunc": "iterlog"}
_KEYS = {
    "mitchell": {"sign"},
    "mitchw": {"w", "sign"},
    "drum": {"k", "sign"},
    "iterlog": {"w", "sign"},
    "inject": {"e"},
    "exact": set(),
    "bf16": set(),
}
_SIGN_ALIASES = {"c1": "c1", "ones": "c1", "onescomplement": "c1",
                 "exact": "exact", "exactsign": "exact"}


def parse_spec(text) -> MultiplierSpec:
    """Parse the canonical text form, e.g. ``"mitchw:w=6:sign=c1"``."""
    if isinstance(text, MultiplierSpec):
        return text
    parts = [p.strip() for p in str(text).strip().lower().split(":")]
    kind = _ALIASES.get(parts[0], parts[0])
    if kind not in _KEYS:
        raise InvalidSpecError(f"unknown multiplier kind {parts[0]!r}")
    # Mitch-w is studied with C1 sign handling; everything else is exact-sign
    fields = {"sign": "c1" if kind == "mitchw" else "exact"}
    for part in parts[1:]:
        m = re.fullmatch(r"([a-z]+)=([-+0-9.e]+|[a-z0-9]+)", part)
        if not m or m.group(1) not in _KEYS[kind]:
            raise InvalidSpecError(f"bad parameter {part!r} for {kind}")
        key, val = m.groups()
        try:
            if key == "sign":
                fields["sign"] = _SIGN_ALIASES[val]
            elif key == "e":
                fields["e"] = float(val)
            else:
                fields[key] = int(val)
        except (KeyError, ValueError):
            raise InvalidSpecError(f"bad value for parameter {key}: {val!r}") from None
    if kind in ("exact", "bf16", "inject"):
        fields.pop("sign")
    return MultiplierSpec(kind=kind, **fields)


# -- integer helpers --------------------------------------------------------

def leading_one(mag):
    """Bit position of the leading one of each positive magnitude."""
    # exact: magnitudes are below 2**53
    _, e = np.frexp(np.asarray(mag, dtype=np.float64))
    return e.astype(np.int64) - 1


def _truncate(mag, width):
    """Keep the leading one and the next ``width - 1`` bits."""
    drop = np.maximum(leading_one(mag) - (width - 1), 0)
    return (mag >> drop) << drop


def _log_parts(mag):
    """(characteristic, mantissa bits) of positive magnitudes."""
    k = leading_one(mag)
    return k, mag - (np.int64(1) << k)


def _mitchell_combine(ka, fa, kb, fb):
    cross = (fa << kb) + (fb << ka)
    base = np.int64(1) << (ka + kb)
    # mantissa sum below 1: 2**(ka+kb) * (1 + ma + mb); else 2**(ka+kb+1) * (ma + mb)
    return np.where(cross < base, base + cross, cross << 1)


def _drum_reduce(mag, k):
    t = leading_one(mag)
    j = np.maximum(t - k + 1, 0)
    return np.where(t < k, mag, ((mag >> j) | 1) << j)


# Each design is split into a per-operand stage (run on un-broadcast operands)
# and a combine stage (run at product size).

def _mitchell_stage(w=None):
    def prep(mag):
        return _log_parts(mag if w is None else _truncate(mag, w))
    return prep, lambda pa, pb: _mitchell_combine(*pa, *pb)


def _drum_stage(k):
    return (lambda mag: (_drum_reduce(mag, k),),
            lambda pa, pb: pa[0] * pb[0])


def _iterlog_stage(w):
    def prep(mag):
        k, r = _log_parts(_truncate(mag, ITERLOG_OPERAND_BITS))
        has = r > 0
        kr, fr = _log_parts(_truncate(np.where(has, r, 1), w))
        return k, r, kr, fr, has

    def combine(pa, pb):
        ka, ra, kra, fra, ha = pa
        kb, rb, krb, frb, hb = pb
        # ma*mb == 2**(ka+kb) + ra*2**kb + rb*2**ka + ra*rb; only ra*rb is approximated
        first = (np.int64(1) << (ka + kb)) + (ra << kb) + (rb << ka)
        corr = _mitchell_combine(kra, fra, krb, frb)
        return first + np.where(ha & hb, corr, 0)

    return prep, combine


def _signed(stage, sign_mode):
    """Wrap a staged magnitude multiplier with exact or one's-complement signs."""
    prep, combine = stage

    def operand(x):
        x = np.asarray(x, np.int64)
        neg = x < 0
        if sign_mode == "c1":
            mag = np.where(neg, ~x, x)
        else:
            if np.any(x == RAW_MIN):
                raise MostNegativeError("raw -2**31 operand; saturate first")
            mag = np.abs(x)
        live = mag != 0
        return x, neg, live, prep(np.where(live, mag, 1))

    def mul(a, b):
        a, neg_a, live_a, pa = operand(a)
        b, neg_b, live_b, pb = operand(b)
        mag = combine(pa, pb)
        if sign_mode == "c1":
            mag = mag * (live_a & live_b)
            out = np.where(neg_a ^ neg_b, ~mag, mag)
            # a true zero operand always yields zero
            out = out * ((a != 0) & (b != 0))
        else:
            sa = np.where(neg_a, -1, 1) * live_a
            sb = np.where(neg_b, -1, 1) * live_b
            out = mag * (sa * sb)
        return out if out.ndim else int(out)

    return mul


def mul_exact(a, b):
    """Conventional fixed-point product; the reference for error measurement."""
    out = np.asarray(a, np.int64) * np.asarray(b, np.int64)
    return out if out.ndim else int(out)


def mul_mitchell(a, b, sign="exact"):
    return _signed(_mitchell_stage(), sign)(a, b)


def mul_mitchw(a, b, spec: MultiplierSpec | None = None):
    spec = spec or MultiplierSpec("mitchw", sign="c1")
    return _signed(_mitchell_stage(spec.w), spec.sign)(a, b)


def mul_drum(a, b, spec: MultiplierSpec | None = None):
    spec = spec or MultiplierSpec("drum")
    return _signed(_drum_stage(spec.k), spec.sign)(a, b)


def mul_iterlog(a, b, spec: MultiplierSpec | None = None):
    spec = spec or MultiplierSpec("iterlog")
    return _signed(_iterlog_stage(spec.w), spec.sign)(a, b)


def to_bf16(x):
    """Truncate binary32 values to bfloat16 (low 16 significand bits dropped)."""
    bits = np.asarray(x, dtype=np.float32).view(np.uint32) & np.uint32(0xFFFF0000)
    return bits.view(np.float32)


def mul_bf16(a, b):
    """bfloat16 operands, binary32 product.

    Two 8-bit significands give at most a 16-bit significand, so the float32
    multiply is exact for normal results.
    """
    out = to_bf16(a) * to_bf16(b)
    return out


def _inject(e):
    # (1 + e) as a dyadic fraction num / 2**16 so proportionality is exact
    num = int(Fraction(1 + e).limit_denominator(1 << 16) * (1 << 16))

    def mul(a, b):
        p = np.asarray(a, np.int64) * np.asarray(b, np.int64)
        out = (p >> 16) * num + (((p & 0xFFFF) * num) >> 16)
        return out if out.ndim else int(out)

    mul.scale = Fraction(num, 1 << 16)
    return mul


def make_multiplier(spec) -> Callable:
    """Callable ``mul(a, b)`` implementing ``spec`` (text or MultiplierSpec)."""
    spec = parse_spec(spec)
    if spec.kind == "exact":
        return mul_exact
    if spec.kind == "mitchell":
        return _signed(_mitchell_stage(), spec.sign)
    if spec.kind == "mitchw":
        return _signed(_mitchell_stage(spec.w), spec.sign)
    if spec.kind == "drum":
        return _signed(_drum_stage(spec.k), spec.sign)
    if spec.kind == "iterlog":
        return _signed(_iterlog_stage(spec.w), spec.sign)
    if spec.kind == "bf16":
        return mul_bf16
    return _inject(spec.e)
