"""Slow, independent reference implementations written with Python ints."""

from fractions import Fraction

import numpy as np

RAW_MIN, RAW_MAX = -(1 << 31), (1 << 31) - 1


def narrow_int(total):
    """Q32.32 Python int -> raw Q16.16 with floor and saturation."""
    return max(RAW_MIN, min(RAW_MAX, total >> 16))


def conv_oracle(x, w, b, mul, stride=1, pad=0, groups=1):
    n, c, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    cout_g = cout // groups
    out = np.zeros((n, cout, ho, wo), dtype=np.int64)
    for s in range(n):
        for o in range(cout):
            g = o // cout_g
            for i in range(ho):
                for j in range(wo):
                    total = 0 if b is None else int(b[o]) << 16
                    for ci in range(cin_g):
                        for u in range(kh):
                            for v in range(kw):
                                y, xx = i * stride + u - pad, j * stride + v - pad
                                a = 0
                                if 0 <= y < h and 0 <= xx < wd:
                                    a = int(x[s, g * cin_g + ci, y, xx])
                                total += int(mul(int(w[o, ci, u, v]), a))
                    out[s, o, i, j] = narrow_int(total)
    return out


def fc_oracle(x, w, b, mul):
    flat = x.reshape(x.shape[0], -1)
    out = np.zeros((x.shape[0], w.shape[0], 1, 1), dtype=np.int64)
    for s in range(flat.shape[0]):
        for o in range(w.shape[0]):
            total = 0 if b is None else int(b[o]) << 16
            for k in range(flat.shape[1]):
                total += int(mul(int(w[o, k]), int(flat[s, k])))
            out[s, o, 0, 0] = narrow_int(total)
    return out


def exact_mul(a, b):
    return a * b


def mitchell_mag(a, b):
    """Mitchell product of positive ints via exact rational logs."""
    ka, kb = a.bit_length() - 1, b.bit_length() - 1
    log = ka + kb + Fraction(a - (1 << ka), 1 << ka) + Fraction(b - (1 << kb), 1 << kb)
    i = log.numerator // log.denominator
    frac = log - i
    val = (1 + frac) * Fraction(2) ** i
    assert val.denominator == 1
    return int(val)


def truncate_mag(m, width):
    drop = max(m.bit_length() - width, 0)
    return (m >> drop) << drop


def drum_mag(m, k):
    t = m.bit_length() - 1
    if t < k:
        return m
    j = t - k + 1
    return ((m >> j) | 1) << j
