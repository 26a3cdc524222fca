import numpy as np
import pytest

from approxmac import qformat
from approxmac.errors import AccOverflowError, MostNegativeError
from approxmac.qformat import (ONE, RAW_MAX, RAW_MIN, Acc, acc_add, acc_sum, narrow, quantize,
                               saturate, split_sign, to_real)


def test_quantize_floors_toward_minus_infinity():
    assert quantize(1.5) == 3 * ONE // 2
    assert quantize(-1e-9) == -1
    assert quantize(1.0 / 3) == 21845
    assert quantize(-1.0 / 3) == -21846


def test_quantize_saturates_and_rejects_nonfinite():
    assert quantize(1e9) == RAW_MAX
    assert quantize(-1e9) == RAW_MIN
    with pytest.raises(ValueError):
        quantize(float("nan"))
    with pytest.raises(ValueError):
        quantize(np.array([1.0, np.inf]))


def test_to_real_round_trips_every_representable_value():
    raw = np.array([RAW_MIN, -1, 0, 1, RAW_MAX, 123456789])
    assert np.array_equal(quantize(to_real(raw)), raw)


def test_split_sign():
    assert split_sign(-5) == (-1, 5)
    assert split_sign(0) == (1, 0)
    with pytest.raises(MostNegativeError):
        split_sign(RAW_MIN)


def test_acc_sum_matches_python_ints_in_any_order():
    rng = np.random.default_rng(3)
    p = rng.integers(-(1 << 62), 1 << 62, 5000)
    want = sum(int(v) for v in p)
    assert acc_sum(p).raw == want
    assert acc_sum(rng.permutation(p)).raw == want


def test_acc_sum_along_axis():
    p = np.arange(12, dtype=np.int64).reshape(3, 4) << 40
    acc = acc_sum(p, axis=1)
    assert list(acc.raw) == [sum(int(v) for v in row) for row in p]


def test_acc_from_qnum_and_from_raw():
    assert Acc.from_qnum(-3).raw == -3 << 16
    assert Acc.from_raw(-(5 << 40) + 7).raw == -(5 << 40) + 7
    assert Acc.from_qnum(ONE).to_real() == 1.0
    with pytest.raises(AccOverflowError):
        Acc.from_raw(1 << 100)


def test_acc_add_overflow_guard():
    big = Acc(np.int64((1 << 62) - 1), np.int64(0))
    with pytest.raises(AccOverflowError):
        acc_add(big, Acc(np.int64(1), np.int64(0)))


def test_narrow_floors_and_counts_saturation():
    raw, n = narrow(Acc.from_raw(-1))
    assert (raw, n) == (-1, 0)
    raw, n = narrow(Acc.from_raw((7 << 16) + 0xFFFF))
    assert (raw, n) == (7, 0)
    vals = np.array([1 << 60, -(1 << 60), 5 << 32])
    raw, n = narrow(acc_sum(vals[:, None], axis=1))
    assert list(raw) == [RAW_MAX, RAW_MIN, 5 << 16] and n == 2


def test_narrow_boundaries():
    assert narrow(Acc.from_raw(RAW_MAX << 16))[0] == RAW_MAX
    assert narrow(Acc.from_raw(RAW_MIN << 16)) == (RAW_MIN, 0)
    assert narrow(Acc.from_raw((RAW_MAX + 1) << 16)) == (RAW_MAX, 1)


def test_saturate():
    out, n = saturate(np.array([RAW_MAX + 5, 0, RAW_MIN - 1]))
    assert list(out) == [RAW_MAX, 0, RAW_MIN] and n == 2


def test_fan_in_limit():
    assert qformat.MAX_FAN_IN == 1 << 31
