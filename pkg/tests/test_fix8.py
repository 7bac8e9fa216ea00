"""Fix8 scalar arithmetic against an arbitrary-precision oracle."""

import math
from fractions import Fraction

import pytest

from kscope import fix8


def oracle_encode(x: Fraction) -> int:
    """Round-to-nearest (ties away from zero) in exact rational arithmetic."""
    scaled = x * 32
    floor = scaled.numerator // scaled.denominator
    frac = scaled - floor
    if frac > Fraction(1, 2):
        q = floor + 1
    elif frac < Fraction(1, 2):
        q = floor
    else:
        q = floor + 1 if scaled >= 0 else floor
    q = max(-128, min(127, q))
    return q & 0xFF


def test_encode_examples():
    assert fix8.encode(1.0) == 0x20
    assert fix8.encode(5.0) == 0x7F
    assert fix8.encode(-4.5) == 0x80
    assert fix8.decode(0x7F) == 3.96875
    assert fix8.decode(0x80) == -4.0


def test_encode_rejects_non_finite():
    with pytest.raises(ValueError):
        fix8.encode(float("nan"))
    with pytest.raises(ValueError):
        fix8.encode(math.inf)


def test_roundtrip_all_patterns():
    for b in range(256):
        assert fix8.encode(fix8.decode(b)) == b


def test_encode_monotone():
    xs = [i / 128 for i in range(-600, 601)]
    encoded = [fix8.to_signed(fix8.encode(x)) for x in xs]
    assert encoded == sorted(encoded)


def test_encode_tie_rule_matches_rational_oracle():
    # Every half-step value is an exact tie.
    for n in range(-300, 300):
        x = Fraction(n, 64)  # steps of half an LSB
        assert fix8.encode(float(x)) == oracle_encode(x), x


def test_mul_exhaustive_against_integer_oracle():
    for a in range(256):
        sa = fix8.to_signed(a)
        for b in range(256):
            got = fix8.mul(a, b)
            assert got == sa * fix8.to_signed(b)
            # exactness in real terms: product of (sa/32)(sb/32) == got/1024
            assert Fraction(sa, 32) * Fraction(fix8.to_signed(b), 32) == Fraction(got, 1024)


def test_mul_examples():
    assert fix8.mul(0x20, 0x20) == 0x400
    assert fix8.mul(0x4D, 0x00) == 0
    assert fix8.mul(0x80, 0x80) == 16 * 1024


def test_acc_add_identity_and_examples():
    one = fix8.wide_from_real(1.0)
    two = fix8.wide_from_real(2.0)
    assert fix8.acc_add(one, two) == fix8.wide_from_real(3.0)
    assert fix8.acc_add(12345, 0) == 12345


def test_acc_add_long_sum_exact():
    sixteen = fix8.mul(0x80, 0x80)  # exactly 16.0
    total = 0
    for _ in range(1024):
        total = fix8.acc_add(total, sixteen)
    assert total == 1024 * sixteen  # no wrap under the headroom invariant
    assert fix8.wide_value(total) == 16384.0


def test_acc_add_overflow_check():
    with pytest.raises(fix8.AccOverflow):
        fix8.acc_add(fix8.WIDE_MAX, 1, check=True)
    # without the check the sum wraps in two's complement
    assert fix8.acc_add(fix8.WIDE_MAX, 1) == fix8.WIDE_MIN


def test_acc_add_associative_commutative():
    vals = [fix8.mul(a, b) for a, b in [(0x13, 0xF1), (0x80, 0x7F), (0x40, 0x40), (0xFF, 0x01)]]
    lft = 0
    for v in vals:
        lft = fix8.acc_add(lft, v)
    rgt = 0
    for v in reversed(vals):
        rgt = fix8.acc_add(v, rgt)
    assert lft == rgt


def test_requantize_examples_and_ties():
    assert fix8.requantize(fix8.wide_from_real(1.0)) == 0x20
    assert fix8.requantize(fix8.wide_from_real(100.0)) == 0x7F
    # 0.046875 = 1.5 steps: tie away from zero gives 2 steps = 0.0625
    assert fix8.requantize(48) == 0x02
    assert fix8.requantize(-48) == fix8.encode(-0.0625)


def test_requantize_matches_rational_oracle():
    for acc in range(-5000, 5000, 7):
        assert fix8.requantize(acc) == oracle_encode(Fraction(acc, 1024)), acc


def test_mul_by_one_lossless():
    one = fix8.encode(1.0)
    for a in range(256):
        assert fix8.requantize(fix8.mul(a, one)) == a


def test_act_identity_table():
    t = fix8.build_act_table("identity")
    assert all(t(b) == b for b in range(256))


def test_act_relu_table_split():
    t = fix8.build_act_table("relu")
    kept = sum(1 for b in range(256) if t(b) == b)
    assert kept == 128
    assert all(t(b) == 0x00 for b in range(0x80, 0x100))
    assert t(fix8.encode(-1.0)) == fix8.encode(0.0)
    assert t(fix8.encode(2.5)) == fix8.encode(2.5)


def test_act_sigmoid_table():
    t = fix8.build_act_table("sigmoid")
    assert t(fix8.encode(0.0)) == fix8.encode(0.5)
    # monotone non-decreasing over decode order
    order = sorted(range(256), key=fix8.to_signed)
    vals = [fix8.to_signed(t(b)) for b in order]
    assert vals == sorted(vals)
    # every entry equals encode(sigmoid(decode(b)))
    for b in range(256):
        x = fix8.decode(b)
        sig = 1.0 / (1.0 + math.exp(-x))
        assert t(b) == fix8.encode(sig)


def test_act_unknown_kind():
    with pytest.raises(ValueError):
        fix8.build_act_table("gelu")


def test_act_table_serialization():
    t = fix8.build_act_table("sigmoid")
    raw = t.to_bytes()
    assert len(raw) == 256
    back = fix8.ActTable.from_bytes(raw)
    assert all(back(b) == t(b) for b in range(256))


def test_act_table_length_checked():
    with pytest.raises(ValueError):
        fix8.ActTable(kind="bad", entries=b"\x00" * 255)
