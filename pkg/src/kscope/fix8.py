"""Bit-exact Fix-8 (Q2.5) scalar arithmetic and activation lookup tables.

A Fix8 value is one byte: 1 sign bit, 2 integer bits, 5 fractional bits,
two's complement.  The real value of bit pattern b is signed(b) / 32, so the
representable range is [-4.0, 3.96875] in steps of 0.03125.

WideAcc is the 32-bit accumulator companion: two's complement with 10
fractional bits.  A product of two Fix8 values is exact in WideAcc, and at
least 2**16 such products can be summed without overflow.

All functions here operate on plain ints (bit patterns 0..255 for Fix8,
signed ints for WideAcc) so they stay trivially portable; numpy-vectorized
variants used by the linear algebra layer live in `linalg`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

FRAC_BITS = 5
SCALE = 1 << FRAC_BITS            # 32
WIDE_FRAC_BITS = 10
WIDE_SCALE = 1 << WIDE_FRAC_BITS  # 1024

FIX8_MIN_BITS = 0x80              # -4.0
FIX8_MAX_BITS = 0x7F              # +3.96875
FIX8_MIN = -4.0
FIX8_MAX = 127 / 32

WIDE_MIN = -(1 << 31)
WIDE_MAX = (1 << 31) - 1

ACT_KINDS = ("relu", "sigmoid", "identity")


class AccOverflow(ArithmeticError):
    """Raised by acc_add in debug mode when a sum leaves the 32-bit range."""


def to_signed(bits: int) -> int:
    """Bit pattern 0..255 -> signed integer -128..127."""
    return bits - 256 if bits >= 128 else bits


def to_bits(signed: int) -> int:
    """Signed integer -128..127 -> bit pattern 0..255."""
    return signed & 0xFF


def decode(bits: int) -> float:
    """Real value of a Fix8 bit pattern."""
    return to_signed(bits) / SCALE


def _round_half_away(x: float) -> int:
    if x >= 0.0:
        return int(math.floor(x + 0.5))
    return int(math.ceil(x - 0.5))


def encode(x: float) -> int:
    """Nearest Fix8 bit pattern for a finite real.

    Round to nearest with ties away from zero, saturating to the
    representable range.
    """
    if math.isnan(x) or math.isinf(x):
        raise ValueError(f"cannot encode non-finite value {x!r}")
    q = _round_half_away(x * SCALE)
    q = max(-128, min(127, q))
    return to_bits(q)


def mul(a: int, b: int) -> int:
    """Exact product of two Fix8 bit patterns as a WideAcc value.

    Both operands have 5 fractional bits, so the integer product of their
    signed words is exactly the Q21.10 result; no rounding occurs.
    """
    return to_signed(a) * to_signed(b)


def acc_add(a: int, b: int, *, check: bool = False) -> int:
    """Two's-complement 32-bit wrapping sum of two WideAcc values.

    With check=True the true mathematical sum is compared against the
    32-bit range first and AccOverflow is raised on wrap.
    """
    s = a + b
    if check and not (WIDE_MIN <= s <= WIDE_MAX):
        raise AccOverflow(f"accumulator overflow: {a} + {b} = {s}")
    return ((s + (1 << 31)) & 0xFFFFFFFF) - (1 << 31)


def requantize(acc: int) -> int:
    """WideAcc -> Fix8 bit pattern, round to nearest, ties away from zero.

    10 fractional bits collapse to 5, so the reduction divides by 32 and
    saturates to the Fix8 range.
    """
    if acc >= 0:
        q = (acc + 16) >> 5
    else:
        q = -((-acc + 16) >> 5)
    q = max(-128, min(127, q))
    return to_bits(q)


def wide_value(acc: int) -> float:
    """Real value of a WideAcc word."""
    return acc / WIDE_SCALE


def wide_from_real(x: float) -> int:
    """WideAcc word nearest a real value (test helper, ties away from zero)."""
    return _round_half_away(x * WIDE_SCALE)


@dataclass(frozen=True)
class ActTable:
    """256-entry activation lookup table over Fix8 bit patterns.

    `kind` is a human label only; identity is decided by the entries.
    """

    kind: str = field(compare=False)
    entries: bytes = b""  # entries[b] = activated bit pattern for input pattern b

    def __post_init__(self) -> None:
        if len(self.entries) != 256:
            raise ValueError(f"activation table must have 256 entries, got {len(self.entries)}")

    def __call__(self, bits: int) -> int:
        return self.entries[bits]

    def to_bytes(self) -> bytes:
        """Serialize in bit-pattern order 0x00..0xFF."""
        return self.entries

    @classmethod
    def from_bytes(cls, raw: bytes, kind: str = "custom") -> "ActTable":
        return cls(kind=kind, entries=bytes(raw))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


_ACT_FUNCS = {
    "relu": lambda x: x if x > 0.0 else 0.0,
    "sigmoid": _sigmoid,
    "identity": lambda x: x,
}


def build_act_table(kind: str) -> ActTable:
    """Tabulate encode(f(decode(b))) for every bit pattern b."""
    try:
        f = _ACT_FUNCS[kind]
    except KeyError:
        raise ValueError(f"unknown activation kind {kind!r}, expected one of {ACT_KINDS}") from None
    return ActTable(kind=kind, entries=bytes(encode(f(decode(b))) for b in range(256)))


def activate(table: ActTable, bits: int) -> int:
    """Look up the activation of a Fix8 bit pattern."""
    return table(bits)


IDENTITY_TABLE = build_act_table("identity")
RELU_TABLE = build_act_table("relu")
SIGMOID_TABLE = build_act_table("sigmoid")
