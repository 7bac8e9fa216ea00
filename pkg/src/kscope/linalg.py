"""Reference blocked GEMV/GEMM over Fix8 and the tiling planner.

This is the bit-exact oracle for both process-element simulators: no cycle
model, accumulation carried exactly in WideAcc integers, requantization
applied exactly once per output element right before activation.  Blocked
variants must match the unblocked reference bit for bit; zero padding is
neutral because padded products are exactly zero and accumulator addition is
associative.

Matrices are dense row-major uint8 arrays of Fix8 bit patterns.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .fix8 import ActTable, IDENTITY_TABLE

KMAT_MAGIC = b"KMAT"


def requantize_array(acc: np.ndarray) -> np.ndarray:
    """Vectorized WideAcc -> Fix8 bits (round to nearest, ties away from zero)."""
    acc = acc.astype(np.int64)
    mag = (np.abs(acc) + 16) >> 5
    q = np.where(acc >= 0, mag, -mag)
    return np.clip(q, -128, 127).astype(np.int8).view(np.uint8)


def apply_table(table: ActTable, bits: np.ndarray) -> np.ndarray:
    lut = np.frombuffer(table.entries, dtype=np.uint8)
    return lut[bits]


@dataclass(frozen=True)
class Fix8Vector:
    """Sequence of Fix8 bit patterns with a logical length before padding."""

    elems: np.ndarray  # uint8
    logical_len: int

    @classmethod
    def from_bits(cls, bits) -> "Fix8Vector":
        arr = np.asarray(bits, dtype=np.uint8)
        return cls(elems=arr, logical_len=len(arr))

    @classmethod
    def from_reals(cls, xs) -> "Fix8Vector":
        from .fix8 import encode

        return cls.from_bits([encode(float(x)) for x in xs])

    def padded(self, width: int) -> "Fix8Vector":
        """Zero-pad to a multiple of `width` elements."""
        n = len(self.elems)
        total = -(-n // width) * width
        out = np.zeros(total, dtype=np.uint8)
        out[:n] = self.elems
        return Fix8Vector(elems=out, logical_len=self.logical_len)

    def __len__(self) -> int:
        return len(self.elems)


@dataclass(frozen=True)
class Fix8Matrix:
    """Row-major Fix8 matrix."""

    rows: int
    cols: int
    elems: np.ndarray  # uint8, shape (rows, cols)

    @classmethod
    def from_bits(cls, array) -> "Fix8Matrix":
        arr = np.asarray(array, dtype=np.uint8)
        if arr.ndim != 2:
            raise ValueError("expected a 2-D array of bit patterns")
        return cls(rows=arr.shape[0], cols=arr.shape[1], elems=arr)

    @classmethod
    def identity(cls, n: int) -> "Fix8Matrix":
        from .fix8 import encode

        arr = np.zeros((n, n), dtype=np.uint8)
        arr[np.arange(n), np.arange(n)] = encode(1.0)
        return cls(rows=n, cols=n, elems=arr)

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Fix8Matrix":
        return cls(rows=rows, cols=cols, elems=np.zeros((rows, cols), dtype=np.uint8))


@dataclass(frozen=True)
class BlockPlan:
    """Tiling of an (N, Q) product into (a, b) blocks with zero padding."""

    a: int
    b: int
    x: int
    y: int
    pad_rows: int
    pad_cols: int

    n: int = field(default=0)
    q: int = field(default=0)


def plan_blocks(n: int, q: int, a: int, b: int) -> BlockPlan:
    """Block grid for a length-n input against an (n, q) matrix on (a, b) tiles."""
    if min(n, q, a, b) < 1:
        raise ValueError(f"dimensions must be >= 1, got n={n} q={q} a={a} b={b}")
    x = -(-n // a)
    y = -(-q // b)
    return BlockPlan(a=a, b=b, x=x, y=y, pad_rows=a * x - n, pad_cols=b * y - q, n=n, q=q)


def _signed(arr: np.ndarray) -> np.ndarray:
    return arr.view(np.int8).astype(np.int64)


def gemv_ref(v: Fix8Vector, m: Fix8Matrix, act: ActTable = IDENTITY_TABLE) -> Fix8Vector:
    """out[j] = act(requantize(sum_i v[i] * M[i, j])), exact WideAcc sums."""
    if v.logical_len != m.rows:
        raise ValueError(f"dimension mismatch: vector {v.logical_len} vs matrix rows {m.rows}")
    acc = _signed(v.elems[: m.rows]) @ _signed(m.elems)
    bits = apply_table(act, requantize_array(acc))
    return Fix8Vector(elems=bits, logical_len=m.cols)


def gemv_blocked(
    v: Fix8Vector, m: Fix8Matrix, plan: BlockPlan, act: ActTable = IDENTITY_TABLE
) -> Fix8Vector:
    """Tile-by-tile GEMV following the plan; bit-identical to gemv_ref."""
    if plan.n != v.logical_len or plan.q != m.cols:
        raise ValueError(
            f"plan ({plan.n}, {plan.q}) does not match data ({v.logical_len}, {m.cols})"
        )
    a, b = plan.a, plan.b
    vp = np.zeros(plan.x * a, dtype=np.uint8)
    vp[: v.logical_len] = v.elems[: v.logical_len]
    mp = np.zeros((plan.x * a, plan.y * b), dtype=np.uint8)
    mp[: m.rows, : m.cols] = m.elems
    sv = _signed(vp)
    sm = _signed(mp)

    out = np.zeros(plan.q, dtype=np.uint8)
    for j in range(plan.y):
        acc = np.zeros(b, dtype=np.int64)
        for i in range(plan.x):
            acc += sv[i * a : (i + 1) * a] @ sm[i * a : (i + 1) * a, j * b : (j + 1) * b]
        bits = apply_table(act, requantize_array(acc))
        lo = j * b
        hi = min(lo + b, plan.q)
        out[lo:hi] = bits[: hi - lo]
    return Fix8Vector(elems=out, logical_len=plan.q)


def gemm_ref(a: Fix8Matrix, b: Fix8Matrix, act: ActTable = IDENTITY_TABLE) -> Fix8Matrix:
    """Row p of the result equals gemv_ref(row p of A, B)."""
    if a.cols != b.rows:
        raise ValueError(f"dimension mismatch: A cols {a.cols} vs B rows {b.rows}")
    acc = _signed(a.elems) @ _signed(b.elems)
    bits = apply_table(act, requantize_array(acc))
    return Fix8Matrix(rows=a.rows, cols=b.cols, elems=bits)


def gemm_blocked(
    a: Fix8Matrix, b: Fix8Matrix, plan: BlockPlan, act: ActTable = IDENTITY_TABLE
) -> Fix8Matrix:
    """Blocked GEMM over (plan.a, plan.b) tiles of B; bit-identical to gemm_ref."""
    if plan.n != a.cols or plan.q != b.cols:
        raise ValueError(f"plan ({plan.n}, {plan.q}) does not match data ({a.cols}, {b.cols})")
    ta, tb = plan.a, plan.b
    ap = np.zeros((a.rows, plan.x * ta), dtype=np.uint8)
    ap[:, : a.cols] = a.elems
    bp = np.zeros((plan.x * ta, plan.y * tb), dtype=np.uint8)
    bp[: b.rows, : b.cols] = b.elems
    sa = _signed(ap)
    sb = _signed(bp)

    out = np.zeros((a.rows, plan.q), dtype=np.uint8)
    for j in range(plan.y):
        acc = np.zeros((a.rows, tb), dtype=np.int64)
        for i in range(plan.x):
            acc += sa[:, i * ta : (i + 1) * ta] @ sb[i * ta : (i + 1) * ta, j * tb : (j + 1) * tb]
        bits = apply_table(act, requantize_array(acc))
        lo = j * tb
        hi = min(lo + tb, plan.q)
        out[:, lo:hi] = bits[:, : hi - lo]
    return Fix8Matrix(rows=a.rows, cols=plan.q, elems=out)


def save_kmat(m: Fix8Matrix) -> bytes:
    """8-byte header (magic, u16 rows, u16 cols, little-endian) + row-major bytes."""
    if m.rows > 0xFFFF or m.cols > 0xFFFF:
        raise ValueError("matrix too large for KMAT header")
    return KMAT_MAGIC + struct.pack("<HH", m.rows, m.cols) + m.elems.tobytes()


def load_kmat(raw: bytes) -> Fix8Matrix:
    if raw[:4] != KMAT_MAGIC:
        raise ValueError("bad KMAT magic")
    rows, cols = struct.unpack_from("<HH", raw, 4)
    body = raw[8 : 8 + rows * cols]
    if len(body) != rows * cols:
        raise ValueError("truncated KMAT payload")
    return Fix8Matrix(rows=rows, cols=cols, elems=np.frombuffer(body, dtype=np.uint8).reshape(rows, cols).copy())
