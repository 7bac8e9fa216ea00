"""Blocked GEMV/GEMM equivalence against a scalar triple-loop oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kscope import fix8
from kscope.linalg import (
    Fix8Matrix,
    Fix8Vector,
    gemm_blocked,
    gemm_ref,
    gemv_blocked,
    gemv_ref,
    load_kmat,
    plan_blocks,
    save_kmat,
)


def scalar_gemv(v_bits, m_bits, table) -> list[int]:
    """Independent triple-loop oracle in plain ints."""
    rows = len(m_bits)
    cols = len(m_bits[0]) if rows else 0
    out = []
    for j in range(cols):
        acc = 0
        for i in range(rows):
            acc = fix8.acc_add(acc, fix8.mul(v_bits[i], m_bits[i][j]))
        out.append(table(fix8.requantize(acc)))
    return out


def random_vec(rng, n):
    return Fix8Vector.from_bits(rng.integers(0, 256, n, dtype=np.uint8))


def random_mat(rng, r, c):
    return Fix8Matrix.from_bits(rng.integers(0, 256, (r, c), dtype=np.uint8))


def test_plan_examples():
    p = plan_blocks(32, 8, 32, 8)
    assert (p.x, p.y, p.pad_rows, p.pad_cols) == (1, 1, 0, 0)
    p = plan_blocks(40, 10, 32, 8)
    assert (p.x, p.y, p.pad_rows, p.pad_cols) == (2, 2, 24, 6)
    p = plan_blocks(64, 128, 32, 8)
    assert (p.x, p.y) == (2, 16)


def test_plan_rejects_zero():
    with pytest.raises(ValueError):
        plan_blocks(0, 8, 32, 8)


def test_gemv_identity_and_zero(rng):
    v = random_vec(rng, 24)
    out = gemv_ref(v, Fix8Matrix.identity(24))
    assert np.array_equal(out.elems, v.elems)
    out = gemv_ref(v, Fix8Matrix.zeros(24, 10))
    assert np.all(out.elems == 0)


def test_gemv_matches_scalar_oracle(rng):
    v = random_vec(rng, 64)
    m = random_mat(rng, 64, 24)
    table = fix8.RELU_TABLE
    got = gemv_ref(v, m, table)
    want = scalar_gemv(v.elems.tolist(), m.elems.tolist(), table)
    assert got.elems.tolist() == want


def test_gemv_dim_mismatch(rng):
    with pytest.raises(ValueError):
        gemv_ref(random_vec(rng, 5), random_mat(rng, 6, 2))


def test_blocked_exact_fit_and_padded(rng):
    v = random_vec(rng, 40)
    m = random_mat(rng, 40, 10)
    ref = gemv_ref(v, m, fix8.SIGMOID_TABLE)
    for a, b in [(32, 8), (40, 10), (7, 3), (1, 1)]:
        plan = plan_blocks(40, 10, a, b)
        got = gemv_blocked(v, m, plan, fix8.SIGMOID_TABLE)
        assert np.array_equal(got.elems, ref.elems), (a, b)


def test_blocked_random_sweep(rng):
    for _ in range(60):
        n = int(rng.integers(1, 257))
        q = int(rng.integers(1, 257))
        a = int(rng.integers(1, 65))
        b = int(rng.integers(1, 65))
        v = random_vec(rng, n)
        m = random_mat(rng, n, q)
        ref = gemv_ref(v, m, fix8.RELU_TABLE)
        got = gemv_blocked(v, m, plan_blocks(n, q, a, b), fix8.RELU_TABLE)
        assert np.array_equal(got.elems, ref.elems), (n, q, a, b)


def test_blocked_plan_mismatch(rng):
    v = random_vec(rng, 16)
    m = random_mat(rng, 16, 8)
    with pytest.raises(ValueError):
        gemv_blocked(v, m, plan_blocks(17, 8, 4, 4))


def test_gemm_identity(rng):
    a = random_mat(rng, 7, 12)
    out = gemm_ref(a, Fix8Matrix.identity(12))
    assert np.array_equal(out.elems, a.elems)


def test_gemm_single_row_equals_gemv(rng):
    a = random_mat(rng, 1, 40)
    b = random_mat(rng, 40, 10)
    gm = gemm_ref(a, b, fix8.RELU_TABLE)
    gv = gemv_ref(Fix8Vector.from_bits(a.elems[0]), b, fix8.RELU_TABLE)
    assert np.array_equal(gm.elems[0], gv.elems)


def test_gemm_blocked_matches_ref(rng):
    a = random_mat(rng, 7, 40)
    b = random_mat(rng, 40, 10)
    ref = gemm_ref(a, b, fix8.SIGMOID_TABLE)
    got = gemm_blocked(a, b, plan_blocks(40, 10, 32, 32), fix8.SIGMOID_TABLE)
    assert np.array_equal(got.elems, ref.elems)


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(1, 96),
    q=st.integers(1, 96),
    a=st.integers(1, 48),
    b=st.integers(1, 48),
    seed=st.integers(0, 2**31),
)
def test_property_blocked_equivalence(n, q, a, b, seed):
    rng = np.random.default_rng(seed)
    v = random_vec(rng, n)
    m = random_mat(rng, n, q)
    ref = gemv_ref(v, m)
    got = gemv_blocked(v, m, plan_blocks(n, q, a, b))
    assert np.array_equal(got.elems, ref.elems)


def test_zero_padding_neutrality(rng):
    # explicitly padding the data with encoded zeros changes nothing
    v = random_vec(rng, 19)
    m = random_mat(rng, 19, 7)
    ref = gemv_ref(v, m)
    vp = Fix8Vector(elems=np.concatenate([v.elems, np.zeros(13, np.uint8)]), logical_len=32)
    mp = np.zeros((32, 8), dtype=np.uint8)
    mp[:19, :7] = m.elems
    got = gemv_ref(vp, Fix8Matrix.from_bits(mp))
    assert np.array_equal(got.elems[:7], ref.elems)
    assert np.all(got.elems[7:] == 0)


def test_kmat_roundtrip(rng):
    m = random_mat(rng, 13, 21)
    raw = save_kmat(m)
    assert raw[:4] == b"KMAT"
    back = load_kmat(raw)
    assert back.rows == 13 and back.cols == 21
    assert np.array_equal(back.elems, m.elems)
    with pytest.raises(ValueError):
        load_kmat(b"XMAT" + raw[4:])
    with pytest.raises(ValueError):
        load_kmat(raw[:-1])
