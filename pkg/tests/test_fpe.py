"""FPE simulator: architectural semantics, cycle model, oracle fidelity."""

import numpy as np
import pytest

from kscope import fpe, isa, reference
from kscope.compiler import compile_model
from kscope.fix8 import encode
from kscope.isa import Target, assemble
from kscope.linalg import Fix8Vector
from kscope.models import Dense, ModelSpec, random_weights


def identity_block() -> bytes:
    """(32, 8) block selecting the first 8 input elements."""
    w = np.zeros((32, 8), dtype=np.uint8)
    for i in range(8):
        w[i, i] = encode(1.0)
    return w.tobytes()


def test_load_program_rejects_hpe_image():
    img = assemble("FIN\n", Target.HPE)
    with pytest.raises(ValueError, match="targets HPE"):
        fpe.load_program(img)


def test_load_program_rejects_oversize_params():
    img = isa.ProgramImage(
        target=Target.FPE,
        bundles=(isa.VliwBundle(compute=isa.ComputeOp(opcode=isa.COp.FIN)),),
        param_image=b"\x00" * (isa.FPE_PCACHE_BYTES + 1),
    )
    with pytest.raises(ValueError, match="pCache"):
        fpe.load_program(img)


def test_mv_identity_block_picks_first_elements():
    prog = assemble(
        "START | NOP | LDR w0, n2\nMV r0, p0\nFIN\n",
        Target.FPE,
        param_image=identity_block(),
    )
    st = fpe.load_program(prog)
    x = bytes(range(1, 33))  # bit patterns 1..32
    st.reset(x)
    fpe.step(st)
    fpe.step(st)
    assert st.acc.tolist() == [i * 32 for i in range(1, 9)]  # value/32 * 1.0 in Q·10


def test_mva_two_blocks_matches_gemv_pre_activation(rng):
    m = rng.integers(0, 256, (64, 8), dtype=np.uint8)
    x = rng.integers(0, 256, 64, dtype=np.uint8)
    param = m[:32].tobytes() + m[32:].tobytes()
    prog = assemble(
        "START | NOP | LDR w0, n2\nMVA r0, p0\nMVA r1, p256\nFIN\n",
        Target.FPE,
        param_image=param,
    )
    st = fpe.load_program(prog)
    st.reset(x.tobytes())
    while not st.halted:
        fpe.step(st)
    want = (
        x.view(np.int8).astype(np.int64) @ m.view(np.int8).astype(np.int64).reshape(64, 8)
    )
    assert st.acc.tolist() == want.tolist()


def test_fin_adds_pipeline_drain():
    prog = assemble("FIN\n", Target.FPE)
    st = fpe.load_program(prog)
    st.reset(b"")
    fpe.step(st)
    assert st.halted and st.cycle == 1 + st.cfg.pipeline_depth


def test_mvaa_writeback_is_delayed_by_pipeline_depth():
    # MVAA result must not be visible to a read issued too early.
    text = (
        "START | NOP | LDR w0, n2\n"
        "MVAA r0, p0, t0 -> o8\n"        # writes regfile word 2
        + "NOP\n" * 6
        + "NOP | NOP | STR w2, n1\n"     # matured: sees the activated bytes
        + "FIN\n"
    )
    prog = assemble(text, Target.FPE, param_image=identity_block())
    st = fpe.load_program(prog)
    out, _ = fpe.run_inference(st, bytes(range(1, 33)))
    assert out.elems[:8].tolist() == list(range(1, 9))

    early = (
        "START | NOP | LDR w0, n2\n"
        "MVAA r0, p0, t0 -> o8\n"
        "NOP | NOP | STR w2, n1\n"       # one cycle later: still the old zeros
        "FIN\n"
    )
    prog2 = assemble(early, Target.FPE, param_image=identity_block())
    st2 = fpe.load_program(prog2)
    out2, _ = fpe.run_inference(st2, bytes(range(1, 33)))
    assert out2.elems[:8].tolist() == [0] * 8


def test_out_of_bounds_block_faults():
    # validate() rejects this statically; build the raw image to reach the
    # runtime guard that protects hand-loaded states.
    img = isa.ProgramImage(
        target=Target.FPE,
        bundles=(
            isa.VliwBundle(compute=isa.ComputeOp(opcode=isa.COp.MV, src=0, pblock=8000)),
            isa.VliwBundle(compute=isa.ComputeOp(opcode=isa.COp.FIN)),
        ),
    )
    assert any("pCache" in d for d in isa.validate(img))
    st = fpe.FpeState(cfg=fpe.DEFAULT_FPE_CONFIG, program=img, pcache=np.zeros(8192, np.uint8))
    st.reset(b"")
    with pytest.raises(fpe.PeFault, match="out of range"):
        while not st.halted:
            fpe.step(st)
    assert st.halted and st.fault


def test_stream_exhaustion_faults():
    prog = assemble("START | NOP | LDR w0, n8\nFIN\n", Target.FPE)
    st = fpe.load_program(prog)
    with pytest.raises(fpe.PeFault, match="stream"):
        fpe.run_inference(st, b"\x00" * 32)


def test_compiled_dense_matches_oracle(rng):
    spec = ModelSpec(target=Target.FPE, input_len=32, layers=(Dense(32, 8, "relu"),))
    w = random_weights(spec, seed=5)
    prog = compile_model(spec, w)
    st = fpe.load_program(prog.image)
    for _ in range(10):
        x = rng.integers(0, 256, 32, dtype=np.uint8).tobytes()
        out, cycles = fpe.run_inference(st, x, expected_len=32)
        ref = reference.forward(spec, w, x)
        assert np.array_equal(out.elems[: prog.class_count], ref.elems)
        assert cycles == len(prog.image.bundles) + st.cfg.pipeline_depth


def test_compiled_mlp_matches_oracle_and_cycles(mlp_e, mlp_e_prog, rng):
    spec, w = mlp_e
    st = fpe.load_program(mlp_e_prog.image)
    for _ in range(10):
        x = rng.integers(0, 256, 64, dtype=np.uint8).tobytes()
        out, cycles = fpe.run_inference(st, x, expected_len=64)
        ref = reference.forward(spec, w, x)
        assert np.array_equal(out.elems[: mlp_e_prog.class_count], ref.elems)
        assert cycles == mlp_e_prog.predicted_cycles


def test_zero_input_zero_bias_relu_gives_zero_logits():
    spec = ModelSpec(
        target=Target.FPE, input_len=32, layers=(Dense(32, 16, "relu"), Dense(16, 8, "relu"))
    )
    w = random_weights(spec, seed=6)
    zeroed = type(w)(
        model_hash=w.model_hash,
        layers=tuple(
            type(lw)(matrix=lw.matrix, bias=np.zeros_like(lw.bias)) for lw in w.layers
        ),
    )
    prog = compile_model(spec, zeroed)
    st = fpe.load_program(prog.image)
    out, _ = fpe.run_inference(st, bytes(32))
    assert np.all(out.elems[: prog.class_count] == 0)


def test_cycle_determinism(mlp_e_prog, rng):
    st = fpe.load_program(mlp_e_prog.image)
    x = rng.integers(0, 256, 64, dtype=np.uint8).tobytes()
    runs = {fpe.run_inference(st, x)[1] for _ in range(3)}
    assert len(runs) == 1


def test_input_length_mismatch():
    spec = ModelSpec(target=Target.FPE, input_len=32, layers=(Dense(32, 8, "relu"),))
    prog = compile_model(spec, random_weights(spec, seed=7))
    st = fpe.load_program(prog.image)
    with pytest.raises(ValueError, match="expects 32"):
        fpe.run_inference(st, b"\x00" * 64, expected_len=32)


def test_argmax_semantics():
    assert fpe.argmax(Fix8Vector.from_reals([0.5, 0.5, 0.25])) == 0
    assert fpe.argmax(Fix8Vector.from_reals([-1.0, 3.0, 2.0])) == 1
    with pytest.raises(ValueError):
        fpe.argmax(Fix8Vector.from_bits([]))


def test_argmax_matches_scalar_scan(rng):
    for _ in range(20):
        v = Fix8Vector.from_bits(rng.integers(0, 256, 6, dtype=np.uint8))
        vals = [int(b) - 256 if b >= 128 else int(b) for b in v.elems]
        best = max(range(6), key=lambda i: (vals[i], -i))
        assert fpe.argmax(v) == best


def test_slot_independence_same_cycle_cost():
    # a bundle with busy param+data slots costs exactly one cycle, like NOPs
    busy = assemble(
        "START | LDP k0, n1 | LDR w0, n1\nNOP | LDP k0, n1 | LDR w1, n1\nFIN\n",
        Target.FPE,
        param_image=b"\x00" * 256,
    )
    idle = assemble("START\nNOP\nFIN\n", Target.FPE)
    sb = fpe.load_program(busy)
    si = fpe.load_program(idle)
    _, cb = fpe.run_inference(sb, b"\x00" * 32)
    _, ci = fpe.run_inference(si, b"")
    assert cb == ci == 3 + sb.cfg.pipeline_depth
