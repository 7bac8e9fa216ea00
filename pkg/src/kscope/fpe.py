"""Cycle-approximate simulator for one fast process element.

The FPE is a run-to-completion GEMV engine: k SIMD lanes of t dot units with
n multipliers each consume one (1, n*k) input word and one (n*k, t) weight
block per issue cycle, merging into t inline WideAcc accumulators.  Issue is
one bundle per cycle, fully pipelined, with a fixed drain at FIN, so the
cycle count of a program is exactly bundle_count + pipeline_depth.

The pipeline is exposed: an MVAA's activated result lands in the regfile
pipeline_depth bundles after issue.  Programs (the compiler) must schedule
reads of produced words at least that far behind the producing MVAA; earlier
reads observe the old regfile contents, exactly as the hardware would.

The data slot streams input words in (LDR) and result words out (STR).  The
input stream presented to LDR is the raw packet bytes followed by one
constant word whose first element is 1.0; multiplying that element against a
weight block whose row 0 holds bias values preloads biases into the
accumulators without a dedicated bias instruction.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import isa
from .fix8 import encode
from .isa import COp, DOp, POp, ProgramImage, Target
from .linalg import Fix8Vector, apply_table, requantize_array

WORD = isa.WORD_BYTES


class PeFault(Exception):
    """A program bug detected at runtime; halts the PE, never the simulation."""


@dataclass(frozen=True)
class FpeConfig:
    n: int = 8                  # multipliers per dot unit
    t: int = 8                  # dot units per SIMD lane
    k: int = 4                  # SIMD lanes
    regfile_words: int = 32     # 256-bit words
    pcache_bytes: int = isa.FPE_PCACHE_BYTES
    icache_bytes: int = isa.FPE_ICACHE_BYTES
    pipeline_depth: int = 6     # multiply 1 + adder tree log2(8) + accumulate 1 + activate 1

    @property
    def block_rows(self) -> int:
        """Input elements consumed per MV (one regfile word)."""
        return self.n * self.k

    @property
    def block_cols(self) -> int:
        """Outputs produced per MV (one accumulator bank)."""
        return self.t


DEFAULT_FPE_CONFIG = FpeConfig()

_WRAP = 1 << 32
_HALF = 1 << 31


def _wrap32(acc: np.ndarray) -> np.ndarray:
    return (acc + _HALF) % _WRAP - _HALF


def make_input_stream(input_bytes: bytes) -> bytes:
    """Raw packet bytes padded to words, then the constant-one word."""
    if len(input_bytes) % WORD:
        padded = input_bytes + bytes(WORD - len(input_bytes) % WORD)
    else:
        padded = input_bytes
    const = bytes([encode(1.0)]) + bytes(WORD - 1)
    return padded + const


@dataclass
class FpeState:
    cfg: FpeConfig
    program: ProgramImage
    pcache: np.ndarray
    regfile: np.ndarray = field(init=False)
    acc: np.ndarray = field(init=False)
    pc: int = 0
    cycle: int = 0
    halted: bool = False
    fault: str | None = None

    def __post_init__(self) -> None:
        self.regfile = np.zeros(self.cfg.regfile_words * WORD, dtype=np.uint8)
        self.acc = np.zeros(self.cfg.t, dtype=np.int64)
        self.stream = b""
        self.stream_pos = 0
        self.out_stream = bytearray()
        self.pending: list[tuple[int, int, np.ndarray]] = []  # (ready_idx, byte_addr, bits)
        self.trace = os.environ.get("KSCOPE_TRACE") == "1"

    def reset(self, input_bytes: bytes) -> None:
        self.regfile[:] = 0
        self.acc[:] = 0
        self.pc = 0
        self.cycle = 0
        self.halted = False
        self.fault = None
        self.stream = make_input_stream(input_bytes)
        self.stream_pos = 0
        self.out_stream = bytearray()
        self.pending = []


def load_program(img: ProgramImage, cfg: FpeConfig = DEFAULT_FPE_CONFIG) -> FpeState:
    """Validate the image and produce a ready-to-run state with caches filled."""
    if img.target != Target.FPE:
        raise ValueError(f"program targets {img.target.name}, not FPE")
    diags = isa.validate(img, cfg)
    if diags:
        raise ValueError("program failed validation: " + "; ".join(diags))
    pcache = np.zeros(cfg.pcache_bytes, dtype=np.uint8)
    pcache[: len(img.param_image)] = np.frombuffer(img.param_image, dtype=np.uint8)
    return FpeState(cfg=cfg, program=img, pcache=pcache)


def _fault(state: FpeState, msg: str) -> None:
    state.fault = f"pc {state.pc}: {msg}"
    state.halted = True
    raise PeFault(state.fault)


def _mature(state: FpeState) -> None:
    still = []
    for ready, addr, bits in state.pending:
        if state.pc >= ready:
            state.regfile[addr : addr + len(bits)] = bits
        else:
            still.append((ready, addr, bits))
    state.pending = still


def step(state: FpeState) -> None:
    """Issue one bundle: all three slots execute in this single cycle."""
    if state.halted:
        raise RuntimeError("PE is halted")
    _mature(state)
    bundle = state.program.bundles[state.pc]
    c, p, d = bundle.compute, bundle.param, bundle.data
    cfg = state.cfg

    if c.opcode in isa.MV_OPS:
        if c.src >= cfg.regfile_words:
            _fault(state, f"MV source word {c.src} out of range")
        if c.pblock + cfg.block_rows * cfg.t > cfg.pcache_bytes:
            _fault(state, f"weight block {c.pblock} out of range")
        v = state.regfile[c.src * WORD : c.src * WORD + cfg.block_rows].view(np.int8)
        w = (
            state.pcache[c.pblock : c.pblock + cfg.block_rows * cfg.t]
            .view(np.int8)
            .reshape(cfg.block_rows, cfg.t)
        )
        prod = v.astype(np.int64) @ w.astype(np.int64)
        if c.opcode == COp.MV:
            state.acc = _wrap32(prod)
        else:
            state.acc = _wrap32(state.acc + prod)
        if c.opcode == COp.MVAA:
            bits = apply_table(state.program.act_tables[c.act], requantize_array(state.acc))
            addr = c.dst * 8
            if addr + cfg.t > cfg.regfile_words * WORD:
                _fault(state, f"MVAA destination slot {c.dst} out of range")
            state.pending.append((state.pc + cfg.pipeline_depth, addr, bits))
            state.acc = np.zeros(cfg.t, dtype=np.int64)
    elif c.opcode == COp.FIN:
        state.halted = True

    if p.opcode == POp.LDP:
        # Parameter staging is a prefetch on the FPE: the compute path reads
        # pCache directly, so LDP only has to be in range.
        end = (p.block + p.count) * isa.FPE_PARAM_BLOCK
        if end > cfg.pcache_bytes:
            _fault(state, "LDP range out of pCache")

    if d.opcode == DOp.LDR:
        need = d.length * WORD
        if state.stream_pos + need > len(state.stream):
            _fault(state, "input stream exhausted")
        if (d.addr + d.length) > cfg.regfile_words:
            _fault(state, "LDR range out of regfile")
        chunk = np.frombuffer(
            state.stream[state.stream_pos : state.stream_pos + need], dtype=np.uint8
        )
        state.regfile[d.addr * WORD : d.addr * WORD + need] = chunk
        state.stream_pos += need
    elif d.opcode == DOp.STR:
        if (d.addr + d.length) > cfg.regfile_words:
            _fault(state, "STR range out of regfile")
        state.out_stream += state.regfile[d.addr * WORD : (d.addr + d.length) * WORD].tobytes()

    if state.trace:
        accs = " ".join(str(int(a)) for a in state.acc[:4])
        print(
            f"fpe cycle={state.cycle} pc={state.pc} "
            f"{c.opcode.name}|{p.opcode.name}|{d.opcode.name} acc[:4]={accs}",
            file=sys.stderr,
        )

    state.pc += 1
    state.cycle += 1
    if c.opcode == COp.FIN:
        state.cycle += cfg.pipeline_depth
        # Drain: everything in flight completes during the FIN bubble.
        for _, addr, bits in state.pending:
            state.regfile[addr : addr + len(bits)] = bits
        state.pending = []


def run_inference(
    state: FpeState, input_bytes: bytes, expected_len: int | None = None
) -> tuple[Fix8Vector, int]:
    """Run the loaded program over one input; returns (streamed output, cycles)."""
    if expected_len is not None and len(input_bytes) != expected_len:
        raise ValueError(f"input is {len(input_bytes)} bytes, program expects {expected_len}")
    state.reset(input_bytes)
    while not state.halted:
        step(state)
    out = np.frombuffer(bytes(state.out_stream), dtype=np.uint8)
    return Fix8Vector(elems=out, logical_len=len(out)), state.cycle


def argmax(vec: Fix8Vector) -> int:
    """Smallest index attaining the maximum decoded value."""
    if len(vec.elems) == 0:
        raise ValueError("argmax of empty vector")
    vals = vec.elems[: vec.logical_len].view(np.int8)
    return int(np.argmax(vals))
