"""Cycle-approximate simulator for the heavy process element.

The HPE couples an n x n weight-stationary systolic array to three dual-port
RAM banks.  The canonical data flow cuts blocked GEMM into five streams:
weights from pCache into the array, source rows from bank 1, raw tile
results into banks 2/3 by turns (a hardware ping-pong selector), and the
accumulator merging two temporal regions into final results.

Execution is run-to-completion per bundle: the three slots of a bundle start
together and the bundle lasts as long as its slowest slot.  Latencies:

  MM    preload + l + 2n - 1   (preload = n unless the tile was staged by an
                                earlier LDP or is already resident)
  ACC*  one 256-bit word merged per cycle
  LDP   one word per cycle (a 1 KB tile = 32 words = n cycles)
  LDR/STR  one word per cycle

Bank ports are modeled per cycle at occupancy level: each active slot holds
one read or write port on the banks it touches for the cycles it runs.  A
(bank, cycle) pair with more than two ports in use is a stall; stalls are
counted, not simulated as delays, so compiled programs can assert
stall_cycles == 0 while deliberately conflicting programs report J > 0.

Intermediate tile results are stored as raw WideAcc words (8 int32 per
256-bit word); requantization happens exactly once, inside ACCA/ACCP.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import isa
from .fix8 import to_signed
from .fpe import PeFault, make_input_stream
from .isa import COp, ComputeOp, DOp, POp, ProgramImage, Target
from .linalg import Fix8Vector, apply_table, requantize_array

WORD = isa.WORD_BYTES
ACC_PER_WORD = 8  # 32-bit accumulators per 256-bit word


@dataclass(frozen=True)
class HpeConfig:
    array_dim: int = 32
    bank_words: int = 1024      # per bank, 256-bit words
    num_banks: int = 3
    pcache_bytes: int = isa.HPE_PCACHE_BYTES
    icache_bytes: int = isa.HPE_ICACHE_BYTES
    staging_slots: int = 2      # LDP double-buffer entries
    fin_drain: int = 4          # accumulate + activate + pool + writeback

    @property
    def weight_preload_cycles(self) -> int:
        return self.array_dim


DEFAULT_HPE_CONFIG = HpeConfig()

_WRAP = 1 << 32
_HALF = 1 << 31


def _wrap32(acc: np.ndarray) -> np.ndarray:
    return (acc + _HALF) % _WRAP - _HALF


def mm_cycles(rows: int, n: int, preloaded: bool) -> int:
    """Tile latency: skewed feed plus drain, preload charged when not hidden."""
    return (0 if preloaded else n) + rows + 2 * n - 1


def acc_cycles(length: int) -> int:
    return length


def ldp_cycles(count: int, block_words: int = isa.HPE_PARAM_BLOCK // WORD) -> int:
    return count * block_words


def data_cycles(length: int) -> int:
    return length


@dataclass
class HpeState:
    cfg: HpeConfig
    program: ProgramImage
    pcache: np.ndarray
    banks: list[np.ndarray] = field(init=False)
    pc: int = 0
    cycle: int = 0
    halted: bool = False
    fault: str | None = None

    def __post_init__(self) -> None:
        self.banks = [
            np.zeros(self.cfg.bank_words * WORD, dtype=np.uint8) for _ in range(self.cfg.num_banks)
        ]
        self.pingpong = 2           # next MM writes bank 2, then 3, by turns
        self.array_tile = -1        # tile resident in the array
        self.staged: list[int] = []  # FIFO of staged tile ids
        self.stream = b""
        self.stream_pos = 0
        self.out_stream = bytearray()
        self.stall_cycles = 0
        self.port_events: list[tuple[int, int, int]] = []  # (bank0idx, start, end)
        self.trace = os.environ.get("KSCOPE_TRACE") == "1"

    def reset(self, input_bytes: bytes) -> None:
        for b in self.banks:
            b[:] = 0
        self.pingpong = 2
        self.array_tile = -1
        self.staged = []
        self.pc = 0
        self.cycle = 0
        self.halted = False
        self.fault = None
        self.stream = make_input_stream(input_bytes)
        self.stream_pos = 0
        self.out_stream = bytearray()
        self.stall_cycles = 0
        self.port_events = []

    def bank(self, bank_id: int) -> np.ndarray:
        return self.banks[bank_id - 1]


def load_program(img: ProgramImage, cfg: HpeConfig = DEFAULT_HPE_CONFIG) -> HpeState:
    if img.target != Target.HPE:
        raise ValueError(f"program targets {img.target.name}, not HPE")
    diags = isa.validate(img, cfg)
    if diags:
        raise ValueError("program failed validation: " + "; ".join(diags))
    pcache = np.zeros(cfg.pcache_bytes, dtype=np.uint8)
    pcache[: len(img.param_image)] = np.frombuffer(img.param_image, dtype=np.uint8)
    return HpeState(cfg=cfg, program=img, pcache=pcache)


def _fault(state: HpeState, msg: str) -> None:
    state.fault = f"pc {state.pc}: {msg}"
    state.halted = True
    raise PeFault(state.fault)


def _acc_view(state: HpeState, bank_id: int, addr: int, words: int) -> np.ndarray:
    raw = state.bank(bank_id)[addr * WORD : (addr + words) * WORD]
    return raw.view("<i4").astype(np.int64)


def maxpool(window_bits) -> int:
    """Maximum of a window of Fix8 bit patterns by decoded value."""
    vals = list(window_bits)
    if not vals:
        raise ValueError("maxpool of empty window")
    return max(vals, key=to_signed)


def mm_tile(state: HpeState, op: ComputeOp, start: int) -> tuple[int, int]:
    """Run one systolic tile product; returns (dst_bank, cycles)."""
    cfg = state.cfg
    n = cfg.array_dim
    if op.rows < 1:
        _fault(state, "MM needs at least one row")
    last = op.src + (op.rows - 1) * op.rstride
    if last >= cfg.bank_words:
        _fault(state, "MM source rows out of bank")
    if op.dst + op.rows * (n * 4 // WORD) > cfg.bank_words:
        _fault(state, "MM destination out of bank")
    if (op.pblock + 1) * isa.HPE_PARAM_BLOCK > cfg.pcache_bytes:
        _fault(state, "MM weight tile out of pCache")

    preloaded = op.pblock == state.array_tile or op.pblock in state.staged
    cycles = mm_cycles(op.rows, n, preloaded)
    state.array_tile = op.pblock
    if op.pblock in state.staged:
        state.staged.remove(op.pblock)

    base = op.pblock * isa.HPE_PARAM_BLOCK
    w = state.pcache[base : base + n * n].view(np.int8).reshape(n, n).astype(np.int64)
    rows_idx = op.src + np.arange(op.rows) * op.rstride
    src = state.bank(1).reshape(cfg.bank_words, WORD)[rows_idx].view(np.int8).astype(np.int64)
    tile = _wrap32(src @ w).astype(np.int32)

    dst_bank = state.pingpong
    out = state.bank(dst_bank)
    row_words = n * 4 // WORD
    out[op.dst * WORD : (op.dst + op.rows * row_words) * WORD] = np.frombuffer(
        tile.astype("<i4").tobytes(), dtype=np.uint8
    )
    state.pingpong = 3 if dst_bank == 2 else 2

    compute_start = start + (0 if preloaded else n)
    state.port_events.append((0, compute_start, compute_start + op.rows))  # bank 1 read
    state.port_events.append(
        (dst_bank - 1, compute_start + 2 * n - 1, compute_start + op.rows + 2 * n - 1)
    )
    return dst_bank, cycles


def acc_merge(state: HpeState, op: ComputeOp, start: int) -> int:
    """Elementwise WideAcc merge, optionally requantize+activate (+pool)."""
    cfg = state.cfg
    if op.length < 1:
        _fault(state, f"{op.opcode.name} needs a length")
    if op.abank == 0 and op.bbank == 0:
        _fault(state, f"{op.opcode.name} has no enabled source")
    for bank, addr in ((op.abank, op.aaddr), (op.bbank, op.baddr)):
        if bank and addr + op.length > cfg.bank_words:
            _fault(state, f"{op.opcode.name} source out of bank")

    total = np.zeros(op.length * ACC_PER_WORD, dtype=np.int64)
    if op.abank:
        total = total + _acc_view(state, op.abank, op.aaddr, op.length)
        state.port_events.append((op.abank - 1, start, start + op.length))
    if op.bbank:
        total = total + _acc_view(state, op.bbank, op.baddr, op.length)
        state.port_events.append((op.bbank - 1, start, start + op.length))
    total = _wrap32(total)

    if not (1 <= op.dbank <= cfg.num_banks):
        _fault(state, f"{op.opcode.name} destination bank invalid")
    dst = state.bank(op.dbank)

    if op.opcode == COp.ACC:
        out_words = op.length
        if op.daddr + out_words > cfg.bank_words:
            _fault(state, "ACC destination out of bank")
        dst[op.daddr * WORD : (op.daddr + out_words) * WORD] = np.frombuffer(
            total.astype("<i4").tobytes(), dtype=np.uint8
        )
    else:
        if op.length % 4:
            _fault(state, f"{op.opcode.name} length must cover whole output rows")
        bits = apply_table(state.program.act_tables[op.act], requantize_array(total))
        if op.opcode == COp.ACCP:
            if not (2 <= op.window <= 4) or op.length % (4 * op.window):
                _fault(state, "ACCP window does not tile its input")
            rows = bits.reshape(-1, op.window, WORD).view(np.int8)
            bits = rows.max(axis=1).view(np.uint8).reshape(-1)
        out_words = len(bits) // WORD
        if op.daddr + out_words > cfg.bank_words:
            _fault(state, f"{op.opcode.name} destination out of bank")
        dst[op.daddr * WORD : op.daddr * WORD + len(bits)] = bits

    state.port_events.append((op.dbank - 1, start, start + op.length))
    return acc_cycles(op.length)


def step(state: HpeState) -> None:
    """Execute one bundle; all three slots start together."""
    if state.halted:
        raise RuntimeError("PE is halted")
    bundle = state.program.bundles[state.pc]
    c, p, d = bundle.compute, bundle.param, bundle.data
    cfg = state.cfg
    start = state.cycle
    events_before = len(state.port_events)

    compute_lat = 1
    if c.opcode == COp.MM:
        _, compute_lat = mm_tile(state, c, start)
    elif c.opcode in isa.ACC_OPS:
        compute_lat = acc_merge(state, c, start)
    elif c.opcode == COp.FIN:
        state.halted = True

    param_lat = 1
    if p.opcode == POp.LDP:
        end = (p.block + p.count) * isa.HPE_PARAM_BLOCK
        if end > cfg.pcache_bytes:
            _fault(state, "LDP range out of pCache")
        for blk in range(p.block, p.block + p.count):
            if blk in state.staged:
                state.staged.remove(blk)
            state.staged.append(blk)
        while len(state.staged) > cfg.staging_slots:
            state.staged.pop(0)
        param_lat = ldp_cycles(p.count)

    data_lat = 1
    if d.opcode == DOp.LDR:
        if not (1 <= d.bank <= cfg.num_banks) or d.addr + d.length > cfg.bank_words:
            _fault(state, "LDR range out of bank")
        per_word = d.spread if d.spread else WORD
        need = d.length * per_word
        if state.stream_pos + need > len(state.stream):
            _fault(state, "input stream exhausted")
        chunk = state.stream[state.stream_pos : state.stream_pos + need]
        state.stream_pos += need
        dst = state.bank(d.bank)
        if d.spread:
            words = np.zeros((d.length, WORD), dtype=np.uint8)
            rows = np.frombuffer(chunk, dtype=np.uint8).reshape(d.length, per_word)
            words[:, :per_word] = rows
            dst[d.addr * WORD : (d.addr + d.length) * WORD] = words.reshape(-1)
        else:
            dst[d.addr * WORD : (d.addr + d.length) * WORD] = np.frombuffer(chunk, dtype=np.uint8)
        data_lat = data_cycles(d.length)
        state.port_events.append((d.bank - 1, start, start + d.length))
    elif d.opcode == DOp.STR:
        if not (1 <= d.bank <= cfg.num_banks) or d.addr + d.length > cfg.bank_words:
            _fault(state, "STR range out of bank")
        state.out_stream += state.bank(d.bank)[d.addr * WORD : (d.addr + d.length) * WORD].tobytes()
        data_lat = data_cycles(d.length)
        state.port_events.append((d.bank - 1, start, start + d.length))

    duration = max(compute_lat, param_lat, data_lat)
    if state.trace:
        ports = [0, 0, 0]
        for b, s, e in state.port_events[events_before:]:
            if e > s:
                ports[b] += 1
        print(
            f"hpe cycle={start} pc={state.pc} "
            f"{c.opcode.name}|{p.opcode.name}|{d.opcode.name} dur={duration} "
            f"ports b1={ports[0]} b2={ports[1]} b3={ports[2]}",
            file=sys.stderr,
        )
    state.pc += 1
    state.cycle += duration
    if c.opcode == COp.FIN:
        state.cycle += cfg.fin_drain


def _count_stalls(state: HpeState) -> int:
    """Cycles where some bank had more than two ports in use."""
    stalls = 0
    for bank0 in range(state.cfg.num_banks):
        edges: dict[int, int] = {}
        for b, s, e in state.port_events:
            if b != bank0 or e <= s:
                continue
            edges[s] = edges.get(s, 0) + 1
            edges[e] = edges.get(e, 0) - 1
        level = 0
        prev = None
        for t in sorted(edges):
            if prev is not None and level > 2:
                stalls += (t - prev) * (level - 2)
            level += edges[t]
            prev = t
    return stalls


def run_inference(
    state: HpeState, input_bytes: bytes, expected_len: int | None = None
) -> tuple[Fix8Vector, int, int]:
    """Run the loaded program; returns (streamed output, cycles, stall_cycles)."""
    if expected_len is not None and len(input_bytes) != expected_len:
        raise ValueError(f"input is {len(input_bytes)} bytes, program expects {expected_len}")
    state.reset(input_bytes)
    while not state.halted:
        step(state)
    state.stall_cycles = _count_stalls(state)
    out = np.frombuffer(bytes(state.out_stream), dtype=np.uint8)
    return Fix8Vector(elems=out, logical_len=len(out)), state.cycle, state.stall_cycles
