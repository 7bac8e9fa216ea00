"""Lowers layer-structured models plus Fix8 weights into PE programs.

FPE lowering (dense chains):
  Each output block of 8 columns becomes MV (first input block), MVA
  (middle blocks) and a final MVAA.  Biases ride a weight block whose row 0
  holds the bias values, multiplied against the constant-one element that
  the input stream appends after the packet bytes; all-zero bias blocks are
  elided and the last weight block becomes the MVAA.  The pipeline is
  exposed, so a full pipeline_depth of NOPs separates layers (and the final
  STR) from the MVAAs producing their inputs.

HPE lowering (conv / recurrent / dense on the systolic array):
  Convolution is lowered tap by tap: tap k of a stride-s conv is one tile
  product over source rows k, k+s, k+2s, ... so overlapping windows are
  never materialized.  Tile products land in banks 2/3 by turns (the
  hardware ping-pong), a log-depth tree of ACC merges folds them together
  (cross-bank merges write in place over their first source), and the final
  merge is the ACCA (or ACCP when a max-pool layer follows) that
  requantizes, activates and writes Fix8 rows back to bank 1.  Recurrent
  cells unroll per timestep with the hidden state ping-ponging between two
  bank-1 regions.  Weight tiles are staged by LDP slots riding the bundle
  before each MM, so only the first tile of a program pays the array
  preload.

The final classifier layer is padded to whole 256-bit words with saturated
negative biases (-4.0) over zero weights, so an argmax over the streamed
output words can never prefer a padding lane.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import isa
from .fix8 import build_act_table
from .fpe import DEFAULT_FPE_CONFIG, FpeConfig
from .hpe import DEFAULT_HPE_CONFIG, HpeConfig, acc_cycles, data_cycles, ldp_cycles, mm_cycles
from .isa import (
    COp,
    ComputeOp,
    DOp,
    DataOp,
    POp,
    ParamOp,
    ProgramImage,
    Target,
    VliwBundle,
)
from .models import (
    Conv1D,
    Dense,
    LayerWeights,
    MaxPool1D,
    ModelSpec,
    RNNCell,
    WeightsFile,
    check_weights,
)

WORD = isa.WORD_BYTES
PAD_BIAS = 0x80  # -4.0: padding lanes of the classifier can never win argmax


class CompileError(Exception):
    pass


@dataclass(frozen=True)
class CompiledProgram:
    image: ProgramImage
    predicted_cycles: int
    input_len: int
    class_count: int
    output_words: int
    layout: dict = field(default_factory=dict)


def _act_tables(spec: ModelSpec) -> tuple[dict[str, int], tuple]:
    kinds: list[str] = []
    for layer in spec.layers:
        act = getattr(layer, "act", None)
        if act is not None and act not in kinds:
            kinds.append(act)
    if len(kinds) > isa.NUM_ACT_TABLES:
        raise CompileError(f"model uses {len(kinds)} activation kinds, hardware holds 4 tables")
    ids = {kind: i for i, kind in enumerate(kinds)}
    tables = [build_act_table(kind) for kind in kinds]
    while len(tables) < isa.NUM_ACT_TABLES:
        tables.append(build_act_table("identity"))
    return ids, tuple(tables)


def compile_model(
    spec: ModelSpec,
    weights: WeightsFile,
    fpe_cfg: FpeConfig = DEFAULT_FPE_CONFIG,
    hpe_cfg: HpeConfig = DEFAULT_HPE_CONFIG,
) -> CompiledProgram:
    check_weights(spec, weights)
    if spec.target == Target.FPE:
        return _compile_fpe(spec, weights, fpe_cfg)
    return _HpeCompiler(spec, weights, hpe_cfg).compile()


# ---------------------------------------------------------------------------
# FPE
# ---------------------------------------------------------------------------

def _fpe_weight_block(mat: np.ndarray, i: int, j: int, a: int, b: int) -> np.ndarray:
    block = np.zeros((a, b), dtype=np.uint8)
    rows = mat[i * a : (i + 1) * a, j * b : (j + 1) * b]
    block[: rows.shape[0], : rows.shape[1]] = rows
    return block


def _fpe_bias_entry(bias: np.ndarray, j: int, b: int, out_dim: int, final: bool) -> bytes:
    entry = np.zeros(b, dtype=np.uint8)
    for c in range(b):
        oc = j * b + c
        if oc < out_dim:
            entry[c] = bias[oc]
        elif final:
            entry[c] = PAD_BIAS
    return entry.tobytes()


def lower_dense_fpe(
    layer: Dense,
    lw: LayerWeights,
    in_base: int,
    const_word: int,
    out_base: int,
    act_id: int,
    final: bool,
    param: bytearray,
    bias_entries: list[bytes],
    cfg: FpeConfig = DEFAULT_FPE_CONFIG,
) -> list[ComputeOp]:
    """Compute-op sequence for one dense layer.

    Emits x*y ops for zero-bias blocks (MV, MVA..., MVAA) and x+1 per block
    otherwise (the bias block becomes the MVAA against the constant word).
    Weight blocks are appended to `param` in traversal order; bias entries
    are collected for the pool and their MVAA pblock patched later (-1).
    """
    a, b = cfg.block_rows, cfg.t
    out_cols = -(-layer.out_dim // WORD) * WORD if final else layer.out_dim
    x = -(-layer.in_dim // a)
    y = -(-out_cols // b)
    ops: list[ComputeOp] = []
    for j in range(y):
        seq = []
        for i in range(x):
            addr = len(param)
            param += _fpe_weight_block(lw.matrix, i, j, a, b).tobytes()
            seq.append(ComputeOp(opcode=COp.MV if i == 0 else COp.MVA, src=in_base + i, pblock=addr))
        dst = out_base * (WORD // 8) + j
        entry = _fpe_bias_entry(lw.bias, j, b, layer.out_dim, final)
        if any(entry):
            bias_entries.append(entry)
            seq.append(ComputeOp(opcode=COp.MVAA, src=const_word, pblock=-1, act=act_id, dst=dst))
        else:
            last = seq[-1]
            seq[-1] = ComputeOp(opcode=COp.MVAA, src=last.src, pblock=last.pblock, act=act_id, dst=dst)
        ops += seq
    return ops


def _compile_fpe(spec: ModelSpec, weights: WeightsFile, cfg: FpeConfig) -> CompiledProgram:
    a, b = cfg.block_rows, cfg.t
    if (a, b) != (32, 8):
        # the bundle encoding fixes the destination granularity at one
        # 8-output accumulator bank and the source at one 32-byte word
        raise CompileError(f"FPE lowering supports the (32, 8) block shape, not ({a}, {b})")
    table_ids, tables = _act_tables(spec)

    input_words = -(-spec.input_len // WORD)
    const_word = input_words
    next_word = input_words + 1

    param = bytearray()
    bias_entries: list[bytes] = []
    computes: list[list[ComputeOp]] = []
    layer_info = []

    in_base = 0
    for li, (layer, lw) in enumerate(zip(spec.layers, weights.layers)):
        assert isinstance(layer, Dense)
        final = li == len(spec.layers) - 1
        out_cols = -(-layer.out_dim // WORD) * WORD if final else layer.out_dim
        y = -(-out_cols // b)
        out_base = next_word
        out_words = -(-(y * b) // WORD)
        next_word += out_words
        if next_word > cfg.regfile_words:
            raise CompileError(
                f"regfile overflow: layer {li} needs words up to {next_word}, "
                f"have {cfg.regfile_words}"
            )
        ops = lower_dense_fpe(
            layer, lw, in_base, const_word, out_base, table_ids[layer.act], final, param,
            bias_entries, cfg,
        )
        computes.append(ops)
        layer_info.append({"out_base_word": out_base, "out_words": out_words, "compute_ops": len(ops)})
        in_base = out_base

    # Bias pool sits after the weight blocks, 8-byte entries in emission order.
    pool_base = len(param)
    pool_addrs = []
    for entry in bias_entries:
        pool_addrs.append(len(param))
        param += entry
    k = 0
    for ops in computes:
        for idx, op in enumerate(ops):
            if op.opcode == COp.MVAA and op.pblock == -1:
                ops[idx] = ComputeOp(
                    opcode=COp.MVAA, src=op.src, pblock=pool_addrs[k], act=op.act, dst=op.dst
                )
                k += 1

    # A bias entry is read as a full (32, 8) block; rows past row 0 multiply
    # the zero lanes of the constant word, so trailing bytes may alias
    # anything, but the read must stay inside the cache.
    reach = max(
        [len(param)]
        + [op.pblock + a * b for ops in computes for op in ops if op.opcode in isa.MV_OPS]
    )
    if reach > cfg.pcache_bytes:
        raise CompileError(f"pCache overflow: need {reach} bytes of {cfg.pcache_bytes}")

    bundles = [
        VliwBundle(
            compute=ComputeOp(opcode=COp.START),
            data=DataOp(opcode=DOp.LDR, addr=0, length=input_words + 1),
        )
    ]
    for ops in computes:
        for op in ops:
            bundles.append(VliwBundle(compute=op))
        bundles += [VliwBundle()] * cfg.pipeline_depth  # expose the writeback latency
    out = layer_info[-1]
    bundles.append(
        VliwBundle(data=DataOp(opcode=DOp.STR, addr=out["out_base_word"], length=out["out_words"]))
    )
    bundles.append(VliwBundle(compute=ComputeOp(opcode=COp.FIN)))

    _attach_fpe_prefetch(bundles)

    if len(bundles) * isa.FPE_BUNDLE_BYTES > cfg.icache_bytes:
        raise CompileError(
            f"iCache overflow: {len(bundles)} bundles need "
            f"{len(bundles) * isa.FPE_BUNDLE_BYTES} bytes of {cfg.icache_bytes}"
        )

    img = ProgramImage(
        target=Target.FPE, bundles=tuple(bundles), param_image=bytes(param), act_tables=tables
    )
    diags = isa.validate(img, cfg)
    if diags:
        raise CompileError("compiled image failed validation: " + "; ".join(diags))
    return CompiledProgram(
        image=img,
        predicted_cycles=len(bundles) + cfg.pipeline_depth,
        input_len=spec.input_len,
        class_count=spec.class_count,
        output_words=out["out_words"],
        layout={
            "input_words": input_words,
            "const_word": const_word,
            "layers": layer_info,
            "bias_pool": pool_base,
            "param_bytes": len(param),
            "act_tables": table_ids,
        },
    )


def _attach_fpe_prefetch(bundles: list[VliwBundle]) -> None:
    """Ride an LDP on each bundle staging the next compute op's block."""
    for i in range(len(bundles) - 1, 0, -1):
        c = bundles[i].compute
        if c.opcode in isa.MV_OPS and bundles[i - 1].param.opcode == POp.NOP:
            bundles[i - 1] = VliwBundle(
                compute=bundles[i - 1].compute,
                param=ParamOp(opcode=POp.LDP, block=c.pblock // isa.FPE_PARAM_BLOCK, count=1),
                data=bundles[i - 1].data,
            )


# ---------------------------------------------------------------------------
# HPE
# ---------------------------------------------------------------------------

@dataclass
class _FlatRegion:
    base: int
    width: int  # logical element count; padded positions beyond it are junk

    @property
    def words(self) -> int:
        return -(-self.width // WORD)

    def logical(self, padded: int) -> int | None:
        return padded if padded < self.width else None


@dataclass
class _RowRegion:
    base: int
    positions: int
    channels: int  # <= 32, one word per position

    @property
    def words(self) -> int:
        return self.positions

    def logical(self, padded: int) -> int | None:
        p, c = divmod(padded, WORD)
        if p < self.positions and c < self.channels:
            return p * self.channels + c
        return None


class _HpeCompiler:
    def __init__(self, spec: ModelSpec, weights: WeightsFile, cfg: HpeConfig):
        self.spec = spec
        self.weights = weights
        self.cfg = cfg
        self.table_ids, self.tables = _act_tables(spec)
        self.bundles: list[VliwBundle] = []
        self.tiles: list[bytes] = []
        self.bank1_ptr = 0
        self.pingpong = 2
        self.scratch = {2: 0, 3: 0}
        self.const_word = 0

    # -- allocation ----------------------------------------------------------

    def alloc_bank1(self, words: int, what: str) -> int:
        addr = self.bank1_ptr
        self.bank1_ptr += words
        if self.bank1_ptr > self.cfg.bank_words:
            raise CompileError(f"bank 1 overflow allocating {what}")
        return addr

    def alloc_scratch(self, bank: int, words: int, what: str) -> int:
        addr = self.scratch[bank]
        self.scratch[bank] += words
        if self.scratch[bank] > self.cfg.bank_words:
            raise CompileError(f"temporal bank {bank} overflow during {what}")
        return addr

    def add_tile(self, tile: np.ndarray, what: str) -> int:
        if tile.shape != (32, 32):
            raise CompileError(f"{what}: weight tiles must be 32x32")
        self.tiles.append(tile.tobytes())
        if len(self.tiles) * isa.HPE_PARAM_BLOCK > self.cfg.pcache_bytes:
            raise CompileError(
                f"pCache overflow: {len(self.tiles)} tiles exceed {self.cfg.pcache_bytes} bytes"
            )
        return len(self.tiles) - 1

    def emit(self, compute=None, param=None, data=None) -> None:
        self.bundles.append(
            VliwBundle(
                compute=compute or ComputeOp(),
                param=param or ParamOp(),
                data=data or DataOp(),
            )
        )

    # -- accumulation groups ---------------------------------------------------

    def emit_group(self, mms: list[ComputeOp], part_words: int, final: ComputeOp) -> None:
        """Emit tile products and a merge tree ending in `final` (ACCA/ACCP).

        `final` carries act/window/length/dbank/daddr; its two sources are
        the last surviving partial sums.  Intermediate cross-bank merges
        write in place over their first source, so scratch stays bounded by
        the tiles themselves; a same-bank merge (after a split) writes to
        the other temporal bank.
        """
        self.scratch = {2: 0, 3: 0}
        runs: list[list[int]] = []  # [bank, addr, count] of contiguous partials
        for op in mms:
            bank = self.pingpong
            addr = self.alloc_scratch(bank, part_words, "tile products")
            self.emit(
                compute=ComputeOp(
                    opcode=COp.MM,
                    pblock=op.pblock,
                    src=op.src,
                    rows=op.rows,
                    rstride=op.rstride,
                    dst=addr,
                )
            )
            self.pingpong = 3 if bank == 2 else 2
            for run in runs:
                if run[0] == bank and run[1] + run[2] * part_words == addr:
                    run[2] += 1
                    break
            else:
                runs.append([bank, addr, 1])

        while sum(r[2] for r in runs) > 2:
            if len(runs) == 1:
                bank, addr, count = runs[0]
                half = count // 2
                runs = [[bank, addr, half], [bank, addr + half * part_words, count - half]]
            runs.sort(key=lambda r: -r[2])
            r1, r2 = runs[0], runs[1]
            m = min(r1[2], r2[2])
            if r1[0] != r2[0]:
                dbank, daddr = r1[0], r1[1]  # in place over source a
            else:
                dbank = 5 - r1[0]
                daddr = self.alloc_scratch(dbank, m * part_words, "partial merge")
            self.emit(
                compute=ComputeOp(
                    opcode=COp.ACC,
                    abank=r1[0],
                    aaddr=r1[1],
                    bbank=r2[0],
                    baddr=r2[1],
                    dbank=dbank,
                    daddr=daddr,
                    length=m * part_words,
                )
            )
            rest = [[r[0], r[1] + m * part_words, r[2] - m] for r in (r1, r2) if r[2] > m]
            runs = [[dbank, daddr, m]] + rest + runs[2:]

        if len(runs) == 1 and runs[0][2] == 2:
            bank, addr, _ = runs[0]
            runs = [[bank, addr, 1], [bank, addr + part_words, 1]]
        a = runs[0]
        b = runs[1] if len(runs) > 1 else None
        self.emit(
            compute=ComputeOp(
                opcode=final.opcode,
                act=final.act,
                abank=a[0],
                aaddr=a[1],
                bbank=b[0] if b else 0,
                baddr=b[1] if b else 0,
                dbank=final.dbank,
                daddr=final.daddr,
                length=final.length,
                window=final.window,
            )
        )

    # -- weight tiles ------------------------------------------------------------

    def dense_tile(self, mat: np.ndarray, region, cb: int, ob: int) -> np.ndarray:
        tile = np.zeros((32, 32), dtype=np.uint8)
        for r in range(32):
            gi = region.logical(cb * 32 + r)
            if gi is None or gi >= mat.shape[0]:
                continue
            cols = mat[gi, ob * 32 : ob * 32 + 32]
            tile[r, : len(cols)] = cols
        return tile

    def bias_tile(self, bias: np.ndarray, ob: int, out_dim: int, final: bool) -> np.ndarray:
        tile = np.zeros((32, 32), dtype=np.uint8)
        for c in range(32):
            oc = ob * 32 + c
            if oc < out_dim:
                tile[0, c] = bias[oc]
            elif final:
                tile[0, c] = PAD_BIAS
        return tile

    # -- layers --------------------------------------------------------------------

    def lower_dense(self, layer: Dense, lw: LayerWeights, region, final: bool):
        ow = -(-layer.out_dim // WORD)
        out_base = self.alloc_bank1(ow, "dense output")
        for ob in range(ow):
            mms = []
            for cb in range(region.words):
                tid = self.add_tile(self.dense_tile(lw.matrix, region, cb, ob), "dense weights")
                mms.append(ComputeOp(opcode=COp.MM, pblock=tid, src=region.base + cb, rows=1, rstride=1))
            btile = self.bias_tile(lw.bias, ob, layer.out_dim, final)
            if btile.any():
                tid = self.add_tile(btile, "dense bias")
                mms.append(ComputeOp(opcode=COp.MM, pblock=tid, src=self.const_word, rows=1, rstride=0))
            self.emit_group(
                mms,
                part_words=4,
                final=ComputeOp(
                    opcode=COp.ACCA,
                    act=self.table_ids[layer.act],
                    dbank=1,
                    daddr=out_base + ob,
                    length=4,
                ),
            )
        return _FlatRegion(base=out_base, width=layer.out_dim)

    def lower_conv(self, layer: Conv1D, lw: LayerWeights, region, pool: MaxPool1D | None):
        if not isinstance(region, _RowRegion):
            raise CompileError("conv layers must follow the input or another conv/pool stage")
        if layer.out_ch > 32:
            raise CompileError(f"conv out_ch {layer.out_ch} exceeds the 32-lane row limit")
        if layer.in_ch != region.channels:
            raise CompileError("conv channel mismatch")
        if layer.stride > 15:
            raise CompileError("conv stride too large for the row-stride field")
        p_out = (region.positions - layer.kernel) // layer.stride + 1

        if pool is not None:
            if pool.stride != pool.window or not (2 <= pool.window <= 4):
                raise CompileError("max pooling lowers onto ACCP only with stride == window in 2..4")
            out_positions = p_out // pool.window
            rows_used = out_positions * pool.window
            if out_positions < 1:
                raise CompileError("pooling window larger than the conv output")
        else:
            rows_used = p_out
            out_positions = p_out

        out_base = self.alloc_bank1(out_positions, "conv output")
        mms = []
        for k in range(layer.kernel):
            tile = np.zeros((32, 32), dtype=np.uint8)
            rows = lw.matrix[k * layer.in_ch : (k + 1) * layer.in_ch, :]
            tile[: rows.shape[0], : rows.shape[1]] = rows
            tid = self.add_tile(tile, "conv tap")
            mms.append(
                ComputeOp(opcode=COp.MM, pblock=tid, src=region.base + k, rows=p_out, rstride=layer.stride)
            )
        btile = self.bias_tile(lw.bias, 0, layer.out_ch, final=False)
        if btile.any():
            tid = self.add_tile(btile, "conv bias")
            mms.append(ComputeOp(opcode=COp.MM, pblock=tid, src=self.const_word, rows=p_out, rstride=0))

        final = ComputeOp(
            opcode=COp.ACCP if pool is not None else COp.ACCA,
            act=self.table_ids[layer.act],
            dbank=1,
            daddr=out_base,
            length=rows_used * 4,
            window=pool.window if pool is not None else 0,
        )
        self.emit_group(mms, part_words=p_out * 4, final=final)
        return _RowRegion(base=out_base, positions=out_positions, channels=layer.out_ch)

    def lower_rnn(self, layer: RNNCell, lw: LayerWeights, region):
        if layer.in_dim > WORD:
            raise CompileError("recurrent in_dim must fit one word (<= 32)")
        hw = -(-layer.hidden // WORD)
        h_regions = [self.alloc_bank1(hw, "hidden state A"), self.alloc_bank1(hw, "hidden state B")]
        cur, nxt = 0, 1
        hflat = _FlatRegion(base=0, width=layer.hidden)
        act = self.table_ids[layer.act]
        wx = lw.matrix[: layer.in_dim, :]
        wh = lw.matrix[layer.in_dim :, :]
        xtiles = []
        for ob in range(hw):
            xtile = np.zeros((32, 32), dtype=np.uint8)
            cols = wx[:, ob * 32 : ob * 32 + 32]
            xtile[: cols.shape[0], : cols.shape[1]] = cols
            xtiles.append(self.add_tile(xtile, "rnn input weights"))
        htiles = {
            (cb, ob): self.add_tile(self.dense_tile(wh, hflat, cb, ob), "rnn recurrent weights")
            for ob in range(hw)
            for cb in range(hw)
        }
        btiles = []
        for ob in range(hw):
            btile = self.bias_tile(lw.bias, ob, layer.hidden, final=False)
            btiles.append(self.add_tile(btile, "rnn bias") if btile.any() else None)

        for t in range(layer.timesteps):
            for ob in range(hw):
                mms = [
                    ComputeOp(opcode=COp.MM, pblock=xtiles[ob], src=region.base + t, rows=1, rstride=1)
                ]
                for cb in range(hw):
                    mms.append(
                        ComputeOp(
                            opcode=COp.MM,
                            pblock=htiles[(cb, ob)],
                            src=h_regions[cur] + cb,
                            rows=1,
                            rstride=1,
                        )
                    )
                if btiles[ob] is not None:
                    mms.append(
                        ComputeOp(opcode=COp.MM, pblock=btiles[ob], src=self.const_word, rows=1, rstride=0)
                    )
                self.emit_group(
                    mms,
                    part_words=4,
                    final=ComputeOp(
                        opcode=COp.ACCA, act=act, dbank=1, daddr=h_regions[nxt] + ob, length=4
                    ),
                )
            cur, nxt = nxt, cur
        return _FlatRegion(base=h_regions[cur], width=layer.hidden)

    # -- program -----------------------------------------------------------------

    def compile(self) -> CompiledProgram:
        spec, cfg = self.spec, self.cfg
        first = spec.layers[0]

        if isinstance(first, Conv1D):
            if first.in_ch > WORD:
                raise CompileError("first-layer conv in_ch must fit one word (<= 32)")
            positions = spec.input_len // first.in_ch
            region = _RowRegion(
                base=self.alloc_bank1(positions, "input rows"),
                positions=positions,
                channels=first.in_ch,
            )
            self.const_word = self.alloc_bank1(1, "constant word")
            self.emit(
                compute=ComputeOp(opcode=COp.START),
                data=DataOp(DOp.LDR, addr=region.base, length=positions, bank=1, spread=first.in_ch),
            )
            self.emit(data=DataOp(DOp.LDR, addr=self.const_word, length=1, bank=1))
        elif isinstance(first, RNNCell):
            region = _RowRegion(
                base=self.alloc_bank1(first.timesteps, "input rows"),
                positions=first.timesteps,
                channels=first.in_dim,
            )
            self.const_word = self.alloc_bank1(1, "constant word")
            self.emit(
                compute=ComputeOp(opcode=COp.START),
                data=DataOp(
                    DOp.LDR, addr=region.base, length=first.timesteps, bank=1, spread=first.in_dim
                ),
            )
            self.emit(data=DataOp(DOp.LDR, addr=self.const_word, length=1, bank=1))
        else:
            words = -(-spec.input_len // WORD)
            region = _FlatRegion(base=self.alloc_bank1(words, "input"), width=spec.input_len)
            self.const_word = self.alloc_bank1(1, "constant word")
            # Packed input and constant word are stream-contiguous: one load.
            self.emit(
                compute=ComputeOp(opcode=COp.START),
                data=DataOp(DOp.LDR, addr=region.base, length=words + 1, bank=1),
            )

        idx = 0
        final_region = region
        while idx < len(spec.layers):
            layer = spec.layers[idx]
            lw = self.weights.layers[idx]
            final = idx == len(spec.layers) - 1
            if isinstance(layer, Dense):
                final_region = self.lower_dense(layer, lw, final_region, final)
            elif isinstance(layer, Conv1D):
                pool = None
                if idx + 1 < len(spec.layers) and isinstance(spec.layers[idx + 1], MaxPool1D):
                    pool = spec.layers[idx + 1]
                    idx += 1
                final_region = self.lower_conv(layer, lw, final_region, pool)
            elif isinstance(layer, MaxPool1D):
                raise CompileError("max pooling must directly follow a conv layer")
            elif isinstance(layer, RNNCell):
                final_region = self.lower_rnn(layer, lw, final_region)
            idx += 1

        out_words = final_region.words
        self.emit(data=DataOp(DOp.STR, addr=final_region.base, length=out_words, bank=1))
        self.emit(compute=ComputeOp(opcode=COp.FIN))
        _attach_hpe_staging(self.bundles)

        if len(self.bundles) * isa.HPE_BUNDLE_BYTES > cfg.icache_bytes:
            raise CompileError(
                f"iCache overflow: {len(self.bundles)} bundles need "
                f"{len(self.bundles) * isa.HPE_BUNDLE_BYTES} bytes of {cfg.icache_bytes}"
            )
        param = b"".join(self.tiles)
        img = ProgramImage(
            target=Target.HPE, bundles=tuple(self.bundles), param_image=param, act_tables=self.tables
        )
        diags = isa.validate(img, cfg)
        if diags:
            raise CompileError("compiled image failed validation: " + "; ".join(diags))
        return CompiledProgram(
            image=img,
            predicted_cycles=predict_hpe_cycles(self.bundles, cfg),
            input_len=spec.input_len,
            class_count=spec.class_count,
            output_words=out_words,
            layout={
                "tiles": len(self.tiles),
                "param_bytes": len(param),
                "const_word": self.const_word,
                "bank1_words": self.bank1_ptr,
                "output_base": final_region.base,
                "act_tables": self.table_ids,
            },
        )


def _attach_hpe_staging(bundles: list[VliwBundle]) -> None:
    """Stage each MM's weight tile with an LDP on the preceding bundle."""
    for i in range(len(bundles) - 1, 0, -1):
        c = bundles[i].compute
        if c.opcode == COp.MM and bundles[i - 1].param.opcode == POp.NOP:
            bundles[i - 1] = VliwBundle(
                compute=bundles[i - 1].compute,
                param=ParamOp(opcode=POp.LDP, block=c.pblock, count=1),
                data=bundles[i - 1].data,
            )


def predict_hpe_cycles(bundles, cfg: HpeConfig) -> int:
    """Static cycle count mirroring the HPE issue rules (no data simulated)."""
    staged: list[int] = []
    array_tile = -1
    cycle = 0
    for b in bundles:
        c, p, d = b.compute, b.param, b.data
        compute_lat = 1
        if c.opcode == COp.MM:
            preloaded = c.pblock == array_tile or c.pblock in staged
            compute_lat = mm_cycles(c.rows, cfg.array_dim, preloaded)
            array_tile = c.pblock
            if c.pblock in staged:
                staged.remove(c.pblock)
        elif c.opcode in isa.ACC_OPS:
            compute_lat = acc_cycles(c.length)
        param_lat = 1
        if p.opcode == POp.LDP:
            for blk in range(p.block, p.block + p.count):
                if blk in staged:
                    staged.remove(blk)
                staged.append(blk)
            while len(staged) > cfg.staging_slots:
                staged.pop(0)
            param_lat = ldp_cycles(p.count)
        data_lat = data_cycles(d.length) if d.opcode != DOp.NOP else 1
        cycle += max(compute_lat, param_lat, data_lat)
        if c.opcode == COp.FIN:
            cycle += cfg.fin_drain
    return cycle
