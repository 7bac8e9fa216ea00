"""VLIW instruction sets for the two process elements.

Each instruction word (bundle) has three slots issued together: a compute
slot, a parameter-loading slot and a temporal-data access slot.  FPE bundles
encode to 8 bytes, HPE bundles to 12, little-endian, fixed width.

Compute opcodes:
  FPE: MV (block GEMV into the accumulators), MVA (accumulate on top),
       MVAA (accumulate, requantize, activate, write back and clear).
  HPE: MM (systolic tile product into the ping-pong output bank),
       ACC (elementwise WideAcc merge), ACCA (merge + requantize + activate),
       ACCP (ACCA + max pooling over rows).
  Both: NOP, START, FIN.
Param slot: LDP (stage a parameter-cache block).  Data slot: LDR (load from
the input stream into regfile/RAM), STR (stream regfile/RAM out).

Operand conventions:
  FPE  MV/MVA/MVAA: src = regfile word holding the (1, 32) input slice,
       pblock = pCache byte address of a row-major (32, 8) weight block,
       dst = output position in 8-byte units (MVAA only), act = table id.
  HPE  MM: pblock = 1 KB tile index of a row-major (32, 32) weight tile,
       src = bank-1 word address of the first source row, rows = l,
       rstride = words between consecutive source rows (0 broadcasts one
       row), dst = word address inside the current ping-pong bank.
  HPE  ACC/ACCA/ACCP: two source regions (bank, addr), either of which may
       be disabled (bank 0) and then contributes zeros; a destination
       region (bank, addr); length in 256-bit words of WideAcc input;
       ACCP pools `window` consecutive activated rows (one word per row).
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from enum import IntEnum

from .fix8 import ActTable, IDENTITY_TABLE

KPRG_MAGIC = b"KPRG"
KPRG_VERSION = 1

FPE_BUNDLE_BYTES = 8
HPE_BUNDLE_BYTES = 12
FPE_ICACHE_BYTES = 1024
HPE_ICACHE_BYTES = 8192
FPE_PCACHE_BYTES = 8192
HPE_PCACHE_BYTES = 512 * 1024
FPE_PARAM_BLOCK = 256   # one (32, 8) weight block
HPE_PARAM_BLOCK = 1024  # one (32, 32) weight tile
WORD_BYTES = 32         # 256-bit native word

NUM_ACT_TABLES = 4


class Target(IntEnum):
    FPE = 0
    HPE = 1


class COp(IntEnum):
    NOP = 0
    MV = 1
    MVA = 2
    MVAA = 3
    MM = 4
    ACC = 5
    ACCA = 6
    ACCP = 7
    START = 13
    FIN = 14


class POp(IntEnum):
    NOP = 0
    LDP = 1


class DOp(IntEnum):
    NOP = 0
    LDR = 1
    STR = 2


FPE_COMPUTE_OPS = {COp.NOP, COp.MV, COp.MVA, COp.MVAA, COp.START, COp.FIN}
HPE_COMPUTE_OPS = {COp.NOP, COp.MM, COp.ACC, COp.ACCA, COp.ACCP, COp.START, COp.FIN}
ACC_OPS = {COp.ACC, COp.ACCA, COp.ACCP}
MV_OPS = {COp.MV, COp.MVA, COp.MVAA}


class IsaError(Exception):
    """Base for assembly/encoding errors."""


class AsmError(IsaError):
    pass


class CodecError(IsaError):
    pass


@dataclass(frozen=True)
class ComputeOp:
    opcode: COp = COp.NOP
    src: int = 0
    pblock: int = 0
    dst: int = 0
    act: int = 0
    rows: int = 0
    rstride: int = 0
    abank: int = 0
    aaddr: int = 0
    bbank: int = 0
    baddr: int = 0
    dbank: int = 0
    daddr: int = 0
    length: int = 0
    window: int = 0


@dataclass(frozen=True)
class ParamOp:
    opcode: POp = POp.NOP
    block: int = 0
    count: int = 0


@dataclass(frozen=True)
class DataOp:
    opcode: DOp = DOp.NOP
    addr: int = 0
    length: int = 0
    bank: int = 0    # HPE only
    spread: int = 0  # HPE LDR: bytes per row spread-loaded into words, 0 = packed


NOP_COMPUTE = ComputeOp()
NOP_PARAM = ParamOp()
NOP_DATA = DataOp()


@dataclass(frozen=True)
class VliwBundle:
    compute: ComputeOp = NOP_COMPUTE
    param: ParamOp = NOP_PARAM
    data: DataOp = NOP_DATA


NOP_BUNDLE = VliwBundle()


def default_act_tables() -> tuple[ActTable, ...]:
    return (IDENTITY_TABLE,) * NUM_ACT_TABLES


@dataclass(frozen=True)
class ProgramImage:
    """A complete PE program: bundles, pCache image and activation tables."""

    target: Target
    bundles: tuple[VliwBundle, ...]
    param_image: bytes = b""
    act_tables: tuple[ActTable, ...] = field(default_factory=default_act_tables)


def bundle_bytes(target: Target) -> int:
    return FPE_BUNDLE_BYTES if target == Target.FPE else HPE_BUNDLE_BYTES


def icache_bytes(target: Target) -> int:
    return FPE_ICACHE_BYTES if target == Target.FPE else HPE_ICACHE_BYTES


def pcache_bytes(target: Target) -> int:
    return FPE_PCACHE_BYTES if target == Target.FPE else HPE_PCACHE_BYTES


def param_block_bytes(target: Target) -> int:
    return FPE_PARAM_BLOCK if target == Target.FPE else HPE_PARAM_BLOCK


# ---------------------------------------------------------------------------
# Bundle <-> fixed-width binary words
# ---------------------------------------------------------------------------

def _pack(fields: list[tuple[int, int]]) -> int:
    word = 0
    shift = 0
    for value, width in fields:
        if not (0 <= value < (1 << width)):
            raise CodecError(f"field value {value} does not fit in {width} bits")
        word |= value << shift
        shift += width
    return word


class _Cursor:
    def __init__(self, word: int):
        self.word = word
        self.shift = 0

    def take(self, width: int) -> int:
        v = (self.word >> self.shift) & ((1 << width) - 1)
        self.shift += width
        return v


def _encode_fpe_compute(c: ComputeOp) -> int:
    # the pblock field is 8-byte granular: weight blocks are 256-byte
    # aligned and bias pool entries 8-byte aligned, and 13 bits of 8-byte
    # units address a pCache of up to 64 KB
    if c.opcode in MV_OPS and c.pblock % 8:
        raise CodecError(f"pblock {c.pblock} is not 8-byte aligned")
    return _pack([(int(c.opcode), 4), (c.act, 2), (c.src, 5), (c.pblock // 8, 13), (c.dst, 8)])


def _decode_fpe_compute(word: int) -> ComputeOp:
    cur = _Cursor(word)
    op = COp(cur.take(4))
    act, src, pblock, dst = cur.take(2), cur.take(5), cur.take(13) * 8, cur.take(8)
    if op == COp.NOP or op == COp.START or op == COp.FIN:
        return ComputeOp(opcode=op)
    if op not in MV_OPS:
        raise CodecError(f"opcode {op.name} is not a valid FPE compute op")
    if op != COp.MVAA:
        act, dst = 0, 0
    return ComputeOp(opcode=op, src=src, pblock=pblock, dst=dst, act=act)


def _encode_hpe_compute(c: ComputeOp) -> int:
    op = int(c.opcode)
    if c.opcode == COp.MM:
        return _pack(
            [(op, 4), (c.pblock, 9), (c.src, 10), (c.rows, 10), (c.rstride, 4), (c.dst, 10), (0, 7)]
        )
    if c.opcode in ACC_OPS:
        wenc = c.window - 1 if c.opcode == COp.ACCP else 0
        return _pack(
            [
                (op, 4),
                (c.act, 2),
                (c.abank, 2),
                (c.aaddr, 10),
                (c.bbank, 2),
                (c.baddr, 10),
                (c.dbank, 2),
                (c.daddr, 10),
                (c.length, 10),
                (wenc, 2),
            ]
        )
    return _pack([(op, 4), (0, 50)])


def _decode_hpe_compute(word: int) -> ComputeOp:
    cur = _Cursor(word)
    op = COp(cur.take(4))
    if op == COp.MM:
        pblock, src, rows, rstride, dst = (
            cur.take(9),
            cur.take(10),
            cur.take(10),
            cur.take(4),
            cur.take(10),
        )
        return ComputeOp(opcode=op, pblock=pblock, src=src, rows=rows, rstride=rstride, dst=dst)
    if op in ACC_OPS:
        act, abank, aaddr = cur.take(2), cur.take(2), cur.take(10)
        bbank, baddr = cur.take(2), cur.take(10)
        dbank, daddr = cur.take(2), cur.take(10)
        length, wenc = cur.take(10), cur.take(2)
        if op != COp.ACCP:
            wenc = -1  # canonical window 0
        return ComputeOp(
            opcode=op,
            act=act if op != COp.ACC else 0,
            abank=abank,
            aaddr=aaddr,
            bbank=bbank,
            baddr=baddr,
            dbank=dbank,
            daddr=daddr,
            length=length,
            window=wenc + 1,
        )
    if op in (COp.NOP, COp.START, COp.FIN):
        return ComputeOp(opcode=op)
    raise CodecError(f"opcode {op.name} is not a valid HPE compute op")


def _encode_param(p: ParamOp) -> int:
    return _pack([(int(p.opcode), 1), (p.block, 9), (p.count, 2)])


def _decode_param(word: int) -> ParamOp:
    cur = _Cursor(word)
    op = POp(cur.take(1))
    block, count = cur.take(9), cur.take(2)
    if op == POp.NOP:
        return NOP_PARAM
    return ParamOp(opcode=op, block=block, count=count)


def _encode_data(d: DataOp, target: Target) -> int:
    if target == Target.FPE:
        return _pack([(int(d.opcode), 2), (d.addr, 8), (d.length, 6)])
    return _pack([(int(d.opcode), 2), (d.bank, 2), (d.addr, 10), (d.length, 10), (d.spread, 6)])


def _decode_data(word: int, target: Target) -> DataOp:
    cur = _Cursor(word)
    op = DOp(cur.take(2))
    if target == Target.FPE:
        addr, length = cur.take(8), cur.take(6)
        bank = spread = 0
    else:
        bank, addr, length, spread = cur.take(2), cur.take(10), cur.take(10), cur.take(6)
    if op == DOp.NOP:
        return NOP_DATA
    if op == DOp.STR:
        spread = 0
    return DataOp(opcode=op, addr=addr, length=length, bank=bank, spread=spread)


def encode_bundle(b: VliwBundle, target: Target) -> bytes:
    if target == Target.FPE:
        word = _encode_fpe_compute(b.compute)
        word |= _encode_param(b.param) << 32
        word |= _encode_data(b.data, target) << 48
        return word.to_bytes(8, "little")
    word = _encode_hpe_compute(b.compute)
    word |= _encode_param(b.param) << 54
    word |= _encode_data(b.data, target) << 66
    return word.to_bytes(12, "little")


def decode_bundle(raw: bytes, target: Target) -> VliwBundle:
    if len(raw) != bundle_bytes(target):
        raise CodecError(f"bundle must be {bundle_bytes(target)} bytes, got {len(raw)}")
    word = int.from_bytes(raw, "little")
    if target == Target.FPE:
        compute = _decode_fpe_compute(word & 0xFFFFFFFF)
        param = _decode_param((word >> 32) & 0xFFFF)
        data = _decode_data((word >> 48) & 0xFFFF, target)
    else:
        compute = _decode_hpe_compute(word & ((1 << 54) - 1))
        param = _decode_param((word >> 54) & 0xFFF)
        data = _decode_data((word >> 66) & ((1 << 30) - 1), target)
    return VliwBundle(compute=compute, param=param, data=data)


# ---------------------------------------------------------------------------
# Program binary container
# ---------------------------------------------------------------------------

def encode_binary(img: ProgramImage) -> bytes:
    """KPRG container: header, bundles, param image, 4 activation tables."""
    out = bytearray()
    out += KPRG_MAGIC
    out += struct.pack("<BB", KPRG_VERSION, int(img.target))
    out += struct.pack("<I", len(img.bundles))
    for b in img.bundles:
        out += encode_bundle(b, img.target)
    out += struct.pack("<I", len(img.param_image))
    out += img.param_image
    tables = list(img.act_tables) + [IDENTITY_TABLE] * (NUM_ACT_TABLES - len(img.act_tables))
    for t in tables[:NUM_ACT_TABLES]:
        out += t.to_bytes()
    return bytes(out)


def decode_binary(raw: bytes) -> ProgramImage:
    if len(raw) < 10:
        raise CodecError("truncated program file")
    if raw[:4] != KPRG_MAGIC:
        raise CodecError("bad magic, not a KPRG file")
    version, target_id = struct.unpack_from("<BB", raw, 4)
    if version != KPRG_VERSION:
        raise CodecError(f"unsupported program version {version}")
    try:
        target = Target(target_id)
    except ValueError:
        raise CodecError(f"unknown target id {target_id}") from None
    (count,) = struct.unpack_from("<I", raw, 6)
    pos = 10
    size = bundle_bytes(target)
    bundles = []
    for _ in range(count):
        if pos + size > len(raw):
            raise CodecError("truncated bundle stream")
        bundles.append(decode_bundle(raw[pos : pos + size], target))
        pos += size
    if pos + 4 > len(raw):
        raise CodecError("truncated param length")
    (plen,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if pos + plen > len(raw):
        raise CodecError("truncated param image")
    param_image = raw[pos : pos + plen]
    pos += plen
    tables = []
    for i in range(NUM_ACT_TABLES):
        chunk = raw[pos : pos + 256]
        if len(chunk) != 256:
            raise CodecError("truncated activation tables")
        tables.append(ActTable.from_bytes(chunk, kind=f"table{i}"))
        pos += 256
    return ProgramImage(
        target=target, bundles=tuple(bundles), param_image=bytes(param_image), act_tables=tuple(tables)
    )


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TargetCaps:
    """Capacity view used by the validator; PE configs duck-type this."""

    icache_bytes: int
    pcache_bytes: int
    regfile_words: int = 32   # FPE
    bank_words: int = 1024    # HPE


def default_caps(target: Target) -> TargetCaps:
    return TargetCaps(icache_bytes=icache_bytes(target), pcache_bytes=pcache_bytes(target))


def validate(img: ProgramImage, cfg=None) -> list[str]:
    """Static program checks; an empty list means the image is well formed."""
    caps = cfg if cfg is not None else default_caps(img.target)
    icache = getattr(caps, "icache_bytes")
    pcache = getattr(caps, "pcache_bytes")
    diags: list[str] = []
    legal = FPE_COMPUTE_OPS if img.target == Target.FPE else HPE_COMPUTE_OPS

    total = len(img.bundles) * bundle_bytes(img.target)
    if total > icache:
        diags.append(f"program is {total} bytes, exceeds iCache of {icache} bytes")
    if len(img.param_image) > pcache:
        diags.append(f"param image is {len(img.param_image)} bytes, exceeds pCache of {pcache} bytes")
    if len(img.act_tables) > NUM_ACT_TABLES:
        diags.append(f"at most {NUM_ACT_TABLES} activation tables supported")

    if not img.bundles or img.bundles[-1].compute.opcode != COp.FIN:
        diags.append("program does not end with FIN")

    fin_seen = False
    for i, b in enumerate(img.bundles):
        c = b.compute
        where = f"bundle {i}"
        if fin_seen:
            diags.append(f"{where}: instruction after FIN")
            break
        if c.opcode == COp.FIN:
            fin_seen = True
        if c.opcode not in legal:
            diags.append(f"{where}: {c.opcode.name} is illegal for target {img.target.name}")
            continue
        if c.opcode == COp.START and i != 0:
            diags.append(f"{where}: START must be the first bundle")
        if img.target == Target.FPE:
            diags += _validate_fpe_bundle(b, caps, where)
        else:
            diags += _validate_hpe_bundle(b, caps, where)
    return diags


def _validate_fpe_bundle(b: VliwBundle, caps, where: str) -> list[str]:
    diags = []
    words = getattr(caps, "regfile_words", 32)
    pcache = caps.pcache_bytes
    c = b.compute
    if c.opcode in MV_OPS:
        if c.src >= words:
            diags.append(f"{where}: source word {c.src} beyond regfile depth {words}")
        if c.pblock % 8:
            diags.append(f"{where}: weight block at {c.pblock} is not 8-byte aligned")
        if c.pblock + FPE_PARAM_BLOCK > pcache:
            diags.append(f"{where}: weight block at {c.pblock} runs past pCache")
        if c.opcode == COp.MVAA:
            if c.act >= NUM_ACT_TABLES:
                diags.append(f"{where}: activation table {c.act} out of range")
            if (c.dst + 1) * 8 > words * WORD_BYTES:
                diags.append(f"{where}: destination slot {c.dst} beyond regfile")
    if b.param.opcode == POp.LDP:
        if b.param.count < 1:
            diags.append(f"{where}: LDP count must be >= 1")
        end = (b.param.block + b.param.count) * FPE_PARAM_BLOCK
        if end > pcache:
            diags.append(f"{where}: LDP range runs past pCache")
    d = b.data
    if d.opcode != DOp.NOP:
        if d.length < 1:
            diags.append(f"{where}: {d.opcode.name} length must be >= 1")
        if d.addr + d.length > words:
            diags.append(f"{where}: {d.opcode.name} range runs past regfile depth {words}")
    return diags


def _validate_hpe_bundle(b: VliwBundle, caps, where: str) -> list[str]:
    diags = []
    bank_words = getattr(caps, "bank_words", 1024)
    pcache = caps.pcache_bytes
    c = b.compute
    if c.opcode == COp.MM:
        if c.rows < 1:
            diags.append(f"{where}: MM needs rows >= 1")
        else:
            last = c.src + (c.rows - 1) * c.rstride
            if last >= bank_words:
                diags.append(f"{where}: MM source rows run past bank depth {bank_words}")
            if c.dst + c.rows * 4 > bank_words:
                diags.append(f"{where}: MM destination tile runs past bank depth")
        if (c.pblock + 1) * HPE_PARAM_BLOCK > pcache:
            diags.append(f"{where}: weight tile {c.pblock} runs past pCache")
    elif c.opcode in ACC_OPS:
        if c.length < 1:
            diags.append(f"{where}: {c.opcode.name} length must be >= 1")
        if c.abank == 0 and c.bbank == 0:
            diags.append(f"{where}: {c.opcode.name} has no enabled source")
        for name, bank, addr in (("a", c.abank, c.aaddr), ("b", c.bbank, c.baddr)):
            if bank and addr + c.length > bank_words:
                diags.append(f"{where}: {c.opcode.name} source {name} runs past bank depth")
        if not (1 <= c.dbank <= 3):
            diags.append(f"{where}: {c.opcode.name} needs a destination bank 1..3")
        out_words = c.length
        if c.opcode in (COp.ACCA, COp.ACCP):
            if c.act >= NUM_ACT_TABLES:
                diags.append(f"{where}: activation table {c.act} out of range")
            if c.length % 4:
                diags.append(f"{where}: {c.opcode.name} length must be a multiple of 4 words")
            out_words = c.length // 4
        if c.opcode == COp.ACCP:
            if not (2 <= c.window <= 4):
                diags.append(f"{where}: pooling window {c.window} not in 2..4")
            elif c.length % (4 * c.window):
                diags.append(f"{where}: ACCP length must cover whole pooling windows")
            else:
                out_words = c.length // (4 * c.window)
        if 1 <= c.dbank <= 3 and c.daddr + out_words > bank_words:
            diags.append(f"{where}: {c.opcode.name} destination runs past bank depth")
    if b.param.opcode == POp.LDP:
        if b.param.count < 1:
            diags.append(f"{where}: LDP count must be >= 1")
        end = (b.param.block + b.param.count) * HPE_PARAM_BLOCK
        if end > pcache:
            diags.append(f"{where}: LDP range runs past pCache")
    d = b.data
    if d.opcode != DOp.NOP:
        if not (1 <= d.bank <= 3):
            diags.append(f"{where}: {d.opcode.name} needs a bank 1..3")
        if d.length < 1:
            diags.append(f"{where}: {d.opcode.name} length must be >= 1")
        if d.addr + d.length > bank_words:
            diags.append(f"{where}: {d.opcode.name} range runs past bank depth {bank_words}")
        if d.opcode == DOp.STR and d.spread:
            diags.append(f"{where}: STR does not take a spread")
    return diags


# ---------------------------------------------------------------------------
# Assembly text
# ---------------------------------------------------------------------------

_NUM = r"(?:0[xX][0-9a-fA-F]+|\d+)"


def _int(tok: str) -> int:
    return int(tok, 0)


def _match(pattern: str, tok: str, line_no: int, what: str) -> tuple:
    m = re.fullmatch(pattern, tok.strip())
    if not m:
        raise AsmError(f"line {line_no}: bad {what} operand {tok.strip()!r}")
    return tuple(_int(g) for g in m.groups())


def _split_operands(text: str) -> list[str]:
    text = text.replace("->", ",")
    return [t for t in (s.strip() for s in text.split(",")) if t]


def _parse_region(tok: str, line_no: int) -> tuple[int, int]:
    if tok == "-":
        return 0, 0
    (bank, addr) = _match(rf"b({_NUM}):({_NUM})", tok, line_no, "bank region")
    return bank, addr


def _parse_compute(text: str, target: Target, line_no: int) -> ComputeOp:
    text = text.strip()
    if not text:
        return NOP_COMPUTE
    parts = text.split(None, 1)
    mnem = parts[0].upper()
    rest = parts[1] if len(parts) > 1 else ""
    ops = _split_operands(rest)
    simple = {"NOP": COp.NOP, "START": COp.START, "FIN": COp.FIN}
    if mnem in simple:
        if ops:
            raise AsmError(f"line {line_no}: {mnem} takes no operands")
        return ComputeOp(opcode=simple[mnem])

    if mnem in ("MV", "MVA", "MVAA"):
        if target != Target.FPE:
            raise AsmError(f"line {line_no}: {mnem} is an FPE instruction")
        if mnem == "MVAA":
            if len(ops) != 4:
                raise AsmError(f"line {line_no}: MVAA expects r, p, t -> o operands")
            (src,) = _match(rf"r({_NUM})", ops[0], line_no, "regfile word")
            (pb,) = _match(rf"p({_NUM})", ops[1], line_no, "param block")
            (act,) = _match(rf"t({_NUM})", ops[2], line_no, "table id")
            (dst,) = _match(rf"o({_NUM})", ops[3], line_no, "output slot")
            return ComputeOp(opcode=COp.MVAA, src=src, pblock=pb, act=act, dst=dst)
        if len(ops) != 2:
            raise AsmError(f"line {line_no}: {mnem} expects r, p operands")
        (src,) = _match(rf"r({_NUM})", ops[0], line_no, "regfile word")
        (pb,) = _match(rf"p({_NUM})", ops[1], line_no, "param block")
        return ComputeOp(opcode=COp[mnem], src=src, pblock=pb)

    if mnem == "MM":
        if target != Target.HPE:
            raise AsmError(f"line {line_no}: MM is an HPE instruction")
        if len(ops) != 5:
            raise AsmError(f"line {line_no}: MM expects p, w, l, s -> w operands")
        (pb,) = _match(rf"p({_NUM})", ops[0], line_no, "weight tile")
        (src,) = _match(rf"w({_NUM})", ops[1], line_no, "source word")
        (rows,) = _match(rf"l({_NUM})", ops[2], line_no, "row count")
        (rstride,) = _match(rf"s({_NUM})", ops[3], line_no, "row stride")
        (dst,) = _match(rf"w({_NUM})", ops[4], line_no, "destination word")
        return ComputeOp(opcode=COp.MM, pblock=pb, src=src, rows=rows, rstride=rstride, dst=dst)

    if mnem in ("ACC", "ACCA", "ACCP"):
        if target != Target.HPE:
            raise AsmError(f"line {line_no}: {mnem} is an HPE instruction")
        want = {"ACC": 4, "ACCA": 5, "ACCP": 6}[mnem]
        if len(ops) != want:
            raise AsmError(f"line {line_no}: {mnem} expects {want} operands")
        abank, aaddr = _parse_region(ops[0], line_no)
        bbank, baddr = _parse_region(ops[1], line_no)
        i = 2
        act = 0
        if mnem in ("ACCA", "ACCP"):
            (act,) = _match(rf"t({_NUM})", ops[i], line_no, "table id")
            i += 1
        (length,) = _match(rf"n({_NUM})", ops[i], line_no, "length")
        i += 1
        window = 0
        if mnem == "ACCP":
            (window,) = _match(rf"win({_NUM})", ops[i], line_no, "pool window")
            i += 1
        dbank, daddr = _parse_region(ops[i], line_no)
        return ComputeOp(
            opcode=COp[mnem],
            act=act,
            abank=abank,
            aaddr=aaddr,
            bbank=bbank,
            baddr=baddr,
            dbank=dbank,
            daddr=daddr,
            length=length,
            window=window,
        )

    raise AsmError(f"line {line_no}: unknown compute mnemonic {mnem!r}")


def _parse_param(text: str, line_no: int) -> ParamOp:
    text = text.strip()
    if not text or text.upper() == "NOP":
        return NOP_PARAM
    parts = text.split(None, 1)
    if parts[0].upper() != "LDP":
        raise AsmError(f"line {line_no}: param slot accepts only LDP/NOP, got {parts[0]!r}")
    ops = _split_operands(parts[1] if len(parts) > 1 else "")
    if len(ops) != 2:
        raise AsmError(f"line {line_no}: LDP expects k, n operands")
    (block,) = _match(rf"k({_NUM})", ops[0], line_no, "param block")
    (count,) = _match(rf"n({_NUM})", ops[1], line_no, "block count")
    return ParamOp(opcode=POp.LDP, block=block, count=count)


def _parse_data(text: str, target: Target, line_no: int) -> DataOp:
    text = text.strip()
    if not text or text.upper() == "NOP":
        return NOP_DATA
    parts = text.split(None, 1)
    mnem = parts[0].upper()
    if mnem not in ("LDR", "STR"):
        raise AsmError(f"line {line_no}: data slot accepts LDR/STR/NOP, got {parts[0]!r}")
    ops = _split_operands(parts[1] if len(parts) > 1 else "")
    op = DOp[mnem]
    if target == Target.FPE:
        if len(ops) != 2:
            raise AsmError(f"line {line_no}: {mnem} expects w, n operands")
        (addr,) = _match(rf"w({_NUM})", ops[0], line_no, "regfile word")
        (length,) = _match(rf"n({_NUM})", ops[1], line_no, "word count")
        return DataOp(opcode=op, addr=addr, length=length)
    if len(ops) not in (2, 3):
        raise AsmError(f"line {line_no}: {mnem} expects region, n [, sp] operands")
    bank, addr = _parse_region(ops[0], line_no)
    (length,) = _match(rf"n({_NUM})", ops[1], line_no, "word count")
    spread = 0
    if len(ops) == 3:
        if mnem == "STR":
            raise AsmError(f"line {line_no}: STR does not take a spread")
        (spread,) = _match(rf"sp({_NUM})", ops[2], line_no, "spread")
    return DataOp(opcode=op, addr=addr, length=length, bank=bank, spread=spread)


def assemble(
    text: str,
    target: Target,
    param_image: bytes = b"",
    act_tables: tuple[ActTable, ...] | None = None,
    cfg=None,
) -> ProgramImage:
    """Assemble source text (one bundle per line, slots separated by '|').

    Raises AsmError on syntax problems or when the resulting image fails
    validation (target mismatch, capacity overflow, missing FIN, ...).
    """
    bundles = []
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        slots = line.split("|")
        if len(slots) > 3:
            raise AsmError(f"line {line_no}: a bundle has at most three slots")
        compute = _parse_compute(slots[0], target, line_no)
        param = _parse_param(slots[1], line_no) if len(slots) > 1 else NOP_PARAM
        data = _parse_data(slots[2], target, line_no) if len(slots) > 2 else NOP_DATA
        bundles.append(VliwBundle(compute=compute, param=param, data=data))

    img = ProgramImage(
        target=target,
        bundles=tuple(bundles),
        param_image=bytes(param_image),
        act_tables=act_tables if act_tables is not None else default_act_tables(),
    )
    diags = validate(img, cfg)
    if diags:
        raise AsmError("; ".join(diags))
    return img


def _format_compute(c: ComputeOp) -> str:
    if c.opcode in (COp.NOP, COp.START, COp.FIN):
        return c.opcode.name
    if c.opcode in (COp.MV, COp.MVA):
        return f"{c.opcode.name} r{c.src}, p{c.pblock}"
    if c.opcode == COp.MVAA:
        return f"MVAA r{c.src}, p{c.pblock}, t{c.act} -> o{c.dst}"
    if c.opcode == COp.MM:
        return f"MM p{c.pblock}, w{c.src}, l{c.rows}, s{c.rstride} -> w{c.dst}"
    a = f"b{c.abank}:{c.aaddr}" if c.abank else "-"
    b = f"b{c.bbank}:{c.baddr}" if c.bbank else "-"
    d = f"b{c.dbank}:{c.daddr}"
    if c.opcode == COp.ACC:
        return f"ACC {a}, {b}, n{c.length} -> {d}"
    if c.opcode == COp.ACCA:
        return f"ACCA {a}, {b}, t{c.act}, n{c.length} -> {d}"
    return f"ACCP {a}, {b}, t{c.act}, n{c.length}, win{c.window} -> {d}"


def _format_data(d: DataOp, target: Target) -> str:
    if target == Target.FPE:
        return f"{d.opcode.name} w{d.addr}, n{d.length}"
    base = f"{d.opcode.name} b{d.bank}:{d.addr}, n{d.length}"
    if d.opcode == DOp.LDR and d.spread:
        base += f", sp{d.spread}"
    return base


def disassemble(img: ProgramImage) -> str:
    """Canonical assembly text; assembling it reproduces the bundles exactly."""
    lines = []
    for b in img.bundles:
        parts = [_format_compute(b.compute)]
        has_param = b.param.opcode != POp.NOP
        has_data = b.data.opcode != DOp.NOP
        if has_param or has_data:
            parts.append(f"LDP k{b.param.block}, n{b.param.count}" if has_param else "NOP")
        if has_data:
            parts.append(_format_data(b.data, img.target))
        lines.append(" | ".join(parts))
    return "\n".join(lines) + "\n"
