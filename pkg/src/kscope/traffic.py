"""Packet parsing, flow hashing, the traffic monitor and the query table.

The monitor sees every mirrored packet: the first packet of a flow is
dispatched to the fast inference path, and the packet that brings a flow's
count up to the elephant threshold is dispatched to the slow path, exactly
once per flow.  Flows are identified by a Toeplitz RSS hash over the
(src_ip, dst_ip, src_port, dst_port) tuple with the standard published
40-byte key; both the flow table and the query table are indexed by
hash mod 65536 with last-writer-wins on index collisions.

The query table is the only contact point with the forwarding plane: a
lookup costs exactly QUERY_CYCLES data-plane cycles whether or not a result
is present, and a slow-path result is never displaced by a fast-path one.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import NamedTuple

TABLE_SIZE = 65536
DEFAULT_THRESHOLD = 16
FIFO_DEPTH = 512
QUERY_CYCLES = 5

# Standard RSS hash key (40 bytes) as published with the RSS specification.
RSS_KEY = bytes(
    [
        0x6D, 0x5A, 0x56, 0xDA, 0x25, 0x5B, 0x0E, 0xC2,
        0x41, 0x67, 0x25, 0x3D, 0x43, 0xA3, 0x8F, 0xB0,
        0xD0, 0xCA, 0x2B, 0xCB, 0xAE, 0x7B, 0x30, 0xB4,
        0x77, 0xCB, 0x2D, 0xA3, 0x80, 0x30, 0xF2, 0x0C,
        0x6A, 0x42, 0xB7, 0x3B, 0xBE, 0xAC, 0x01, 0xFA,
    ]
)

ETHERTYPE_IPV4 = 0x0800
PROTO_TCP = 6
PROTO_UDP = 17


class FiveTuple(NamedTuple):
    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    protocol: int


@dataclass(frozen=True)
class PacketRecord:
    timestamp_ns: int
    tuple: FiveTuple
    wire_len: int
    payload: bytes  # transport payload, first 59 bytes kept

    def raw_input(self, length: int) -> bytes:
        """NN input bytes: src_port(2) | dst_port(2) | protocol(1) | payload."""
        if length not in (32, 64):
            raise ValueError("raw input length must be 32 or 64 bytes")
        head = struct.pack(">HHB", self.tuple.src_port, self.tuple.dst_port, self.tuple.protocol)
        body = self.payload[: length - 5]
        return head + body + bytes(length - 5 - len(body))


def parse_packet(frame: bytes, timestamp_ns: int) -> PacketRecord | None:
    """Extract the IPv4 five-tuple and payload bytes; None means skip."""
    if len(frame) < 14 + 20:
        return None
    ethertype = struct.unpack_from(">H", frame, 12)[0]
    if ethertype != ETHERTYPE_IPV4:
        return None
    ip = 14
    vi = frame[ip]
    if vi >> 4 != 4:
        return None
    ihl = (vi & 0xF) * 4
    if ihl < 20 or len(frame) < ip + ihl:
        return None
    protocol = frame[ip + 9]
    src_ip, dst_ip = struct.unpack_from(">II", frame, ip + 12)
    transport = ip + ihl
    src_port = dst_port = 0
    payload = b""
    if protocol == PROTO_TCP:
        if len(frame) < transport + 20:
            return None
        src_port, dst_port = struct.unpack_from(">HH", frame, transport)
        data_off = (frame[transport + 12] >> 4) * 4
        if data_off < 20 or len(frame) < transport + data_off:
            return None
        payload = frame[transport + data_off :]
    elif protocol == PROTO_UDP:
        if len(frame) < transport + 8:
            return None
        src_port, dst_port = struct.unpack_from(">HH", frame, transport)
        payload = frame[transport + 8 :]
    else:
        payload = frame[transport:]
    return PacketRecord(
        timestamp_ns=timestamp_ns,
        tuple=FiveTuple(src_ip, dst_ip, src_port, dst_port, protocol),
        wire_len=len(frame),
        payload=payload[:59],
    )


def _toeplitz_window(key: bytes, bit: int) -> int:
    """32-bit window of the key starting at bit offset `bit` (zero-extended)."""
    key_bits = int.from_bytes(key, "big")
    total = len(key) * 8
    word = key_bits << 32  # room to slide past the end
    return (word >> (total - bit)) & 0xFFFFFFFF


def _build_byte_tables(length: int, key: bytes) -> list[list[int]]:
    tables = []
    for pos in range(length):
        windows = [_toeplitz_window(key, pos * 8 + k) for k in range(8)]
        table = [0] * 256
        for value in range(256):
            h = 0
            for k in range(8):
                if value >> (7 - k) & 1:
                    h ^= windows[k]
            table[value] = h
        tables.append(table)
    return tables


_TOEPLITZ_TABLES: dict[int, list[list[int]]] = {}


def toeplitz_hash(data: bytes, key: bytes = RSS_KEY) -> int:
    """Toeplitz hash: XOR of the sliding 32-bit key window at every set bit.

    The hash is linear over GF(2), so per-byte lookup tables give the same
    result as the bit-serial definition.
    """
    if key is not RSS_KEY:
        return _toeplitz_slow(data, key)
    tables = _TOEPLITZ_TABLES.get(len(data))
    if tables is None:
        tables = _build_byte_tables(len(data), key)
        _TOEPLITZ_TABLES[len(data)] = tables
    result = 0
    for pos, byte in enumerate(data):
        result ^= tables[pos][byte]
    return result


def _toeplitz_slow(data: bytes, key: bytes) -> int:
    result = 0
    for pos, byte in enumerate(data):
        for k in range(8):
            if byte >> (7 - k) & 1:
                result ^= _toeplitz_window(key, pos * 8 + k)
    return result


def flow_hash(t: FiveTuple) -> int:
    """RSS input order: src_ip | dst_ip | src_port | dst_port, big-endian."""
    data = struct.pack(">IIHH", t.src_ip, t.dst_ip, t.src_port, t.dst_port)
    return toeplitz_hash(data)


def flow_index(h: int) -> int:
    return h % TABLE_SIZE


@dataclass
class FlowEntry:
    key_hash: int
    packet_count: int = 0
    first_seen: bool = True
    elephant_dispatched: bool = False


@dataclass
class FlowTable:
    threshold: int = DEFAULT_THRESHOLD
    entries: dict[int, FlowEntry] = field(default_factory=dict)
    collisions: int = 0

    def monitor_update(self, key_hash: int) -> str | None:
        """Count one packet; returns 'fast', 'slow' or None."""
        idx = flow_index(key_hash)
        entry = self.entries.get(idx)
        if entry is None or entry.key_hash != key_hash:
            if entry is not None:
                self.collisions += 1
            self.entries[idx] = FlowEntry(key_hash=key_hash, packet_count=1)
            return "fast"
        entry.packet_count += 1
        if entry.packet_count == self.threshold and not entry.elephant_dispatched:
            entry.elephant_dispatched = True
            return "slow"
        return None


@dataclass
class QueryEntry:
    key_hash: int
    label: int
    source: str  # "fast" | "slow"
    result_cycle: int


@dataclass
class QueryTable:
    entries: dict[int, QueryEntry] = field(default_factory=dict)
    collisions: int = 0

    def publish(self, key_hash: int, label: int, source: str, cycle: int) -> None:
        idx = flow_index(key_hash)
        cur = self.entries.get(idx)
        if cur is not None and cur.key_hash != key_hash:
            self.collisions += 1
        if cur is not None and cur.source == "slow" and source == "fast":
            return  # a slow result is never displaced by a fast one
        self.entries[idx] = QueryEntry(key_hash=key_hash, label=label, source=source, result_cycle=cycle)

    def query(self, key_hash: int) -> tuple[int | None, int]:
        """Returns (label or None, data-plane cycles charged: always 5)."""
        cur = self.entries.get(flow_index(key_hash))
        label = cur.label if cur is not None and cur.key_hash == key_hash else None
        return label, QUERY_CYCLES


@dataclass
class FifoQueue:
    depth: int = FIFO_DEPTH
    items: list = field(default_factory=list)
    enqueued: int = 0
    dropped: int = 0

    def push(self, item) -> bool:
        if len(self.items) >= self.depth:
            self.dropped += 1
            return False
        self.items.append(item)
        self.enqueued += 1
        return True

    def pop(self):
        return self.items.pop(0)

    def __len__(self) -> int:
        return len(self.items)


# ---------------------------------------------------------------------------
# pcap files
# ---------------------------------------------------------------------------

PCAP_MAGIC_US = 0xA1B2C3D4
PCAP_MAGIC_NS = 0xA1B23C4D


def write_pcap(packets: list[tuple[int, bytes]], nanosecond: bool = True) -> bytes:
    """Serialize (timestamp_ns, frame) pairs to classic pcap bytes."""
    magic = PCAP_MAGIC_NS if nanosecond else PCAP_MAGIC_US
    out = bytearray(struct.pack("<IHHiIII", magic, 2, 4, 0, 0, 65535, 1))
    div = 1 if nanosecond else 1000
    for ts_ns, frame in packets:
        sec, frac = divmod(ts_ns // div, 1_000_000_000 // div)
        out += struct.pack("<IIII", sec, frac, len(frame), len(frame))
        out += frame
    return bytes(out)


def read_pcap(raw: bytes) -> list[tuple[int, bytes]]:
    """Parse classic pcap bytes into (timestamp_ns, frame) pairs."""
    if len(raw) < 24:
        raise ValueError("truncated pcap header")
    (magic,) = struct.unpack_from("<I", raw, 0)
    endian = "<"
    if magic in (PCAP_MAGIC_US, PCAP_MAGIC_NS):
        nanos = magic == PCAP_MAGIC_NS
    else:
        (magic_be,) = struct.unpack_from(">I", raw, 0)
        if magic_be in (PCAP_MAGIC_US, PCAP_MAGIC_NS):
            endian = ">"
            nanos = magic_be == PCAP_MAGIC_NS
        else:
            raise ValueError(f"unknown pcap magic 0x{magic:08x}")
    scale = 1 if nanos else 1000
    pos = 24
    packets = []
    while pos + 16 <= len(raw):
        sec, frac, incl, _orig = struct.unpack_from(endian + "IIII", raw, pos)
        pos += 16
        if pos + incl > len(raw):
            raise ValueError("truncated pcap packet")
        packets.append((sec * 1_000_000_000 + frac * scale, raw[pos : pos + incl]))
        pos += incl
    return packets
