"""Top-level co-processor simulation over packet traces.

The engine instantiates N FPEs (fast path) plus one HPE (slow path), replays
a trace through the traffic monitor, routes dispatches through per-PE FIFO
queues (shortest queue first, lowest index on ties) and produces a
SimReport.  PE service times are the deterministic program cycle counts, so
the simulation is event driven: queues and completions are evaluated at
integer engine-clock cycles derived from packet timestamps.

The forwarding plane itself is modeled only as the query-table charge:
every forwarded packet pays exactly QUERY_CYCLES data-plane cycles at the
data-plane frequency, independent of anything the inference path does.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass, field

import numpy as np

from . import fpe as fpe_sim
from . import hpe as hpe_sim
from .compiler import CompiledProgram
from .fpe import PeFault, argmax
from .isa import Target
from .traffic import (
    FIFO_DEPTH,
    QUERY_CYCLES,
    FifoQueue,
    FlowTable,
    QueryTable,
    flow_hash,
    parse_packet,
    read_pcap,
    write_pcap,
)

PRESETS = {"kbase": 1, "k4fpe": 4, "k8fpe": 8}

DP_FREQ_HZ = 322_000_000
FPGA_FREQ_HZ = 250_000_000

# Measured clock rates of the named builds: the FPGA versions close timing
# at 286/250/250 MHz, the 28 nm ASIC library at 870/833/800 MHz.
PRESET_FREQS_HZ = {
    "fpga": {"kbase": 286_000_000, "k4fpe": 250_000_000, "k8fpe": 250_000_000},
    "asic": {"kbase": 870_000_000, "k4fpe": 833_000_000, "k8fpe": 800_000_000},
}


@dataclass(frozen=True)
class EngineConfig:
    name: str
    n_fpes: int
    fast: CompiledProgram
    slow: CompiledProgram
    freq_hz: int = FPGA_FREQ_HZ
    dp_freq_hz: int = DP_FREQ_HZ
    threshold: int = 16
    queue_depth: int = FIFO_DEPTH

    def __post_init__(self) -> None:
        if self.n_fpes < 1:
            raise ValueError("need at least one FPE")
        if self.fast.image.target != Target.FPE:
            raise ValueError("fast program must target the FPE")
        if self.slow.image.target != Target.HPE:
            raise ValueError("slow program must target the HPE")


def preset_config(
    name: str, fast: CompiledProgram, slow: CompiledProgram, clock: str = "fpga", **kw
) -> EngineConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}, expected one of {sorted(PRESETS)}")
    kw.setdefault("freq_hz", PRESET_FREQS_HZ[clock][name])
    return EngineConfig(name=name, n_fpes=PRESETS[name], fast=fast, slow=slow, **kw)


@dataclass
class FlowRecord:
    flow_hash: int
    fast_label: int | None = None
    slow_label: int | None = None
    fast_latency_ns: float | None = None
    slow_latency_ns: float | None = None


@dataclass
class SimReport:
    config: dict
    parsed: int = 0
    skipped: int = 0
    fast_dispatches: int = 0
    slow_dispatches: int = 0
    fast_enqueued: int = 0
    slow_enqueued: int = 0
    fast_drops: list[int] = field(default_factory=list)
    slow_drops: int = 0
    flow_collisions: int = 0
    query_collisions: int = 0
    stall_cycles: int = 0
    faults: list[str] = field(default_factory=list)
    fast_latencies_ns: list[float] = field(default_factory=list)
    slow_latencies_ns: list[float] = field(default_factory=list)
    flows: dict[int, FlowRecord] = field(default_factory=dict)
    duration_ns: int = 0
    wire_bytes: int = 0
    query_table: QueryTable | None = None

    @property
    def completed(self) -> int:
        return len(self.fast_latencies_ns) + len(self.slow_latencies_ns)

    @property
    def total_drops(self) -> int:
        return sum(self.fast_drops) + self.slow_drops

    @property
    def throughput_fps(self) -> float:
        if self.duration_ns <= 0:
            return 0.0
        return self.completed / (self.duration_ns / 1e9)

    @property
    def throughput_gbps(self) -> float:
        if self.duration_ns <= 0:
            return 0.0
        return self.wire_bytes * 8 / (self.duration_ns / 1e9) / 1e9

    @property
    def query_latency_ns(self) -> float:
        return QUERY_CYCLES / self.config["dp_freq_hz"] * 1e9

    def to_text(self, flow_table: bool = False) -> str:
        def pct(values: list[float], q: float) -> float:
            if not values:
                return 0.0
            s = sorted(values)
            return s[min(len(s) - 1, int(q * len(s)))]

        c = self.config
        lines = [
            "kscope-report 1",
            f"config name={c['name']} fpes={c['n_fpes']} freq_hz={c['freq_hz']}"
            f" dp_freq_hz={c['dp_freq_hz']} threshold={c['threshold']}"
            f" queue_depth={c['queue_depth']}",
            f"packets parsed={self.parsed} skipped={self.skipped} wire_bytes={self.wire_bytes}",
            f"dispatch fast={self.fast_dispatches} slow={self.slow_dispatches}",
            f"queues fast_enqueued={self.fast_enqueued} slow_enqueued={self.slow_enqueued}"
            f" fast_drops={sum(self.fast_drops)} slow_drops={self.slow_drops}"
            f" fast_drops_per_queue={','.join(str(d) for d in self.fast_drops)}",
            f"collisions flow={self.flow_collisions} query={self.query_collisions}",
            f"forwarding query_cycles={QUERY_CYCLES} query_ns={self.query_latency_ns:.3f}",
            f"latency_fast p50_ns={pct(self.fast_latencies_ns, 0.5):.1f}"
            f" p99_ns={pct(self.fast_latencies_ns, 0.99):.1f}"
            f" max_ns={max(self.fast_latencies_ns, default=0):.1f}",
            f"latency_slow p50_ns={pct(self.slow_latencies_ns, 0.5):.1f}"
            f" p99_ns={pct(self.slow_latencies_ns, 0.99):.1f}"
            f" max_ns={max(self.slow_latencies_ns, default=0):.1f}",
            f"throughput inferences={self.completed} fps={self.throughput_fps:.1f}"
            f" mips={self.throughput_fps / 1e6:.4f} gbps={self.throughput_gbps:.4f}",
            f"stalls hpe_cycles={self.stall_cycles}",
            f"faults count={len(self.faults)}",
        ]
        for f in self.faults:
            lines.append(f"fault {f}")
        if flow_table:
            for h, rec in sorted(self.flows.items()):
                lines.append(
                    f"flow 0x{h:08x} fast={rec.fast_label} slow={rec.slow_label}"
                    f" fast_ns={rec.fast_latency_ns} slow_ns={rec.slow_latency_ns}"
                )
        return "\n".join(lines) + "\n"


class _Pe:
    """One process element: a queue, a loaded program and a result cache."""

    def __init__(self, kind: str, prog: CompiledProgram, depth: int):
        self.kind = kind
        self.prog = prog
        self.queue = FifoQueue(depth=depth)
        self.busy_until = -1
        self.running = None  # (flow_hash, enqueue_cycle)
        self.dead = False
        if kind == "fast":
            self.state = fpe_sim.load_program(prog.image)
        else:
            self.state = hpe_sim.load_program(prog.image)
        self.cache: dict[bytes, tuple[int, int, int]] = {}

    def infer(self, raw: bytes) -> tuple[int, int, int]:
        """(label, cycles, stall_cycles) for one input, memoized."""
        hit = self.cache.get(raw)
        if hit is not None:
            return hit
        if self.kind == "fast":
            out, cycles = fpe_sim.run_inference(self.state, raw, self.prog.input_len)
            stalls = 0
        else:
            out, cycles, stalls = hpe_sim.run_inference(self.state, raw, self.prog.input_len)
        label = argmax(out)
        result = (label, cycles, stalls)
        self.cache[raw] = result
        return result


def run_trace(cfg: EngineConfig, pcap_bytes: bytes) -> SimReport:
    """Replay one trace; deterministic for identical (config, trace) pairs."""
    packets = read_pcap(pcap_bytes)
    return run_packets(cfg, packets)


def run_packets(cfg: EngineConfig, packets: list[tuple[int, bytes]]) -> SimReport:
    report = SimReport(
        config={
            "name": cfg.name,
            "n_fpes": cfg.n_fpes,
            "freq_hz": cfg.freq_hz,
            "dp_freq_hz": cfg.dp_freq_hz,
            "threshold": cfg.threshold,
            "queue_depth": cfg.queue_depth,
        }
    )
    flow_table = FlowTable(threshold=cfg.threshold)
    query_table = QueryTable()
    fpes = [_Pe("fast", cfg.fast, cfg.queue_depth) for _ in range(cfg.n_fpes)]
    hpe = _Pe("slow", cfg.slow, cfg.queue_depth)
    all_pes = fpes + [hpe]

    events: list[tuple[int, int, int, int]] = []  # (cycle, flow_hash, seq, pe_index)
    seq = 0

    def to_cycle(ts_ns: int) -> int:
        return ts_ns * cfg.freq_hz // 1_000_000_000

    def try_start(pe: _Pe, pe_idx: int, now: int) -> None:
        nonlocal seq
        if pe.dead or pe.running is not None or not len(pe.queue):
            return
        raw, fhash, enq = pe.queue.pop()
        start = max(now, pe.busy_until)
        try:
            label, cycles, stalls = pe.infer(raw)
        except PeFault as e:
            pe.dead = True
            report.faults.append(f"{pe.kind} pe{pe_idx}: {e}")
            return
        done = start + cycles
        pe.running = (fhash, enq, label, stalls)
        pe.busy_until = done
        heapq.heappush(events, (done, fhash, seq, pe_idx))
        seq += 1

    def complete(pe: _Pe, pe_idx: int, now: int) -> None:
        fhash, enq, label, stalls = pe.running
        pe.running = None
        latency_ns = (now - enq) / cfg.freq_hz * 1e9
        rec = report.flows.setdefault(fhash, FlowRecord(flow_hash=fhash))
        if pe.kind == "fast":
            rec.fast_label = label
            rec.fast_latency_ns = latency_ns
            report.fast_latencies_ns.append(latency_ns)
            query_table.publish(fhash, label, "fast", now)
        else:
            rec.slow_label = label
            rec.slow_latency_ns = latency_ns
            report.slow_latencies_ns.append(latency_ns)
            report.stall_cycles += stalls
            query_table.publish(fhash, label, "slow", now)
        try_start(pe, pe_idx, now)

    def drain(until_cycle: int | None) -> None:
        while events and (until_cycle is None or events[0][0] <= until_cycle):
            cyc, _h, _s, pe_idx = heapq.heappop(events)
            complete(all_pes[pe_idx], pe_idx, cyc)

    ordered = sorted(enumerate(packets), key=lambda ip: (ip[1][0], ip[0]))
    first_ts = ordered[0][1][0] if ordered else 0
    last_ts = first_ts
    for _, (ts_ns, frame) in ordered:
        pkt = parse_packet(frame, ts_ns)
        if pkt is None:
            report.skipped += 1
            continue
        report.parsed += 1
        report.wire_bytes += pkt.wire_len
        last_ts = max(last_ts, ts_ns)
        now = to_cycle(ts_ns)
        drain(now)

        fhash = flow_hash(pkt.tuple)
        decision = flow_table.monitor_update(fhash)
        query_table.query(fhash)  # forwarding-side lookup, constant charge

        if decision == "fast":
            report.fast_dispatches += 1
            t_idx = min(range(cfg.n_fpes), key=lambda i: (len(fpes[i].queue), i))
            target = fpes[t_idx]
            if target.queue.push((pkt.raw_input(cfg.fast.input_len), fhash, now)):
                report.fast_enqueued += 1
                try_start(target, t_idx, now)
        elif decision == "slow":
            report.slow_dispatches += 1
            if hpe.queue.push((pkt.raw_input(cfg.slow.input_len), fhash, now)):
                report.slow_enqueued += 1
                try_start(hpe, cfg.n_fpes, now)

    drain(None)

    report.fast_drops = [pe.queue.dropped for pe in fpes]
    report.slow_drops = hpe.queue.dropped
    report.flow_collisions = flow_table.collisions
    report.query_collisions = query_table.collisions
    report.duration_ns = max(1, last_ts - first_ts) if report.parsed else 0
    report.query_table = query_table
    return report


# ---------------------------------------------------------------------------
# Synthetic traffic
# ---------------------------------------------------------------------------

def _tcp_frame(src_ip: int, dst_ip: int, sport: int, dport: int, payload: bytes) -> bytes:
    eth = b"\x02\x00\x00\x00\x00\x01" + b"\x02\x00\x00\x00\x00\x02" + struct.pack(">H", 0x0800)
    total = 20 + 20 + len(payload)
    ip = struct.pack(">BBHHHBBHII", 0x45, 0, total, 0, 0, 64, 6, 0, src_ip, dst_ip)
    tcp = struct.pack(">HHIIBBHHH", sport, dport, 0, 0, 5 << 4, 0x18, 8192, 0, 0)
    return eth + ip + tcp + payload


@dataclass(frozen=True)
class TrafficProfile:
    """Packets-per-flow and size mix for the generator."""

    elephant_frac: float = 0.0
    elephant_pkts: tuple[int, int] = (24, 40)    # inclusive range
    elephant_payload: tuple[int, int] = (800, 1000)
    mouse_pkts: tuple[int, int] = (1, 1)
    mouse_payload: tuple[int, int] = (64, 64)
    vary_content: bool = True  # False: same ports/payload on every flow


UNIFORM_PROFILE = TrafficProfile(vary_content=False)
ISCX_PROFILE = TrafficProfile(  # ~10% elephant flows carrying ~90% of bytes
    elephant_frac=0.10,
    elephant_pkts=(24, 40),
    elephant_payload=(800, 1000),
    mouse_pkts=(1, 3),
    mouse_payload=(60, 200),
)
USTC_PROFILE = TrafficProfile(  # ~6.6% elephant flows carrying ~84% of bytes
    elephant_frac=0.066,
    elephant_pkts=(24, 36),
    elephant_payload=(750, 950),
    mouse_pkts=(1, 3),
    mouse_payload=(60, 200),
)


def gen_traffic(
    flows: int,
    seed: int,
    profile: TrafficProfile = UNIFORM_PROFILE,
    start_period_ns: int = 1000,
    intra_gap_ns: int = 2000,
    unique_flow_index: bool = False,
) -> tuple[bytes, dict]:
    """Deterministic synthetic trace; same seed, same bytes.

    Returns (pcap bytes, stats).  Stats include the achieved elephant flow
    and byte shares so profile calibration is observable.  With
    unique_flow_index the generator skips source addresses whose flow hash
    would land on an occupied table index, giving collision-free traces for
    controlled workflow experiments (flows must stay well under 65536).
    """
    if flows < 1 or start_period_ns < 1:
        raise ValueError("need at least one flow and a positive period")
    if unique_flow_index and flows > 50000:
        raise ValueError("unique_flow_index supports at most 50000 flows")
    rng = np.random.default_rng(seed)
    packets: list[tuple[int, bytes]] = []
    elephant_flows = 0
    elephant_bytes = 0
    total_bytes = 0
    used_indices: set[int] = set()
    next_ip = 0x0A000001
    for f in range(flows):
        dst_ip = 0xC0A80001
        if profile.vary_content:
            sport = 1024 + (f * 7 % 60000)
        else:
            sport = 1024
        dport = 443
        src_ip = next_ip
        if unique_flow_index:
            from .traffic import FiveTuple, flow_index

            while flow_index(flow_hash(FiveTuple(src_ip, dst_ip, sport, dport, 6))) in used_indices:
                src_ip += 1
            used_indices.add(flow_index(flow_hash(FiveTuple(src_ip, dst_ip, sport, dport, 6))))
        next_ip = src_ip + 1
        is_elephant = profile.elephant_frac > 0 and rng.random() < profile.elephant_frac
        if is_elephant:
            n = int(rng.integers(profile.elephant_pkts[0], profile.elephant_pkts[1] + 1))
            size = int(rng.integers(profile.elephant_payload[0], profile.elephant_payload[1] + 1))
            elephant_flows += 1
        else:
            n = int(rng.integers(profile.mouse_pkts[0], profile.mouse_pkts[1] + 1))
            size = int(rng.integers(profile.mouse_payload[0], profile.mouse_payload[1] + 1))
        if profile.vary_content:
            payload = rng.integers(0, 256, size, dtype=np.uint8).tobytes()
        else:
            payload = bytes((0x5A + i) & 0xFF for i in range(size))
        start = f * start_period_ns
        frame = _tcp_frame(src_ip, dst_ip, sport, dport, payload)
        for j in range(n):
            packets.append((start + j * intra_gap_ns, frame))
            total_bytes += len(frame)
            if is_elephant:
                elephant_bytes += len(frame)
    packets.sort(key=lambda p: p[0])
    stats = {
        "flows": flows,
        "packets": len(packets),
        "elephant_flows": elephant_flows,
        "elephant_flow_share": elephant_flows / flows,
        "elephant_byte_share": elephant_bytes / total_bytes if total_bytes else 0.0,
        "total_bytes": total_bytes,
    }
    return write_pcap(packets, nanosecond=True), stats


# ---------------------------------------------------------------------------
# Peak no-drop search
# ---------------------------------------------------------------------------

def peak_search(
    cfg: EngineConfig,
    flows: int = 8000,
    seed: int = 1,
    granularity_ns: int = 2,
    max_period_ns: int = 1 << 21,
) -> dict:
    """Largest uniform flow rate with zero inference-path drops.

    Binary search over the flow inter-arrival period (multiples of
    granularity_ns).  Drop behavior is monotone in the period, which is
    asserted at the bracket endpoints.
    """

    def drops_at(period: int) -> int:
        pcap, _ = gen_traffic(flows, seed=seed, profile=UNIFORM_PROFILE, start_period_ns=period)
        return run_trace(cfg, pcap).total_drops

    lo = granularity_ns  # fastest probed rate
    hi = max_period_ns
    if drops_at(hi):
        raise RuntimeError("no zero-drop rate found inside the search bracket")
    if drops_at(lo) == 0:
        best = lo
    else:
        # invariant: drops at lo, none at hi
        while hi - lo > granularity_ns:
            mid = (lo + hi) // 2 // granularity_ns * granularity_ns
            if mid in (lo, hi):
                break
            if drops_at(mid):
                lo = mid
            else:
                hi = mid
        best = hi
    fps = 1e9 / best
    return {"period_ns": best, "peak_fps": fps, "flows": flows}
