"""Engine: dispatch workflow, queueing, determinism, scaling, generator."""

import numpy as np
import pytest

from kscope import engine, reference
from kscope.engine import EngineConfig, gen_traffic, peak_search, preset_config, run_trace
from kscope.traffic import write_pcap


def make_cfg(tiny_fast, tiny_slow, n=1, **kw):
    return EngineConfig(name=f"{n}fpe", n_fpes=n, fast=tiny_fast[2], slow=tiny_slow[2], **kw)


def three_flow_trace():
    packets = []
    t = 0
    for fi, n in enumerate([20, 5, 1]):
        for _ in range(n):
            packets.append(
                (t, engine._tcp_frame(0x0A000001 + fi, 0xC0A80001, 1000 + fi, 443, bytes([fi]) * 40))
            )
            t += 5000
    return write_pcap(packets)


def test_three_flows_dispatch_semantics(tiny_fast, tiny_slow):
    cfg = make_cfg(tiny_fast, tiny_slow)
    rep = run_trace(cfg, three_flow_trace())
    assert rep.fast_dispatches == 3
    assert rep.slow_dispatches == 1  # only the 20-packet flow crosses 16
    assert rep.completed == 4
    assert rep.total_drops == 0
    flows = list(rep.flows.values())
    slow_labeled = [f for f in flows if f.slow_label is not None]
    assert len(slow_labeled) == 1


def test_slow_label_overwrites_fast_in_query_table(tiny_fast, tiny_slow):
    cfg = make_cfg(tiny_fast, tiny_slow)
    rep = run_trace(cfg, three_flow_trace())
    elephant = next(f for f in rep.flows.values() if f.slow_label is not None)
    from kscope.traffic import flow_index

    entry = rep.query_table.entries[flow_index(elephant.flow_hash)]
    assert entry.source == "slow"
    assert entry.label == elephant.slow_label


def test_single_flow_idle_latency_formula(tiny_fast, tiny_slow):
    cfg = make_cfg(tiny_fast, tiny_slow)
    pcap = write_pcap([(0, engine._tcp_frame(0x0A000001, 0xC0A80001, 1, 2, b"z" * 30))])
    rep = run_trace(cfg, pcap)
    bundles = len(cfg.fast.image.bundles)
    want_ns = (bundles + 6) / cfg.freq_hz * 1e9
    assert rep.fast_latencies_ns == [pytest.approx(want_ns)]


def test_labels_match_oracle(tiny_fast, tiny_slow, rng):
    spec, w, prog = tiny_fast
    cfg = make_cfg(tiny_fast, tiny_slow)
    packets = []
    for fi in range(20):
        payload = rng.integers(0, 256, 48, dtype=np.uint8).tobytes()
        packets.append((fi * 10000, engine._tcp_frame(0x0A000100 + fi, 0xC0A80001, 7000 + fi, 80, payload)))
    rep = run_trace(cfg, write_pcap(packets))
    from kscope.traffic import flow_hash, parse_packet

    for ts, frame in packets:
        pkt = parse_packet(frame, ts)
        want = reference.classify(spec, w, pkt.raw_input(spec.input_len))
        assert rep.flows[flow_hash(pkt.tuple)].fast_label == want


def test_determinism(tiny_fast, tiny_slow):
    cfg = make_cfg(tiny_fast, tiny_slow, n=4)
    pcap, _ = gen_traffic(500, seed=3, profile=engine.ISCX_PROFILE, start_period_ns=200)
    a = run_trace(cfg, pcap).to_text(flow_table=True)
    b = run_trace(cfg, pcap).to_text(flow_table=True)
    assert a == b


def test_burst_latency_improves_with_more_fpes(tiny_fast, tiny_slow):
    # 1000 near-simultaneous flows: the 4-FPE config should show strictly
    # lower p99 fast-path latency than the single-FPE config.
    pcap, _ = gen_traffic(1000, seed=4, start_period_ns=2)
    lat = {}
    for n in (1, 4):
        rep = run_trace(make_cfg(tiny_fast, tiny_slow, n=n), pcap)
        s = sorted(rep.fast_latencies_ns)
        lat[n] = s[int(0.99 * len(s))]
    assert lat[4] < lat[1]


def test_work_conservation(tiny_fast, tiny_slow):
    # with a backlog on one FPE, completions are spaced exactly one service
    # time apart: the PE is never idle while its queue holds work
    cfg = make_cfg(tiny_fast, tiny_slow)
    period = 4  # one engine cycle at 250 MHz
    pcap, _ = gen_traffic(50, seed=5, start_period_ns=period)
    rep = run_trace(cfg, pcap)
    service = cfg.fast.predicted_cycles / cfg.freq_hz * 1e9
    done = [lat + i * period for i, lat in enumerate(rep.fast_latencies_ns)]
    gaps = {round(b - a, 3) for a, b in zip(done, done[1:])}
    assert gaps == {round(service, 3)}


def test_drop_accounting(tiny_fast, tiny_slow):
    cfg = make_cfg(tiny_fast, tiny_slow, n=1)
    pcap, _ = gen_traffic(2000, seed=6, start_period_ns=2)  # way past capacity
    rep = run_trace(cfg, pcap)
    assert rep.total_drops > 0
    assert rep.fast_enqueued + sum(rep.fast_drops) == rep.fast_dispatches
    assert rep.slow_enqueued + rep.slow_drops == rep.slow_dispatches


def test_forwarding_model_is_constant(tiny_fast, tiny_slow):
    # data-plane charge does not depend on drops or queue depth
    cfg = make_cfg(tiny_fast, tiny_slow)
    light, _ = gen_traffic(10, seed=7, start_period_ns=100000)
    heavy, _ = gen_traffic(2000, seed=7, start_period_ns=2)
    r1, r2 = run_trace(cfg, light), run_trace(cfg, heavy)
    assert r1.query_latency_ns == r2.query_latency_ns
    assert abs(r1.query_latency_ns - 15.5) <= 0.1


def test_gen_traffic_deterministic_and_distinct():
    p1, s1 = gen_traffic(100, seed=9)
    p2, s2 = gen_traffic(100, seed=9)
    assert p1 == p2 and s1 == s2
    assert s1["packets"] == 100  # uniform: one packet per flow
    r1, _ = gen_traffic(100, seed=10, profile=engine.ISCX_PROFILE)
    r2, _ = gen_traffic(100, seed=11, profile=engine.ISCX_PROFILE)
    assert r1 != r2


def test_gen_traffic_elephant_profile_shares():
    _, stats = gen_traffic(2000, seed=11, profile=engine.ISCX_PROFILE)
    assert abs(stats["elephant_flow_share"] - 0.10) < 0.03
    assert abs(stats["elephant_byte_share"] - 0.90) < 0.03


def test_peak_scaling_and_freq_doubling(tiny_fast, tiny_slow):
    peaks = {}
    for n in (1, 2):
        cfg = make_cfg(tiny_fast, tiny_slow, n=n)
        peaks[n] = peak_search(cfg, flows=3000)["peak_fps"]
    assert peaks[2] >= peaks[1]

    base = make_cfg(tiny_fast, tiny_slow, n=1, freq_hz=250_000_000)
    fast2 = make_cfg(tiny_fast, tiny_slow, n=1, freq_hz=500_000_000)
    # search lattice scales with the clock so the rescaling is exact
    r1 = peak_search(base, flows=3000, granularity_ns=2)
    r2 = peak_search(fast2, flows=3000, granularity_ns=1)
    assert r2["peak_fps"] == 2 * r1["peak_fps"]


def test_preset_names():
    import pytest

    with pytest.raises(ValueError, match="unknown preset"):
        preset_config("k2fpe", None, None)
    assert engine.PRESETS == {"kbase": 1, "k4fpe": 4, "k8fpe": 8}


def test_single_fpe_drops_under_25k_flow_burst(mlp_e_prog, tiny_slow):
    # a 25k-flow burst arriving far above one FPE's service rate overflows
    # its 512-deep queue, while the 8-FPE configuration absorbs it
    pcap, _ = gen_traffic(25000, seed=25, start_period_ns=100)
    kbase = EngineConfig(name="kbase", n_fpes=1, fast=mlp_e_prog, slow=tiny_slow[2])
    k8 = EngineConfig(name="k8fpe", n_fpes=8, fast=mlp_e_prog, slow=tiny_slow[2])
    r1 = run_trace(kbase, pcap)
    r8 = run_trace(k8, pcap)
    assert r1.total_drops > 0
    assert r8.total_drops == 0
    assert r1.total_drops > r8.total_drops


def test_pe_fault_surfaces_in_report_and_exit_code(tiny_fast, tiny_slow, monkeypatch):
    # static validation makes runtime faults unreachable from well-formed
    # images, so inject one to prove the surfacing plumbing: the PE dies,
    # the run completes, the report carries the fault, the CLI exits 1
    from kscope.fpe import PeFault

    def boom(self, raw):
        raise PeFault("pc 1: injected fault")

    monkeypatch.setattr(engine._Pe, "infer", boom)
    cfg = make_cfg(tiny_fast, tiny_slow)
    pcap, _ = gen_traffic(5, seed=55)
    rep = run_trace(cfg, pcap)
    assert rep.faults and "injected fault" in rep.faults[0]
    assert rep.completed == 0
    assert "faults count=1" in rep.to_text()


def test_ustc_profile_shares():
    _, stats = gen_traffic(4000, seed=5, profile=engine.USTC_PROFILE)
    assert abs(stats["elephant_flow_share"] - 0.066) < 0.03
    assert abs(stats["elephant_byte_share"] - 0.844) < 0.03


def test_preset_clock_rates(tiny_fast, tiny_slow):
    cfg = preset_config("kbase", tiny_fast[2], tiny_slow[2])
    assert cfg.freq_hz == 286_000_000
    cfg = preset_config("k8fpe", tiny_fast[2], tiny_slow[2], clock="asic")
    assert cfg.freq_hz == 800_000_000
    # cycle counts and labels are frequency-independent; only wall time moves
    pcap, _ = gen_traffic(50, seed=13, profile=engine.ISCX_PROFILE)
    slow_run = run_trace(preset_config("kbase", tiny_fast[2], tiny_slow[2]), pcap)
    fast_run = run_trace(preset_config("kbase", tiny_fast[2], tiny_slow[2], clock="asic"), pcap)
    assert {h: r.fast_label for h, r in slow_run.flows.items()} == {
        h: r.fast_label for h, r in fast_run.flows.items()
    }
    assert min(slow_run.fast_latencies_ns) > min(fast_run.fast_latencies_ns)
