"""Command-line entry point: assembler, compiler, oracle, traffic and runs.

Subcommands:
  asm          assemble VLIW text into a program image
  disasm       disassemble a program image back to text
  compile      lower a model + weights file into a program image
  oracle       reference inference of a model over hex-encoded inputs
  gen-traffic  write a deterministic synthetic pcap
  run          replay a pcap through a co-processor configuration
  peak         search the largest zero-drop flow rate

Exit codes: 0 success, 1 runtime failure (including PE faults), 2 usage.
Set KSCOPE_TRACE=1 for per-cycle PE traces on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import engine, fpe, hpe, isa, reference
from .compiler import CompiledProgram, compile_model, predict_hpe_cycles
from .fix8 import build_act_table
from .isa import DOp, Target
from .models import load_weights, model_from_text


def _target(name: str) -> Target:
    return Target.FPE if name.lower() == "fpe" else Target.HPE


def _image_input_len(img: isa.ProgramImage) -> int:
    """Packet bytes a program consumes: total LDR stream take minus the constant word."""
    consumed = 0
    for b in img.bundles:
        d = b.data
        if d.opcode == DOp.LDR:
            per_word = d.spread if (img.target == Target.HPE and d.spread) else isa.WORD_BYTES
            consumed += d.length * per_word
    return max(0, consumed - isa.WORD_BYTES)


def program_from_image(img: isa.ProgramImage) -> CompiledProgram:
    """Wrap a bare image with the metadata the engine needs."""
    diags = isa.validate(img)
    if diags:
        raise ValueError("program failed validation: " + "; ".join(diags))
    if img.target == Target.FPE:
        predicted = len(img.bundles) + fpe.DEFAULT_FPE_CONFIG.pipeline_depth
    else:
        predicted = predict_hpe_cycles(img.bundles, hpe.DEFAULT_HPE_CONFIG)
    out_words = sum(b.data.length for b in img.bundles if b.data.opcode == DOp.STR)
    return CompiledProgram(
        image=img,
        predicted_cycles=predicted,
        input_len=_image_input_len(img),
        class_count=0,  # labels come from argmax over the padded output words
        output_words=out_words,
    )


def _load_program_file(path: str) -> CompiledProgram:
    return program_from_image(isa.decode_binary(Path(path).read_bytes()))


def _cmd_asm(args) -> int:
    target = _target(args.target)
    tables = tuple(build_act_table(kind) for kind in args.act) if args.act else None
    param = Path(args.params).read_bytes() if args.params else b""
    img = isa.assemble(Path(args.input).read_text(), target, param_image=param, act_tables=tables)
    Path(args.output).write_bytes(isa.encode_binary(img))
    print(f"assembled {len(img.bundles)} bundles -> {args.output}")
    return 0


def _cmd_disasm(args) -> int:
    img = isa.decode_binary(Path(args.input).read_bytes())
    text = isa.disassemble(img)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_compile(args) -> int:
    spec = model_from_text(Path(args.model).read_text())
    weights = load_weights(Path(args.weights).read_bytes())
    prog = compile_model(spec, weights)
    Path(args.output).write_bytes(isa.encode_binary(prog.image))
    print(
        f"compiled {spec.target.name} program: {len(prog.image.bundles)} bundles, "
        f"{prog.layout['param_bytes']} param bytes, predicted {prog.predicted_cycles} cycles"
    )
    if args.disasm:
        sys.stdout.write(isa.disassemble(prog.image))
    return 0


def _cmd_oracle(args) -> int:
    spec = model_from_text(Path(args.model).read_text())
    weights = load_weights(Path(args.weights).read_bytes())
    inputs: list[bytes] = []
    if args.input:
        inputs.append(bytes.fromhex(args.input))
    if args.inputs:
        for line in Path(args.inputs).read_text().splitlines():
            line = line.strip()
            if line:
                inputs.append(bytes.fromhex(line))
    if not inputs:
        print("oracle: provide --input HEX or --inputs FILE", file=sys.stderr)
        return 2
    results = []
    for x in inputs:
        logits = reference.forward(spec, weights, x)
        results.append({"label": fpe.argmax(logits), "logits": logits.elems.tobytes().hex()})
    if args.json:
        json.dump(results, sys.stdout)
        sys.stdout.write("\n")
    else:
        for r in results:
            print(f"label={r['label']} logits={r['logits']}")
    return 0


def _cmd_gen_traffic(args) -> int:
    profile = {
        "uniform": engine.UNIFORM_PROFILE,
        "iscx": engine.ISCX_PROFILE,
        "ustc": engine.USTC_PROFILE,
    }[args.profile]
    pcap, stats = engine.gen_traffic(
        flows=args.flows,
        seed=args.seed,
        profile=profile,
        start_period_ns=args.period_ns,
        intra_gap_ns=args.gap_ns,
    )
    Path(args.output).write_bytes(pcap)
    print(
        f"wrote {stats['packets']} packets / {stats['flows']} flows to {args.output}; "
        f"elephant flow share {stats['elephant_flow_share']:.2%}, "
        f"byte share {stats['elephant_byte_share']:.2%}"
    )
    return 0


def _engine_config(args) -> engine.EngineConfig:
    fast = _load_program_file(args.fast)
    slow = _load_program_file(args.slow)
    n = engine.PRESETS[args.preset] if args.preset else args.fpes
    if args.freq_hz is not None:
        freq = int(args.freq_hz)
    elif args.preset:
        freq = engine.PRESET_FREQS_HZ[args.clock][args.preset]
    else:
        freq = engine.PRESET_FREQS_HZ[args.clock]["k4fpe"]
    return engine.EngineConfig(
        name=args.preset or f"custom-{n}fpe",
        n_fpes=n,
        fast=fast,
        slow=slow,
        freq_hz=freq,
        threshold=args.threshold,
    )


def _cmd_run(args) -> int:
    cfg = _engine_config(args)
    report = engine.run_trace(cfg, Path(args.pcap).read_bytes())
    text = report.to_text(flow_table=args.flow_table)
    if args.report:
        Path(args.report).write_text(text)
    sys.stdout.write(text)
    return 1 if report.faults else 0


def _cmd_peak(args) -> int:
    cfg = _engine_config(args)
    result = engine.peak_search(
        cfg, flows=args.flows, seed=args.seed, granularity_ns=args.granularity_ns
    )
    print(
        f"peak zero-drop rate: {result['peak_fps']:.1f} fps "
        f"(period {result['period_ns']} ns, {result['flows']} probe flows)"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kscope", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    a = sub.add_parser("asm", help="assemble VLIW text")
    a.add_argument("input")
    a.add_argument("--target", required=True, choices=["fpe", "hpe"])
    a.add_argument("-o", "--output", required=True)
    a.add_argument("--act", action="append", help="activation table kind, in table-id order")
    a.add_argument("--params", help="raw parameter image file")
    a.set_defaults(fn=_cmd_asm)

    d = sub.add_parser("disasm", help="disassemble a program image")
    d.add_argument("input")
    d.add_argument("-o", "--output")
    d.set_defaults(fn=_cmd_disasm)

    c = sub.add_parser("compile", help="compile a model + weights")
    c.add_argument("model")
    c.add_argument("--weights", required=True)
    c.add_argument("-o", "--output", required=True)
    c.add_argument("--disasm", action="store_true")
    c.set_defaults(fn=_cmd_compile)

    o = sub.add_parser("oracle", help="reference inference over hex inputs")
    o.add_argument("--model", required=True)
    o.add_argument("--weights", required=True)
    o.add_argument("--input")
    o.add_argument("--inputs")
    o.add_argument("--json", action="store_true")
    o.set_defaults(fn=_cmd_oracle)

    g = sub.add_parser("gen-traffic", help="write a synthetic pcap")
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--flows", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--profile", choices=["uniform", "iscx", "ustc"], default="uniform")
    g.add_argument("--period-ns", type=int, default=1000)
    g.add_argument("--gap-ns", type=int, default=2000)
    g.set_defaults(fn=_cmd_gen_traffic)

    r = sub.add_parser("run", help="replay a pcap through the co-processor")
    r.add_argument("--pcap", required=True)
    r.add_argument("--fast", required=True)
    r.add_argument("--slow", required=True)
    r.add_argument("--preset", choices=sorted(engine.PRESETS))
    r.add_argument("--fpes", type=int, default=1)
    r.add_argument("--freq-hz", type=float, default=None,
                   help="engine clock; defaults to the preset's measured rate")
    r.add_argument("--clock", choices=["fpga", "asic"], default="fpga")
    r.add_argument("--threshold", type=int, default=16)
    r.add_argument("--report")
    r.add_argument("--flow-table", action="store_true")
    r.set_defaults(fn=_cmd_run)

    k = sub.add_parser("peak", help="largest zero-drop flow rate")
    k.add_argument("--fast", required=True)
    k.add_argument("--slow", required=True)
    k.add_argument("--preset", choices=sorted(engine.PRESETS))
    k.add_argument("--fpes", type=int, default=1)
    k.add_argument("--freq-hz", type=float, default=None,
                   help="engine clock; defaults to the preset's measured rate")
    k.add_argument("--clock", choices=["fpga", "asic"], default="fpga")
    k.add_argument("--threshold", type=int, default=16)
    k.add_argument("--flows", type=int, default=8000)
    k.add_argument("--seed", type=int, default=1)
    k.add_argument("--granularity-ns", type=int, default=2)
    k.set_defaults(fn=_cmd_peak)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as e:  # runtime failures map to exit 1
        print(f"kscope: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
