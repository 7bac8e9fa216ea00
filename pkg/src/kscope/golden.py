"""Golden-vector exchange file for external quantizer implementations.

Each line is `<real value as decimal text> <expected Fix8 byte as 0xNN>`.
A foreign reimplementation of the quantizer (e.g. the trainer) parses the
decimal with its native strtod and must reproduce every byte; the decimal
texts round-trip exactly through IEEE doubles, so the check is bit-exact.

Usage: python -m kscope.golden OUT.txt [count] [seed]
"""

from __future__ import annotations

import random
import sys

from .fix8 import decode, encode

EDGE_VALUES = (
    [0.0, -0.0, 4.0, -4.0, 3.96875, -4.03125, 100.0, -100.0, 0.015625, -0.015625]
    + [k / 64 for k in range(-300, 301)]  # every tie between half-steps
    + [decode(b) for b in range(256)]     # every representable value
)


def golden_vectors(count: int = 10000, seed: int = 20240809) -> list[tuple[str, int]]:
    rng = random.Random(seed)
    values = list(EDGE_VALUES)
    while len(values) < count:
        values.append(rng.uniform(-6.0, 6.0))
    out = []
    for v in values[:count]:
        text = repr(float(v))
        out.append((text, encode(float(text))))
    return out


def render(vectors: list[tuple[str, int]]) -> str:
    return "".join(f"{text} 0x{byte:02X}\n" for text, byte in vectors)


def main(argv: list[str]) -> int:
    if not 1 <= len(argv) <= 3:
        print("usage: python -m kscope.golden OUT.txt [count] [seed]", file=sys.stderr)
        return 2
    count = int(argv[1]) if len(argv) > 1 else 10000
    seed = int(argv[2]) if len(argv) > 2 else 20240809
    with open(argv[0], "w") as f:
        f.write(render(golden_vectors(count, seed)))
    print(f"wrote {count} golden vectors to {argv[0]}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
