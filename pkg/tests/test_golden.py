"""The committed golden-vector exchange file stays in sync with the quantizer."""

from pathlib import Path

from kscope.fix8 import encode
from kscope.golden import golden_vectors, render

EXCHANGE_FILE = Path(__file__).parent.parent / "frontend" / "test" / "fixtures" / "fix8_golden.txt"


def test_exchange_file_matches_generator():
    assert EXCHANGE_FILE.exists(), "golden exchange file missing; run python -m kscope.golden"
    assert EXCHANGE_FILE.read_text() == render(golden_vectors())


def test_vectors_self_consistent():
    vectors = golden_vectors(2000)
    assert len(vectors) == 2000
    for text, byte in vectors:
        assert encode(float(text)) == byte
