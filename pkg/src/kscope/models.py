"""Layer-structured model descriptions and their quantized weight files.

A ModelSpec is a human-readable description of a small raw-bytes network
(dense / 1-D conv / max-pool / recurrent cell layers); a WeightsFile holds
the matching Fix8 weight matrices and bias vectors.  Both are exchange
formats: the trainer writes them, the compiler and the reference
implementation consume them.

Weight matrix conventions (row-major, one byte per Fix8 element):
  dense   (in, out), bias length out
  conv1d  (kernel * in_ch, out), row index = tap * in_ch + channel
  rnn     (in + hidden, hidden): input rows stacked above recurrent rows
  maxpool no parameters, stored as an empty (0, 0) entry
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .isa import Target

KWGT_MAGIC = b"KWGT"
KWGT_VERSION = 1

MODEL_MAGIC = "kmodel"
MODEL_VERSION = 1

VALID_INPUT_LENS = (32, 64)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int
    act: str = "identity"


@dataclass(frozen=True)
class Conv1D:
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1
    act: str = "identity"


@dataclass(frozen=True)
class MaxPool1D:
    window: int
    stride: int


@dataclass(frozen=True)
class RNNCell:
    in_dim: int
    hidden: int
    act: str = "identity"
    timesteps: int = 1


Layer = Dense | Conv1D | MaxPool1D | RNNCell


@dataclass(frozen=True)
class ModelSpec:
    target: Target
    input_len: int
    layers: tuple[Layer, ...]

    def __post_init__(self) -> None:
        _check_chain(self)

    @property
    def class_count(self) -> int:
        last = self.layers[-1]
        if isinstance(last, Dense):
            return last.out_dim
        raise ModelError("model must end with a dense classifier layer")


def _check_chain(spec: ModelSpec) -> None:
    if spec.input_len not in VALID_INPUT_LENS:
        raise ModelError(f"input_len must be one of {VALID_INPUT_LENS}, got {spec.input_len}")
    if not spec.layers:
        raise ModelError("model has no layers")
    if not isinstance(spec.layers[-1], Dense):
        raise ModelError("the last layer must be dense (its width is the class count)")

    shape: tuple[int, int] | int = spec.input_len  # flat width or (positions, channels)
    for idx, layer in enumerate(spec.layers):
        where = f"layer {idx} ({type(layer).__name__})"
        if isinstance(layer, Dense):
            flat = shape if isinstance(shape, int) else shape[0] * shape[1]
            if spec.target == Target.FPE and not isinstance(shape, int):
                raise ModelError(f"{where}: FPE models are dense-only")
            if layer.in_dim != flat:
                raise ModelError(f"{where}: expects {layer.in_dim} inputs, gets {flat}")
            shape = layer.out_dim
        elif isinstance(layer, Conv1D):
            if spec.target != Target.HPE:
                raise ModelError(f"{where}: conv layers run on the HPE only")
            if isinstance(shape, int):
                if shape % layer.in_ch:
                    raise ModelError(f"{where}: width {shape} not divisible by in_ch {layer.in_ch}")
                shape = (shape // layer.in_ch, layer.in_ch)
            if shape[1] != layer.in_ch:
                raise ModelError(f"{where}: expects {layer.in_ch} channels, gets {shape[1]}")
            pos = (shape[0] - layer.kernel) // layer.stride + 1
            if layer.kernel < 1 or layer.stride < 1 or pos < 1:
                raise ModelError(f"{where}: kernel/stride do not fit {shape[0]} positions")
            shape = (pos, layer.out_ch)
        elif isinstance(layer, MaxPool1D):
            if spec.target != Target.HPE or isinstance(shape, int):
                raise ModelError(f"{where}: pooling needs a preceding conv layer on the HPE")
            pos = (shape[0] - layer.window) // layer.stride + 1
            if layer.window < 2 or layer.stride < 1 or pos < 1:
                raise ModelError(f"{where}: window/stride do not fit {shape[0]} positions")
            shape = (pos, shape[1])
        elif isinstance(layer, RNNCell):
            if spec.target != Target.HPE:
                raise ModelError(f"{where}: recurrent layers run on the HPE only")
            if idx != 0:
                raise ModelError(f"{where}: a recurrent cell must be the first layer")
            if layer.timesteps * layer.in_dim != spec.input_len:
                raise ModelError(
                    f"{where}: timesteps*in ({layer.timesteps}*{layer.in_dim}) "
                    f"must equal input_len {spec.input_len}"
                )
            shape = layer.hidden
        else:
            raise ModelError(f"{where}: unknown layer type")


def layer_shapes(spec: ModelSpec) -> list[tuple[int, int] | int]:
    """Output shape after each layer (flat width or (positions, channels))."""
    shapes: list[tuple[int, int] | int] = []
    shape: tuple[int, int] | int = spec.input_len
    for layer in spec.layers:
        if isinstance(layer, Dense):
            shape = layer.out_dim
        elif isinstance(layer, Conv1D):
            if isinstance(shape, int):
                shape = (shape // layer.in_ch, layer.in_ch)
            shape = ((shape[0] - layer.kernel) // layer.stride + 1, layer.out_ch)
        elif isinstance(layer, MaxPool1D):
            shape = ((shape[0] - layer.window) // layer.stride + 1, shape[1])
        elif isinstance(layer, RNNCell):
            shape = layer.hidden
        shapes.append(shape)
    return shapes


def weight_shape(layer: Layer) -> tuple[int, int]:
    """(rows, cols) of the stored weight matrix for a layer."""
    if isinstance(layer, Dense):
        return layer.in_dim, layer.out_dim
    if isinstance(layer, Conv1D):
        return layer.kernel * layer.in_ch, layer.out_ch
    if isinstance(layer, RNNCell):
        return layer.in_dim + layer.hidden, layer.hidden
    return 0, 0


def param_bytes(spec: ModelSpec) -> int:
    total = 0
    for layer in spec.layers:
        r, c = weight_shape(layer)
        total += r * c + c
    return total


def model_signature(spec: ModelSpec) -> str:
    parts = [spec.target.name.lower(), str(spec.input_len)]
    for layer in spec.layers:
        if isinstance(layer, Dense):
            parts.append(f"dense:{layer.in_dim}:{layer.out_dim}:{layer.act}")
        elif isinstance(layer, Conv1D):
            parts.append(
                f"conv1d:{layer.in_ch}:{layer.out_ch}:{layer.kernel}:{layer.stride}:{layer.act}"
            )
        elif isinstance(layer, MaxPool1D):
            parts.append(f"maxpool1d:{layer.window}:{layer.stride}")
        elif isinstance(layer, RNNCell):
            parts.append(f"rnn:{layer.in_dim}:{layer.hidden}:{layer.act}:{layer.timesteps}")
    return ";".join(parts)


def model_hash(spec: ModelSpec) -> int:
    return zlib.crc32(model_signature(spec).encode()) & 0xFFFFFFFF


# ---------------------------------------------------------------------------
# Model text format
# ---------------------------------------------------------------------------

def model_to_text(spec: ModelSpec) -> str:
    lines = [
        f"{MODEL_MAGIC} {MODEL_VERSION}",
        f"target {spec.target.name.lower()}",
        f"input_len {spec.input_len}",
    ]
    for layer in spec.layers:
        if isinstance(layer, Dense):
            lines.append(f"layer dense in={layer.in_dim} out={layer.out_dim} act={layer.act}")
        elif isinstance(layer, Conv1D):
            lines.append(
                f"layer conv1d in_ch={layer.in_ch} out_ch={layer.out_ch} "
                f"kernel={layer.kernel} stride={layer.stride} act={layer.act}"
            )
        elif isinstance(layer, MaxPool1D):
            lines.append(f"layer maxpool1d window={layer.window} stride={layer.stride}")
        elif isinstance(layer, RNNCell):
            lines.append(
                f"layer rnn in={layer.in_dim} hidden={layer.hidden} "
                f"act={layer.act} steps={layer.timesteps}"
            )
    return "\n".join(lines) + "\n"


def _kv(tokens: list[str], where: str) -> dict[str, str]:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ModelError(f"{where}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def model_from_text(text: str) -> ModelSpec:
    target: Target | None = None
    input_len: int | None = None
    layers: list[Layer] = []
    seen_magic = False
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        where = f"line {line_no}"
        if not seen_magic:
            if toks[0] != MODEL_MAGIC or len(toks) != 2 or int(toks[1]) != MODEL_VERSION:
                raise ModelError(f"{where}: expected '{MODEL_MAGIC} {MODEL_VERSION}' header")
            seen_magic = True
        elif toks[0] == "target":
            target = Target.FPE if toks[1] == "fpe" else Target.HPE
        elif toks[0] == "input_len":
            input_len = int(toks[1])
        elif toks[0] == "layer":
            kind = toks[1]
            kv = _kv(toks[2:], where)
            try:
                if kind == "dense":
                    layers.append(Dense(int(kv["in"]), int(kv["out"]), kv.get("act", "identity")))
                elif kind == "conv1d":
                    layers.append(
                        Conv1D(
                            int(kv["in_ch"]),
                            int(kv["out_ch"]),
                            int(kv["kernel"]),
                            int(kv.get("stride", 1)),
                            kv.get("act", "identity"),
                        )
                    )
                elif kind == "maxpool1d":
                    layers.append(MaxPool1D(int(kv["window"]), int(kv["stride"])))
                elif kind == "rnn":
                    layers.append(
                        RNNCell(
                            int(kv["in"]),
                            int(kv["hidden"]),
                            kv.get("act", "identity"),
                            int(kv.get("steps", 1)),
                        )
                    )
                else:
                    raise ModelError(f"{where}: unknown layer kind {kind!r}")
            except KeyError as e:
                raise ModelError(f"{where}: missing field {e.args[0]!r}") from None
        else:
            raise ModelError(f"{where}: unknown directive {toks[0]!r}")
    if target is None or input_len is None:
        raise ModelError("model text must set target and input_len")
    return ModelSpec(target=target, input_len=input_len, layers=tuple(layers))


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerWeights:
    matrix: np.ndarray  # uint8, shape (rows, cols)
    bias: np.ndarray    # uint8, shape (cols,)


@dataclass(frozen=True)
class WeightsFile:
    model_hash: int
    layers: tuple[LayerWeights, ...] = field(default_factory=tuple)


def check_weights(spec: ModelSpec, weights: WeightsFile) -> None:
    if weights.model_hash != model_hash(spec):
        raise ModelError(
            f"weights hash 0x{weights.model_hash:08x} does not match model 0x{model_hash(spec):08x}"
        )
    if len(weights.layers) != len(spec.layers):
        raise ModelError(
            f"weights cover {len(weights.layers)} layers, model has {len(spec.layers)}"
        )
    for idx, (layer, lw) in enumerate(zip(spec.layers, weights.layers)):
        rows, cols = weight_shape(layer)
        if lw.matrix.shape != (rows, cols) or lw.bias.shape != (cols,):
            raise ModelError(
                f"layer {idx}: weight shape {lw.matrix.shape}/{lw.bias.shape} "
                f"does not match expected ({rows}, {cols})/({cols},)"
            )


def save_weights(weights: WeightsFile) -> bytes:
    out = bytearray()
    out += KWGT_MAGIC
    out += struct.pack("<BIB", KWGT_VERSION, weights.model_hash, len(weights.layers))
    for lw in weights.layers:
        rows, cols = lw.matrix.shape
        out += struct.pack("<HH", rows, cols)
        out += lw.matrix.tobytes()
        out += lw.bias.tobytes()
    return bytes(out)


def load_weights(raw: bytes) -> WeightsFile:
    if raw[:4] != KWGT_MAGIC:
        raise ModelError("bad KWGT magic")
    version, mhash, count = struct.unpack_from("<BIB", raw, 4)
    if version != KWGT_VERSION:
        raise ModelError(f"unsupported weights version {version}")
    pos = 10
    layers = []
    for _ in range(count):
        if pos + 4 > len(raw):
            raise ModelError("truncated weights file")
        rows, cols = struct.unpack_from("<HH", raw, pos)
        pos += 4
        need = rows * cols + cols
        if pos + need > len(raw):
            raise ModelError("truncated weights file")
        mat = np.frombuffer(raw[pos : pos + rows * cols], dtype=np.uint8).reshape(rows, cols)
        pos += rows * cols
        bias = np.frombuffer(raw[pos : pos + cols], dtype=np.uint8)
        pos += cols
        layers.append(LayerWeights(matrix=mat.copy(), bias=bias.copy()))
    return WeightsFile(model_hash=mhash, layers=tuple(layers))


def random_weights(spec: ModelSpec, seed: int, scale: float = 0.5) -> WeightsFile:
    """Deterministic fixture weights, centered small so sums stay informative."""
    from .fix8 import encode

    rng = np.random.default_rng(seed)
    layers = []
    for layer in spec.layers:
        rows, cols = weight_shape(layer)
        fan = max(rows, 1)
        mat = rng.normal(0.0, scale / np.sqrt(fan), size=(rows, cols))
        bias = rng.normal(0.0, 0.1, size=(cols,))
        enc = np.vectorize(encode, otypes=[np.uint8])
        layers.append(
            LayerWeights(
                matrix=enc(mat).reshape(rows, cols) if rows else np.zeros((0, cols), dtype=np.uint8),
                bias=enc(bias) if cols else np.zeros(0, dtype=np.uint8),
            )
        )
    return WeightsFile(model_hash=model_hash(spec), layers=tuple(layers))
