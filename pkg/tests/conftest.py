import numpy as np
import pytest

from kscope.compiler import compile_model
from kscope.isa import Target
from kscope.models import Conv1D, Dense, MaxPool1D, ModelSpec, RNNCell, random_weights

# Reconstructed fixture models sized like the on-board networks: parameter
# byte totals match the published sizes, layer widths are fixtures.

MLP_E_SPEC = ModelSpec(  # ~6.4 KB of parameters, 3 layers
    target=Target.FPE,
    input_len=64,
    layers=(Dense(64, 80, "relu"), Dense(80, 16, "relu"), Dense(16, 6, "identity")),
)

MLP_M_SPEC = ModelSpec(  # ~2.1 KB of parameters, 3 layers
    target=Target.FPE,
    input_len=32,
    layers=(Dense(32, 42, "relu"), Dense(42, 16, "relu"), Dense(16, 6, "identity")),
)

CNN_SPEC = ModelSpec(  # small conv stack for the slow path
    target=Target.HPE,
    input_len=64,
    layers=(
        Conv1D(1, 16, kernel=3, stride=1, act="relu"),
        MaxPool1D(2, 2),
        Conv1D(16, 16, kernel=3, stride=1, act="relu"),
        Dense(29 * 16, 24, "relu"),
        Dense(24, 6, "identity"),
    ),
)

RNN_SPEC = ModelSpec(  # ~31.4 KB recurrent model
    target=Target.HPE,
    input_len=64,
    layers=(RNNCell(8, 172, "sigmoid", timesteps=8), Dense(172, 6, "identity")),
)

TINY_FAST_SPEC = ModelSpec(
    target=Target.FPE,
    input_len=64,
    layers=(Dense(64, 8, "relu"), Dense(8, 4, "identity")),
)

TINY_SLOW_SPEC = ModelSpec(
    target=Target.HPE,
    input_len=64,
    layers=(Conv1D(1, 8, kernel=3, stride=1, act="relu"), MaxPool1D(2, 2), Dense(31 * 8, 4, "identity")),
)


@pytest.fixture(scope="session")
def mlp_e():
    return MLP_E_SPEC, random_weights(MLP_E_SPEC, seed=101)


@pytest.fixture(scope="session")
def mlp_m():
    return MLP_M_SPEC, random_weights(MLP_M_SPEC, seed=102)


@pytest.fixture(scope="session")
def cnn_model():
    return CNN_SPEC, random_weights(CNN_SPEC, seed=103)


@pytest.fixture(scope="session")
def rnn_model():
    return RNN_SPEC, random_weights(RNN_SPEC, seed=104)


@pytest.fixture(scope="session")
def mlp_e_prog(mlp_e):
    return compile_model(*mlp_e)


@pytest.fixture(scope="session")
def tiny_fast():
    spec = TINY_FAST_SPEC
    w = random_weights(spec, seed=105)
    return spec, w, compile_model(spec, w)


@pytest.fixture(scope="session")
def tiny_slow():
    spec = TINY_SLOW_SPEC
    w = random_weights(spec, seed=106)
    return spec, w, compile_model(spec, w)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
