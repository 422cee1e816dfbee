import numpy as np
import pytest

from longctx import ModelConfig, init_model


@pytest.fixture
def tiny_absolute():
    cfg = ModelConfig(
        hidden_size=16, n_layers=2, n_heads=2, vocab_size=64,
        original_context=8, position_mode="absolute", init_seed=3,
    )
    return init_model(cfg)


@pytest.fixture
def tiny_rotary():
    cfg = ModelConfig(
        hidden_size=16, n_layers=2, n_heads=2, vocab_size=64,
        original_context=8, position_mode="rotary", init_seed=3,
    )
    return init_model(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
