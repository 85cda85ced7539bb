import numpy as np
import pytest

from polygonizer.data import SceneConfig, generate_dataset
from polygonizer.network import ModelConfig, init_params
from polygonizer.training import train

# A deliberately small model/scene pair so integration tests stay fast.
TINY_MODEL = dict(
    input_size=16,
    channels=(4, 8),
    blocks_per_stage=1,
    feature_dim=8,
    embed_dim=16,
    hidden_dim=16,
    attention_dim=8,
    n_lstm_layers=2,
    max_seq_len=16,
    seed=3,
)
TINY_SCENE = dict(size=16, min_vertices=4, max_vertices=6, margin=2, seed=5)


@pytest.fixture(scope="session")
def tiny_config():
    return ModelConfig(**TINY_MODEL)


@pytest.fixture(scope="session")
def tiny_scene():
    return SceneConfig(**TINY_SCENE)


@pytest.fixture(scope="session")
def tiny_samples(tiny_scene):
    return generate_dataset(tiny_scene, 8)


@pytest.fixture(scope="session")
def tiny_params(tiny_config):
    return init_params(tiny_config)


@pytest.fixture(scope="session")
def tiny_trained(tiny_config, tiny_samples):
    """A briefly trained tiny model, shared by inference/CLI-level tests."""
    result = train(
        tiny_samples, tiny_config,
        epochs=30, batch_size=4, learning_rate=5e-3,
        lr_scales={"enc.": 0.0}, seed=0, max_steps=60,
    )
    return result


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
