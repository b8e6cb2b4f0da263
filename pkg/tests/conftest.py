import sys
import os

import pytest

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.config import (
    EvalConfig,
    IndexConfig,
    ModelConfig,
    RunConfig,
    ServingConfig,
    TrainConfig,
    WorldConfig,
)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical checks")


def make_tiny_config(**train_overrides) -> RunConfig:
    """A run small enough to train end to end in a couple of seconds."""
    train = dict(batch_size=16, num_batches=8, snapshot_interval=0, log_every=0, em_rounds=2,
                 eval_examples=200, calibration_examples=200)
    train.update(train_overrides)
    return RunConfig(
        seed=3,
        world=WorldConfig(num_users=40, num_items=120, coarse_clusters=2, fine_per_coarse=3, latent_dim=4, seed=3),
        model=ModelConfig(layer_presets=["S", "XS"], interaction_dim=4),
        index=IndexConfig(layer_sizes=[6], index_dim=4, warmup_steps=2, balance_batches=2, kmeans_iters=10),
        train=TrainConfig(**train),
        serving=ServingConfig(beam=[6], top_k=20),
        eval=EvalConfig(recall_k=[5, 10], num_eval_users=8, seeds=2),
    ).validate()


@pytest.fixture(scope="session")
def tiny_config():
    return make_tiny_config
