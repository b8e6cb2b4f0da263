"""
Tests for joint index/model training in the three modes.
"""

import sys
import os

import numpy as np
import pytest
from numpy.testing import assert_array_equal

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.evaluation.experiment import build_model, prepare_data, stage_rng, train
from src.index import hard_paths
from src.models.joim import (
    JointTrainer,
    catalog_embeddings,
    em_joint,
    split_rounds,
    split_stream,
)


def _train(cfg):
    data = prepare_data(cfg)
    return data, train(cfg, data)


@pytest.mark.parametrize("mode", ["JOIM", "SIL", "EM"])
def test_every_mode_publishes_the_live_catalog(tiny_config, mode):
    cfg = tiny_config()
    cfg.train.mode = mode
    data, result = _train(cfg)

    assert len(result.trace) == cfg.train.num_batches
    assert result.published.version == result.model.index.version
    assert_array_equal(result.published.item_ids, np.sort(result.catalog.ids))
    ids, v = catalog_embeddings(result.model, data.schema, result.catalog)
    order = np.argsort(ids)
    assert_array_equal(result.published.paths, hard_paths(result.model.index.codebooks, v[order]))
    assert result.index_history[-1][0] == "publish"


def test_joim_trains_the_index_with_scheduled_temperature(tiny_config):
    cfg = tiny_config()
    _, result = _train(cfg)
    trace = result.trace
    assert set(trace["phase"]) == {"joint"}
    assert trace["alpha"].iloc[0] == 0.0
    assert trace["alpha"].is_monotonic_increasing
    assert trace["index_weight"].iloc[0] == 0.0
    assert trace["index_weight"].iloc[-1] == cfg.index.index_loss_weight
    assert (trace["balance"] > 0).all()


def test_sil_trains_item_layer_first_then_freezes(tiny_config):
    cfg = tiny_config()
    cfg.train.mode = "SIL"
    _, result = _train(cfg)
    phases = list(result.trace["phase"])
    half = cfg.train.num_batches // 2
    assert phases == ["item_only"] * half + ["frozen"] * (cfg.train.num_batches - half)
    assert (result.trace["alpha"] == 0.0).all()
    assert [h[0] for h in result.index_history] == ["cluster", "publish"]


def test_em_reclusters_once_per_round(tiny_config):
    cfg = tiny_config(em_rounds=2)
    cfg.train.mode = "EM"
    _, result = _train(cfg)
    assert [h[0] for h in result.index_history] == ["cluster", "cluster", "cluster", "publish"]


def test_em_with_zero_rounds_changes_nothing(tiny_config):
    cfg = tiny_config()
    data = prepare_data(cfg)
    model = build_model(cfg, data.schema)
    trainer = JointTrainer(model, cfg, data.schema, data.i2if, data.catalog, stage_rng(cfg.seed, 1), 1)
    before = model.index.fingerprint()
    params = {k: v.copy() for k, v in model.parameters().items()}
    out_model, out_index = em_joint(trainer, data.stream, 0)
    assert out_model is model and out_index is model.index
    assert model.index.fingerprint() == before
    assert all(np.array_equal(params[k], v) for k, v in model.parameters().items())
    assert trainer.step == 0


def test_single_layer_hierarchy_trains_without_an_index(tiny_config):
    cfg = tiny_config()
    cfg.model.layer_presets = ["S"]
    cfg.index.layer_sizes = []
    cfg.serving.beam = []
    data, result = _train(cfg.validate())
    assert result.published.num_levels == 0
    assert "index" not in result.trace.columns


def test_same_seed_reproduces_training(tiny_config):
    _, a = _train(tiny_config())
    _, b = _train(tiny_config())
    assert a.published.fingerprint() == b.published.fingerprint()
    assert a.trace.equals(b.trace)


def test_split_stream_keeps_churn_in_place(tiny_config):
    cfg = tiny_config(churn_every=2)
    cfg.world.churn_rate = 0.1
    data = prepare_data(cfg)
    head, tail = split_stream(data.stream, 3)
    assert len(head) == 3 and len(tail) == cfg.train.num_batches - 3
    assert head.events + tail.events == data.stream.events

    pieces = split_rounds(data.stream, 3)
    assert [len(p) for p in pieces] == [3, 3, 2]
    assert [e for p in pieces for e in p.events] == data.stream.events


def test_training_with_churn_publishes_only_live_items(tiny_config):
    cfg = tiny_config(churn_every=3)
    cfg.world.churn_rate = 0.1
    data, result = _train(cfg)
    live = set(int(i) for i in data.world.items.ids)
    assert set(int(i) for i in result.published.item_ids) == live
    assert set(int(i) for i in result.catalog.ids) == live

