"""
Tests for synthetic world generation, impression sampling, streams and the
dataset file format.
"""

import json
import sys
import os

import numpy as np
import pytest
from numpy.testing import assert_array_equal

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.config import WorldConfig, config_from_dict
from src.data import (
    ChurnEvent,
    MiniBatch,
    build_stream,
    churn_items,
    generate_world,
    impression_probabilities,
    read_dataset,
    relevant_items,
    sample_impressions,
    write_dataset,
)
from src.lib.errors import ConfigError, DatasetFormatError
from src.lib.hashing import file_hash


def small_world(**overrides):
    fields = dict(num_users=50, num_items=200, coarse_clusters=2, fine_per_coarse=3, latent_dim=4, seed=5)
    fields.update(overrides)
    return generate_world(WorldConfig(**fields))


def test_zero_noise_puts_items_on_fine_centroids():
    world = small_world(noise_scale=0.0)
    assert_array_equal(world.items.latent, world.fine_centroids[world.items.fine])


def test_same_seed_gives_identical_catalogs():
    a, b = small_world(), small_world()
    assert a.items.fingerprint() == b.items.fingerprint()
    assert a.users.fingerprint() == b.users.fingerprint()
    assert small_world(seed=6).items.fingerprint() != a.items.fingerprint()


def test_round_robin_cluster_sizes():
    world = generate_world(WorldConfig(num_items=1000, coarse_clusters=4, fine_per_coarse=5, seed=0))
    counts = np.bincount(world.items.fine, minlength=20)
    assert_array_equal(counts, np.full(20, 50))


def test_invalid_world_config_names_the_key():
    with pytest.raises(ConfigError) as info:
        generate_world(WorldConfig(num_items=5, coarse_clusters=2, fine_per_coarse=3))
    assert info.value.key == "world.num_items"


@pytest.mark.parametrize("data, key", [
    ({"train": {"lr": "fast"}}, "train.lr"),
    ({"world": {"num_items": 12.5}}, "world.num_items"),
    ({"model": {"share_user_tower": "yes"}}, "model.share_user_tower"),
    ({"index": {"layer_sizes": [10_000]}}, "index.layer_sizes"),
])
def test_config_values_are_checked_before_use(data, key):
    with pytest.raises(ConfigError) as info:
        config_from_dict(data)
    assert info.value.key == key


def test_degenerate_base_rates_force_labels():
    world = small_world(base_rates=[0.0, 1.0])
    examples = sample_impressions(world, 500, np.random.default_rng(0))
    labels = np.asarray([ex.y for ex in examples])
    assert labels[:, 0].sum() == 0
    assert labels[:, 1].sum() == 500


def test_default_rates_give_both_classes():
    world = small_world()
    labels = np.asarray([ex.y for ex in sample_impressions(world, 2000, np.random.default_rng(1))])
    assert 0 < labels[:, 0].sum() < 2000


@pytest.mark.slow
def test_empirical_click_rate_matches_generator_expectation():
    world = generate_world(WorldConfig(seed=2))
    rng = np.random.default_rng(3)
    n = 100000
    examples = sample_impressions(world, n, rng)
    empirical = np.mean([ex.y[0] for ex in examples])
    users = np.asarray([world.users.row(ex.user_id) for ex in examples])
    items = world.items.rows([ex.item_id for ex in examples])
    expected = impression_probabilities(world, users, items)[:, 0].mean()
    assert abs(empirical - expected) <= 0.1 * expected


def test_relevant_items_are_sorted_by_true_score():
    world = small_world()
    top = relevant_items(world, 3, 10)
    assert len(top) == 10 == len(set(top))
    scores = world.users.latent[3] @ world.items.latent[world.items.rows(top)].T
    assert np.all(np.diff(scores) <= 1e-12)


def test_stream_timestamps_and_churn_events():
    world = small_world(churn_rate=0.1)
    stream = build_stream(world, 6, 20, np.random.default_rng(0), churn_every=2)
    churns = [e for e in stream.events if isinstance(e, ChurnEvent)]
    assert len(churns) == 2
    assert len(stream) == 6
    ts = [ex.ts for ex in stream.examples()]
    assert ts == sorted(ts)

    live = set(int(i) for i in small_world(churn_rate=0.1).items.ids)
    for event in stream.events:
        if isinstance(event, ChurnEvent):
            live -= set(event.removed)
            live |= set(int(i) for i in event.added.ids)
        else:
            assert isinstance(event, MiniBatch)
            assert all(ex.item_id in live for ex in event.examples)


def test_churn_replaces_items_with_fresh_ids():
    world = small_world()
    before = set(int(i) for i in world.items.ids)
    removed, added = churn_items(world, 0.1)
    assert len(removed) == len(added) == 20
    assert set(removed) <= before
    assert min(added.ids) >= 200
    assert len(world.items) == 200
    assert not set(removed) & set(int(i) for i in world.items.ids)


def test_empty_dataset_round_trip(tmp_path):
    path = str(tmp_path / "empty.jsonl")
    assert write_dataset(path, []) == 0
    assert os.path.getsize(path) == 0
    assert read_dataset(path) == []


def test_dataset_round_trip(tmp_path):
    world = small_world()
    examples = sample_impressions(world, 300, np.random.default_rng(0))
    path = str(tmp_path / "data.jsonl")
    write_dataset(path, examples)
    assert read_dataset(path) == examples

    again = str(tmp_path / "again.jsonl")
    write_dataset(again, read_dataset(path))
    assert file_hash(again) == file_hash(path)


def test_malformed_line_reports_line_number(tmp_path):
    world = small_world()
    path = str(tmp_path / "bad.jsonl")
    write_dataset(path, sample_impressions(world, 2, np.random.default_rng(0)))
    with open(path, "a") as f:
        f.write('{"user_id": 1}\n')
    with pytest.raises(DatasetFormatError) as info:
        read_dataset(path)
    assert info.value.line_number == 3
    assert info.value.code == "dataset_format_error"


@pytest.mark.parametrize("field, value", [
    ("user_id", "abc"),
    ("item_id", None),
    ("ts", [3]),
    ("ts", 1.5),
    ("user_id", True),
    ("y", [True, 0]),
    ("y", [1, 2]),
])
def test_bad_field_value_reports_line_number(tmp_path, field, value):
    world = small_world()
    path = str(tmp_path / "bad.jsonl")
    write_dataset(path, sample_impressions(world, 3, np.random.default_rng(0)))
    with open(path) as f:
        lines = f.readlines()
    record = json.loads(lines[1])
    record[field] = value
    lines[1] = json.dumps(record) + "\n"
    with open(path, "w") as f:
        f.writelines(lines)
    with pytest.raises(DatasetFormatError) as info:
        read_dataset(path)
    assert info.value.line_number == 2
    assert info.value.code == "dataset_format_error"
