"""
Tests for the feature schema, I2IF and tower input assembly.
"""

import sys
import os

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.config import WorldConfig
from src.data import Example, ItemCatalog, generate_world, sample_impressions
from src.features import (
    FeatureSchema,
    FeatureSpec,
    assemble_batch,
    assemble_inputs,
    build_i2if_index,
    default_schema,
    i2if_lookup,
    rebuild_after_churn,
)
from src.lib.errors import ConfigError, MissingFeatureError, UnknownItemError


def _example(**overrides):
    fields = dict(user_id=1, item_id=7, ud=[1.0, 2.0], us={"tags": [3, 1, 2]}, id_=[0.5],
                  is_={"item_id": [7]}, xs={"engaged_categories": [1, 4]}, y=[1, 0], ts=0)
    fields.update(overrides)
    return Example(**fields)


def test_single_item_index():
    index = build_i2if_index([(5, [3])])
    assert index.categories(5) == frozenset({3})


def test_item_without_categories_has_empty_entry():
    index = build_i2if_index([(5, [])])
    assert index.categories(5) == frozenset()


def test_rebuild_after_churn_swaps_entries():
    index = build_i2if_index([(1, [1]), (2, [2])])
    added = ItemCatalog(ids=np.array([9]), latent=np.zeros((1, 2)), fine=np.array([0]), categories=[(4, 5)])
    rebuilt = rebuild_after_churn(index, [1], added)
    assert 1 not in rebuilt and 9 in rebuilt and 2 in rebuilt
    assert rebuilt.categories(9) == frozenset({4, 5})
    assert 1 in index


def test_i2if_lookup_set_statistics():
    index = build_i2if_index([(1, [10]), (2, [30]), (3, [10, 20, 30])])
    assert_allclose(i2if_lookup(index, [10, 20], 1), [1.0, 0.5])
    assert_allclose(i2if_lookup(index, [10, 20], 2), [0.0, 0.0])
    assert_allclose(i2if_lookup(index, [10, 20, 30], 3), [3.0, 1.0])


def test_i2if_unknown_item_is_an_error():
    index = build_i2if_index([(1, [1])])
    with pytest.raises(UnknownItemError):
        i2if_lookup(index, [1], 2)


def test_one_dense_user_feature_is_the_user_input():
    schema = FeatureSchema([FeatureSpec("u", "user", "dense", 2), FeatureSpec("i", "item", "dense", 1)])
    index = build_i2if_index([(7, [1])])
    inputs = assemble_inputs(schema, _example(), index)
    assert_array_equal(inputs.user.dense, [1.0, 2.0])
    assert_array_equal(inputs.item.dense, [0.5])


def test_sparse_id_order_does_not_matter():
    schema = FeatureSchema([
        FeatureSpec("u", "user", "dense", 2),
        FeatureSpec("tags", "user", "sparse", 4, buckets=16),
        FeatureSpec("i", "item", "dense", 1),
    ])
    index = build_i2if_index([(7, [1])])
    a = assemble_inputs(schema, _example(us={"tags": [3, 1, 2]}), index)
    b = assemble_inputs(schema, _example(us={"tags": [2, 3, 1]}), index)
    assert a.user.sparse == b.user.sparse == {"tags": (1, 2, 3)}


def test_missing_feature_is_named():
    schema = FeatureSchema([
        FeatureSpec("u", "user", "dense", 2),
        FeatureSpec("region", "user", "sparse", 4, buckets=16),
        FeatureSpec("i", "item", "dense", 1),
    ])
    with pytest.raises(MissingFeatureError) as info:
        assemble_inputs(schema, _example(), build_i2if_index([(7, [1])]))
    assert info.value.name == "region"


def test_default_schema_matches_hand_assembly():
    cfg = WorldConfig(num_users=20, num_items=60, coarse_clusters=2, fine_per_coarse=3, latent_dim=3, seed=1)
    world = generate_world(cfg)
    schema = default_schema(cfg)
    index = build_i2if_index(world.items)
    ex = sample_impressions(world, 1, np.random.default_rng(0))[0]
    inputs = assemble_inputs(schema, ex, index)

    assert_array_equal(inputs.user.dense, ex.ud)
    assert inputs.user.sparse == {
        "user_id": tuple(ex.us["user_id"]),
        "user_categories": tuple(sorted(ex.us["user_categories"])),
    }
    assert_array_equal(inputs.item.dense, ex.id_)
    assert inputs.item.sparse["item_id"] == (ex.item_id,)

    user_cats = set(ex.xs["engaged_categories"])
    item_cats = set(world.items.categories[world.items.row(ex.item_id)])
    overlap = len(user_cats & item_cats)
    assert_allclose(inputs.interaction.dense, [overlap, overlap / len(user_cats | item_cats)])
    assert list(inputs.interaction.sparse) == ["i2if_ids", "engaged_categories"]
    assert inputs.interaction.sparse["i2if_ids"] == tuple(sorted(user_cats & item_cats))


def test_assemble_batch_stacks_labels():
    cfg = WorldConfig(num_users=20, num_items=60, coarse_clusters=2, fine_per_coarse=3, latent_dim=3, seed=1)
    world = generate_world(cfg)
    examples = sample_impressions(world, 5, np.random.default_rng(0))
    batch = assemble_batch(default_schema(cfg), examples, build_i2if_index(world.items))
    assert len(batch) == 5
    assert batch.labels.shape == (5, 2)
    assert batch.user.dense.shape == (5, 3)
    assert_array_equal(batch.item_ids, [ex.item_id for ex in examples])


def test_schema_rejects_duplicates_and_bad_sides():
    with pytest.raises(ConfigError):
        FeatureSchema([FeatureSpec("u", "user", "dense", 1), FeatureSpec("u", "item", "dense", 1)])
    with pytest.raises(ConfigError):
        FeatureSchema([FeatureSpec("u", "user", "dense", 1), FeatureSpec("i", "ad", "dense", 1)])
