"""
Tests for the serving path: model split, inverted index, layer-wise and
queue retrieval, and cost accounting.
"""

import sys
import os
import copy
import dataclasses
import json
import shutil
from types import SimpleNamespace

import numpy as np
import pytest
from numpy.testing import assert_array_equal

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.config import WorldConfig
from src.data import generate_world
from src.data.world import churn_items
from src.evaluation.experiment import build_model, holdout_batches, prepare_data, train_calibrated
from src.features import catalog_item_batch, default_schema
from src.index.hierarchy import hard_paths, publish_mapping
from src.index.kmeans import residual_kmeans
from src.lib.errors import ConfigError, SnapshotFormatError, VersionSkewError
from src.models import MoNNModel
from src.models.hsnn import hsnn_forward
from src.serving.cost import account_cost, brute_force_macs, theoretical_cost
from src.serving.inverted_index import apply_churn, build_inverted_index
from src.serving.retrieval import (
    RetrievalBudget,
    brute_force,
    retrieve_budgeted_queue,
    retrieve_layerwise,
    user_request,
)
from src.serving.snapshot import load_serving_snapshot, split_model


@pytest.fixture(scope="module")
def served(tiny_config, tmp_path_factory):
    cfg = tiny_config()
    cfg.model.layer_presets = ["S", "S", "XS"]
    cfg.index.layer_sizes = [3, 2]
    cfg.serving.beam = [2, 3]
    cfg.validate()
    data = prepare_data(cfg)
    training = train_calibrated(cfg, data)
    directory = str(tmp_path_factory.mktemp("serving") / "snapshot")
    snapshot = split_model(training.model, directory)
    inverted = build_inverted_index(training.published, training.catalog, snapshot)
    return SimpleNamespace(cfg=cfg, data=data, training=training, snapshot=snapshot, inverted=inverted,
                           directory=directory)


def _exhaustive(inverted):
    return RetrievalBudget.exhaustive(inverted, top_k=len(inverted))


def test_split_snapshot_predicts_like_the_trained_model(served):
    cfg, data, training = served.cfg, served.data, served.training
    batch = holdout_batches(cfg, data.world, data.schema, training.i2if, 16, 15)[0]
    model = training.model
    paths = hard_paths(model.index.codebooks, model.item_embeddings(batch.item))
    layers_a, final_a = hsnn_forward(model, batch, paths)
    layers_b, final_b = served.snapshot.predict(batch, served.inverted.representative_items())
    assert final_a.logits.tobytes() == final_b.logits.tobytes()
    for a, b in zip(layers_a.logits, layers_b.logits):
        assert a.tobytes() == b.tobytes()
    assert served.snapshot.index_version == model.index.version
    assert served.snapshot.step == model.step


def test_uncalibrated_model_is_not_split(served, tmp_path):
    model = build_model(served.cfg, served.data.schema)
    with pytest.raises(SnapshotFormatError):
        split_model(model, str(tmp_path / "snapshot"))


def test_unknown_manifest_version_is_rejected(served, tmp_path):
    target = str(tmp_path / "copy")
    shutil.copytree(served.directory, target)
    path = os.path.join(target, "manifest.json")
    with open(path) as f:
        manifest = json.load(f)
    manifest["format_version"] = 99
    with open(path, "w") as f:
        json.dump(manifest, f)
    with pytest.raises(SnapshotFormatError):
        load_serving_snapshot(target)


def test_parts_from_different_steps_are_rejected(served, tmp_path):
    target = str(tmp_path / "copy")
    shutil.copytree(served.directory, target)
    path = os.path.join(target, "user_tower", "manifest.json")
    with open(path) as f:
        manifest = json.load(f)
    manifest["step"] += 1
    with open(path, "w") as f:
        json.dump(manifest, f)
    with pytest.raises(SnapshotFormatError):
        load_serving_snapshot(target)


def test_assign_follows_the_residual_argmin(served):
    snapshot = served.snapshot
    c0, c1 = snapshot.codebooks
    v = np.random.default_rng(0).normal(size=(10, c0.shape[1]))
    expected = []
    for x in v:
        k0 = int(np.argmin(((x - c0) ** 2).sum(axis=1)))
        r = x - c0[k0]
        k1 = int(np.argmin(((r - c1) ** 2).sum(axis=1)))
        expected.append([k0, k1])
    assert_array_equal(snapshot.assign(v), expected)


def test_posting_lists_partition_the_catalog(served):
    inverted = served.inverted
    assert inverted.check_partition()
    for level in range(inverted.num_levels):
        assert inverted.occupancy(level).sum() == len(inverted)
    assert_array_equal(inverted.item_ids, np.sort(served.training.catalog.ids))


def test_single_node_index_holds_the_whole_corpus(served):
    snapshot, catalog = served.snapshot, served.training.catalog
    d = snapshot.model.index_dim
    published = publish_mapping([np.zeros((1, d))], catalog.ids, snapshot.catalog_embeddings(catalog),
                                snapshot.index_version)
    inverted = build_inverted_index(published, catalog, snapshot)
    assert list(inverted.postings[0]) == [(0,)]
    assert_array_equal(inverted.postings[0][(0,)], np.sort(catalog.ids))


def test_churn_rebuild_keeps_a_partition(served):
    world = copy.deepcopy(served.data.world)
    removed, added = churn_items(world, 0.1)
    inverted = apply_churn(served.inverted, served.snapshot, world.items)
    assert inverted.revision == served.inverted.revision + 1
    assert inverted.index_version == served.inverted.index_version
    assert inverted.check_partition()
    assert not any(i in inverted for i in removed)
    assert all(int(i) in inverted for i in added.ids)

    request = user_request(served.snapshot, world, 0)
    a = retrieve_layerwise(served.snapshot, inverted, request, _exhaustive(inverted))
    b = brute_force(served.snapshot, inverted, request, len(inverted))
    assert_array_equal(a.item_ids, b.item_ids)


@pytest.mark.parametrize("user_id", [0, 3, 17, 39])
def test_exhaustive_beams_match_brute_force(served, user_id):
    snapshot, inverted = served.snapshot, served.inverted
    request = user_request(snapshot, served.data.world, user_id)
    a = retrieve_layerwise(snapshot, inverted, request, _exhaustive(inverted))
    b = brute_force(snapshot, inverted, request, len(inverted))
    assert_array_equal(a.item_ids, b.item_ids)
    assert a.scores.tobytes() == b.scores.tobytes()
    assert list(a.cost.evaluations) == list(b.cost.evaluations)


def test_beam_search_scores_only_surviving_postings(served):
    snapshot, inverted = served.snapshot, served.inverted
    request = user_request(snapshot, served.data.world, 5)
    budget = RetrievalBudget(beam=(1, 1), top_k=10)
    result = retrieve_layerwise(snapshot, inverted, request, budget)
    assert [len(s) for s in result.survivors] == [1, 1]
    allowed = inverted.items_under(1, result.survivors[-1])
    assert result.cost.items_scored == len(allowed)
    assert set(result.item_ids) <= set(allowed)
    assert len(result.item_ids) == min(10, len(allowed))
    assert list(result.scores) == sorted(result.scores, reverse=True)

    again = retrieve_layerwise(snapshot, inverted, request, budget)
    assert_array_equal(again.item_ids, result.item_ids)


def test_item_budget_caps_scored_items(served):
    snapshot, inverted = served.snapshot, served.inverted
    request = user_request(snapshot, served.data.world, 2)
    result = retrieve_layerwise(snapshot, inverted, request, RetrievalBudget(beam=(3, 6), max_items_scored=7))
    assert result.cost.items_scored == 7
    empty = retrieve_layerwise(snapshot, inverted, request, RetrievalBudget(beam=(3, 6), max_items_scored=0))
    assert len(empty.item_ids) == 0


def test_wrong_beam_length_is_a_config_error(served):
    request = user_request(served.snapshot, served.data.world, 0)
    with pytest.raises(ConfigError):
        retrieve_layerwise(served.snapshot, served.inverted, request, RetrievalBudget(beam=(2,)))


def test_version_skew_is_rejected(served):
    stale = dataclasses.replace(served.inverted, index_version=served.inverted.index_version + 1)
    request = user_request(served.snapshot, served.data.world, 0)
    with pytest.raises(VersionSkewError) as info:
        retrieve_layerwise(served.snapshot, stale, request, _exhaustive(stale))
    assert info.value.code == "version_skew"
    with pytest.raises(VersionSkewError):
        brute_force(served.snapshot, stale, request, 5)


def test_budgeted_queue(served):
    snapshot, inverted = served.snapshot, served.inverted
    request = user_request(snapshot, served.data.world, 4)

    everything = retrieve_budgeted_queue(snapshot, inverted, request, RetrievalBudget(beam=(3, 6)))
    assert sorted(everything.item_ids) == list(inverted.item_ids)
    assert len(set(everything.item_ids)) == len(inverted)

    first = everything.item_ids[0]
    cluster = tuple(int(k) for k in inverted.published.paths[inverted.rows([first])[0]])
    members = inverted.postings[1][cluster]
    best = retrieve_budgeted_queue(snapshot, inverted, request,
                                   RetrievalBudget(beam=(3, 6), max_items_scored=len(members)))
    assert_array_equal(best.item_ids, members)

    none = retrieve_budgeted_queue(snapshot, inverted, request, RetrievalBudget(beam=(3, 6), max_items_scored=0))
    assert len(none.item_ids) == 0
    assert none.cost.items_scored == 0


def test_counted_cost_matches_the_formula(served):
    snapshot, inverted = served.snapshot, served.inverted
    request = user_request(snapshot, served.data.world, 1)
    result = retrieve_layerwise(snapshot, inverted, request, _exhaustive(inverted))
    reference = MoNNModel(served.data.schema, "S", served.cfg.world.num_tasks)
    report = account_cost(result.cost, brute_force_macs(reference, len(inverted)))
    assert report.relative_error == 0.0
    assert report.evaluations == [len(inverted.nodes[0]), len(inverted.nodes[1]), len(inverted)]
    assert report.measured == theoretical_cost(snapshot.model.macs_per_layer(), report.evaluations)
    assert report.brute_force == reference.scoring_macs() * len(inverted)
    assert report.fraction_of_brute_force == report.measured / report.brute_force


def test_cost_counts_the_work_that_ran(served, monkeypatch):
    snapshot, inverted = served.snapshot, served.inverted
    head = snapshot.model.heads[0]
    forward = head.forward

    def twice(*args, **kwargs):
        forward(*args, **kwargs)
        return forward(*args, **kwargs)

    monkeypatch.setattr(head, "forward", twice)
    result = retrieve_layerwise(snapshot, inverted, user_request(snapshot, served.data.world, 1),
                                _exhaustive(inverted))
    report = account_cost(result.cost)
    extra = report.macs_per_eval[0] * report.evaluations[0]
    assert extra > 0
    assert report.measured == report.formula + extra
    assert report.relative_error > 0.0


def test_theoretical_cost_examples():
    assert theoretical_cost([10, 100], [4, 50]) == 5040
    assert theoretical_cost([], []) == 0
    # an index level with one node per item costs more than scoring items alone
    assert theoretical_cost([10, 100], [50, 50]) > theoretical_cost([100], [50])


@pytest.mark.slow
def test_beam_retrieval_is_sublinear_on_a_large_catalog(tiny_config, tmp_path):
    cfg = tiny_config()
    cfg.world = WorldConfig(num_users=50, num_items=50_000, coarse_clusters=10, fine_per_coarse=10,
                            latent_dim=4, seed=11)
    cfg.model.layer_presets = ["M", "S"]
    cfg.model.interaction_dim = 8
    cfg.index.layer_sizes = [100]
    cfg.index.index_dim = 8
    cfg.serving.beam = [10]
    cfg.validate()
    world = generate_world(cfg.world)
    schema = default_schema(cfg.world)
    model = build_model(cfg, schema)
    v = model.catalog_embeddings(world.items)
    model.index.set_layers(residual_kmeans(v, [100], 10, np.random.default_rng(0), world.items.ids))
    model.index.frozen_paths = None
    published = model.index.publish(world.items.ids, v)
    model.calibrated = True
    snapshot = split_model(model, str(tmp_path / "snapshot"))
    inverted = build_inverted_index(published, world.items, snapshot)

    reference = MoNNModel(schema, "S", cfg.world.num_tasks)
    brute = brute_force_macs(reference, len(inverted))
    largest = np.sort(inverted.occupancy(0))[::-1][:10].sum()
    budget = RetrievalBudget((10,), None, 50)
    fractions = []
    for user_id in range(20):
        result = retrieve_layerwise(snapshot, inverted, user_request(snapshot, world, user_id), budget)
        report = account_cost(result.cost, brute)
        assert result.cost.evaluations[0] == len(inverted.nodes[0])
        assert result.cost.items_scored <= largest
        assert report.relative_error < 0.01
        assert report.measured < brute
        fractions.append(report.fraction_of_brute_force)
    assert np.mean(fractions) <= 0.15


@pytest.mark.slow
def test_repeated_churn_keeps_the_index_fresh(served):
    world = copy.deepcopy(served.data.world)
    snapshot, inverted = served.snapshot, served.inverted
    budget = RetrievalBudget(tuple(served.cfg.serving.beam), None, 20)
    for cycle in range(100):
        removed, added = churn_items(world, 0.1)
        inverted = apply_churn(inverted, snapshot, world.items)
        assert inverted.revision == cycle + 1
        assert inverted.check_partition()
        live = set(int(i) for i in world.items.ids)
        result = retrieve_layerwise(snapshot, inverted, user_request(snapshot, world, cycle % 40), budget)
        assert set(int(i) for i in result.item_ids) <= live
        assert not any(i in inverted for i in removed)
        if len(added):
            v = snapshot.item_embeddings(catalog_item_batch(snapshot.schema, added))
            for item_id, path in zip(added.ids, snapshot.assign(v)):
                assert inverted.published.path_of(int(item_id)) == tuple(int(k) for k in path)
                for level in range(inverted.num_levels):
                    assert int(item_id) in inverted.postings[level][tuple(int(k) for k in path[:level + 1])]
