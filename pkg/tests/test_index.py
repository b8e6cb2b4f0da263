"""
Tests for LTI soft assignment, the residual chain, the balance regularizer,
k-means layers, index publication and artifact files.
"""

import sys
import os
import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.config import IndexConfig
from src.index import (
    BalanceRegState,
    HierarchicalIndex,
    LTITrainer,
    SchedulerState,
    flops_regularizer,
    hard_paths,
    kmeans_sil,
    load_index_artifact,
    lti_distance,
    lti_index_embedding,
    lti_index_loss,
    lti_soft_assign,
    occupancy,
    occupancy_ratio,
    residual_chain,
    residual_chain_backward,
    residual_kmeans,
    save_index_artifact,
    scheduler_alpha,
    select_representatives,
    soft_assign_backward,
    warmup_weight,
)
from src.lib.errors import ConfigError, DimensionError, SnapshotFormatError, UnknownItemError
from src.lib.tensor_io import read_tensor, write_tensor
from src.numerics import Optimizer, finite_diff_check


def test_distance_examples():
    assert lti_distance(np.array([1.0, 2.0]), np.array([[1.0, 2.0]]))[0] == 0.0
    assert lti_distance(np.array([1.0, 0.0]), np.array([[0.0, 1.0]]))[0] == 2.0
    with pytest.raises(DimensionError):
        lti_distance(np.zeros(3), np.zeros((2, 2)))


def test_soft_assign_examples():
    assert_allclose(lti_soft_assign(np.array([0.3, 1.0, 7.0, 2.0]), 0.0), np.full(4, 0.25))
    assert_array_equal(lti_soft_assign(np.array([5.0]), 3.0), [1.0])
    assert_allclose(lti_soft_assign(np.array([0.0, np.log(2.0)]), 1.0), [2 / 3, 1 / 3])


def test_soft_assign_splits_ties_and_sums_to_one():
    a = lti_soft_assign(np.array([[1.0, 1.0, 4.0], [0.2, 5.0, 0.1]]), 200.0)
    assert_allclose(a.sum(axis=1), 1.0)
    assert_allclose(a[0], [0.5, 0.5, 0.0], atol=1e-12)
    assert np.argmax(a[1]) == 2


def test_negative_temperature_is_rejected():
    with pytest.raises(ConfigError):
        lti_soft_assign(np.zeros(2), -1.0)


def test_index_embedding_mixes_nodes():
    c = np.array([[0.0, 2.0], [4.0, 0.0]])
    assert_array_equal(lti_index_embedding(np.array([0.0, 1.0]), c), [4.0, 0.0])
    assert_array_equal(lti_index_embedding(np.array([0.5, 0.5]), c), [2.0, 1.0])

    rng = np.random.default_rng(0)
    a, c = rng.dirichlet(np.ones(3)), rng.normal(size=(3, 2))
    expected = [sum(a[k] * c[k, i] for k in range(3)) for i in range(2)]
    assert_allclose(lti_index_embedding(a, c), expected)


def test_index_loss_at_zero_dot_is_log_two():
    u = np.array([[1.0, 0.0]])
    c_bar = np.array([[0.0, 3.0]])
    for y in (0, 1):
        loss, _, _ = lti_index_loss(u, c_bar, [y])
        assert_allclose(loss, np.log(2.0))


def test_soft_assign_backward_matches_finite_differences():
    rng = np.random.default_rng(4)
    v = rng.normal(size=(5, 3))
    c = rng.normal(size=(4, 3))
    g = rng.normal(size=(5, 4))
    alpha = 0.8

    def loss():
        return float((lti_soft_assign(lti_distance(v, c), alpha) * g).sum())

    a = lti_soft_assign(lti_distance(v, c), alpha)
    grad_v, grad_c = soft_assign_backward(v, c, a, alpha, g)
    report = finite_diff_check(loss, {"v": v, "c": c}, {"v": grad_v, "c": grad_c})
    assert report.passed, report.per_param


def test_scheduler_alpha():
    state = SchedulerState(max_alpha=50.0, exp=2.0, max_iters=100)
    assert scheduler_alpha(state) == 0.0
    state.current_iter = 50
    assert_allclose(scheduler_alpha(state), 12.5)
    state.current_iter = 100
    assert scheduler_alpha(state) == 50.0
    state.current_iter = 400
    assert scheduler_alpha(state) == 50.0


def test_warmup_weight():
    assert warmup_weight(0, 10, 2.0) == 0.0
    assert warmup_weight(5, 10, 2.0) == 1.0
    assert warmup_weight(10, 10, 2.0) == 2.0
    assert warmup_weight(30, 10, 2.0) == 2.0


def test_balance_penalty_bounds():
    K = 4
    state = BalanceRegState(k_batches=1)
    uniform, _ = flops_regularizer(state, np.full((6, K), 1.0 / K))
    assert_allclose(uniform, 1.0 / K)
    one_node = np.zeros((6, K))
    one_node[:, 2] = 1.0
    assert_allclose(flops_regularizer(state, one_node)[0], 1.0)

    rng = np.random.default_rng(0)
    for _ in range(50):
        assert flops_regularizer(state, rng.dirichlet(np.ones(K), size=6))[0] >= 1.0 / K - 1e-12


def test_balance_window_drops_oldest_batches():
    state = BalanceRegState(k_batches=2)
    for value in (1.0, 2.0, 3.0):
        state.push(np.full((1, 1), value))
    assert_array_equal(state.pooled().ravel(), [2.0, 3.0])
    assert_array_equal(state.pooled(np.full((1, 1), 9.0)).ravel(), [3.0, 9.0])


def test_balance_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    state = BalanceRegState(k_batches=3)
    state.push(rng.dirichlet(np.ones(5), size=4))
    state.push(rng.dirichlet(np.ones(5), size=4))
    current = rng.dirichlet(np.ones(5), size=4)
    _, grad = flops_regularizer(state, current)
    report = finite_diff_check(lambda: flops_regularizer(state, current)[0], {"a": current}, {"a": grad})
    assert report.passed, report.per_param


def test_residual_chain_degenerate_cases():
    v = np.array([[1.0, -2.0], [0.5, 0.5]])
    exact = residual_chain(v, [v.copy()], hard=True)
    assert exact.reconstruction_loss() == 0.0

    zeros = residual_chain(v, [np.zeros((3, 2)), np.zeros((2, 2))], alphas=1.0)
    assert_array_equal(zeros.q[-1], 0.0)
    assert_allclose(zeros.reconstruction_loss(), np.mean((v ** 2).sum(axis=1)))


def test_residual_chain_backward_matches_finite_differences():
    rng = np.random.default_rng(2)
    v = rng.normal(size=(6, 3))
    codebooks = [rng.normal(size=(3, 3)), rng.normal(0.0, 0.5, size=(4, 3))]
    alphas = [1.5, 0.7]
    gq = [rng.normal(size=(6, 3)), rng.normal(size=(6, 3))]
    ga = [rng.normal(size=(6, 3)), rng.normal(size=(6, 4))]
    recon = 0.3

    def loss():
        chain = residual_chain(v, codebooks, alphas)
        total = recon * chain.reconstruction_loss()
        for n in range(2):
            total += float((gq[n] * chain.q[n]).sum() + (ga[n] * chain.assignments[n]).sum())
        return total

    chain = residual_chain(v, codebooks, alphas)
    grad_v, grad_c = residual_chain_backward(chain, codebooks, gq, ga, recon)
    params = {"v": v, "c0": codebooks[0], "c1": codebooks[1]}
    report = finite_diff_check(loss, params, {"v": grad_v, "c0": grad_c[0], "c1": grad_c[1]})
    assert report.passed, report.per_param


def test_hard_chain_has_no_gradient():
    chain = residual_chain(np.ones((2, 2)), [np.eye(2)], hard=True)
    with pytest.raises(ValueError):
        residual_chain_backward(chain, [np.eye(2)])


def test_representatives_examples():
    x = np.array([[0.0, 0.0], [1.0, 1.0], [5.0, 5.0]])
    ids = np.array([10, 11, 12])
    assert_array_equal(select_representatives(x, ids, np.array([[4.0, 4.5]])), [12])
    assert_array_equal(select_representatives(x, ids, np.array([[1.0, 1.0], [0.0, 0.0]])), [11, 10])


def test_representatives_match_exhaustive_search():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(20, 3))
    ids = rng.permutation(100)[:20]
    c = rng.normal(size=(4, 3))
    reps = select_representatives(x, ids, c)
    for k in range(4):
        best = min(range(20), key=lambda j: (float(((x[j] - c[k]) ** 2).sum()), ids[j]))
        assert reps[k] == ids[best]


def test_representative_ties_go_to_lowest_id():
    x = np.array([[1.0], [-1.0]])
    assert_array_equal(select_representatives(x, [7, 3], np.array([[0.0]])), [3])


def test_kmeans_with_one_node_per_point_is_exact():
    x = np.random.default_rng(0).normal(size=(6, 2))
    layer = kmeans_sil(x, 6, iters=10, rng=np.random.default_rng(1))
    assert_allclose(layer.codebook[layer.mapping], x)
    assert sorted(layer.representatives) == list(range(6))


def test_kmeans_recovers_planted_partition():
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    planted = np.repeat(np.arange(3), 7)
    x = centers[planted]
    layer = kmeans_sil(x, 3, iters=20, rng=np.random.default_rng(5))
    relabel = {}
    for node, truth in zip(layer.mapping, planted):
        assert relabel.setdefault(int(node), int(truth)) == truth
    assert len(relabel) == 3
    assert_array_equal(layer.occupancy(), [7, 7, 7])


def test_residual_kmeans_levels_fit_the_residual():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(40, 3))
    layers = residual_kmeans(x, [4, 3], iters=25, rng=rng)
    assert [layer.num_nodes for layer in layers] == [4, 3]
    coarse = x - layers[0].codebook[layers[0].mapping]
    fine = coarse - layers[1].codebook[layers[1].mapping]
    assert (fine ** 2).sum() <= (coarse ** 2).sum()


def _planted_index():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(30, 2))
    index = HierarchicalIndex([3, 2], 2)
    index.init_from_embeddings(v, rng)
    ids = np.arange(100, 130)
    return index, ids, v


def test_publish_uses_argmin_paths():
    index, ids, v = _planted_index()
    published = index.publish(ids[::-1], v[::-1])
    assert published.version == 1
    assert_array_equal(published.item_ids, ids)
    assert_array_equal(published.paths, hard_paths(index.codebooks, v))

    first = lti_distance(v, index.codebooks[0]).argmin(axis=1)
    assert_array_equal(published.paths[:, 0], first)
    assert published.path_of(105) == tuple(published.paths[5])
    with pytest.raises(UnknownItemError):
        published.path_of(7)
    assert index.publish(ids, v).version == 2


def test_published_arrays_are_read_only():
    index, ids, v = _planted_index()
    published = index.publish(ids, v)
    with pytest.raises(ValueError):
        published.paths[0, 0] = 1


def test_occupancy_counts_empty_nodes():
    paths = np.array([[0, 1], [0, 1], [2, 0]])
    assert_array_equal(occupancy(paths, 0, 4), [2, 0, 1, 0])
    assert_allclose(occupancy_ratio(paths, 0, 4), 2 / 0.75)
    assert_allclose(occupancy_ratio(paths, 1, 2), 2 / 1.5)


def test_frozen_paths_override_argmin():
    index, ids, v = _planted_index()
    layers = residual_kmeans(v, [3, 2], iters=5, rng=np.random.default_rng(1), item_ids=ids)
    index.set_layers(layers)
    codes = index.paths_for(ids, v)
    assert_array_equal(codes[:, 0], layers[0].mapping)
    assert_array_equal(codes[:, 1], layers[1].mapping)


def test_codebook_shape_mismatch_is_a_dimension_error():
    with pytest.raises(DimensionError):
        HierarchicalIndex([3], 2, codebooks=[np.zeros((3, 4))])


def test_trainer_follows_schedule_and_moves_codebooks():
    index, _, v = _planted_index()
    before = [c.copy() for c in index.codebooks]
    config = IndexConfig(layer_sizes=[3, 2], max_alpha=50.0, exp=2.0, balance=True, recon_weight=1.0)
    trainer = LTITrainer(index, config, Optimizer("sgd", 0.05), total_steps=10)
    trace = trainer.fit(v, num_steps=10, batch_size=8, rng=np.random.default_rng(0))
    assert len(trace) == 10
    assert trace["alpha"].iloc[0] == 0.0
    assert_allclose(trace["alpha"].iloc[5], 50.0 * 0.25)
    assert {"balance", "recon"} <= set(trace.columns)
    assert any(not np.array_equal(a, b) for a, b in zip(before, index.codebooks))


def test_trainer_without_balance_skips_the_term():
    index, _, v = _planted_index()
    config = IndexConfig(layer_sizes=[3, 2], balance=False, scheduler=False, recon_weight=1.0)
    trainer = LTITrainer(index, config, Optimizer("sgd", 0.05), total_steps=5)
    row = trainer.step(v)
    assert "balance" not in row
    assert row["alpha"] == config.max_alpha


def test_artifact_round_trip(tmp_path):
    index, ids, v = _planted_index()
    published = index.publish(ids, v)
    path = str(tmp_path / "index")
    save_index_artifact(path, published)
    loaded = load_index_artifact(path)
    assert loaded.version == published.version
    assert loaded.fingerprint() == published.fingerprint()


def test_artifact_with_unknown_format_is_rejected(tmp_path):
    index, ids, v = _planted_index()
    path = str(tmp_path / "index")
    save_index_artifact(path, index.publish(ids, v))
    manifest_path = os.path.join(path, "manifest.json")
    with open(manifest_path) as f:
        manifest = json.load(f)
    manifest["format_version"] = 99
    with open(manifest_path, "w") as f:
        json.dump(manifest, f)
    with pytest.raises(SnapshotFormatError):
        load_index_artifact(path)


def test_missing_artifact_is_rejected(tmp_path):
    with pytest.raises(SnapshotFormatError):
        load_index_artifact(str(tmp_path / "nothing"))


def test_tensor_file_layout(tmp_path):
    path = str(tmp_path / "codebook.tensor")
    array = np.arange(6, dtype=np.float64).reshape(2, 3)
    write_tensor(path, array)
    raw = open(path, "rb").read()
    assert len(raw) == 8 * 3 + 8 * 6
    assert_array_equal(np.frombuffer(raw[:24], dtype="<i8"), [2, 2, 3])
    assert_array_equal(np.frombuffer(raw[24:], dtype="<f8"), array.ravel())
    assert_array_equal(read_tensor(path), array)


def test_truncated_tensor_is_rejected(tmp_path):
    path = str(tmp_path / "codebook.tensor")
    write_tensor(path, np.ones((4, 2)))
    raw = open(path, "rb").read()
    open(path, "wb").write(raw[:-8])
    with pytest.raises(SnapshotFormatError):
        read_tensor(path)
