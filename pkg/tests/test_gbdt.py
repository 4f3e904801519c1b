import json

import numpy as np
import pytest

from conftest import make_regression
from fedtrees.errors import ConfigError, DataError, ModelFormatError
from fedtrees.gbdt import (
    Ensemble,
    GbdtParams,
    TreeBatch,
    batch_predict,
    bin_matrix,
    boost,
    build_histograms,
    deserialize,
    feature_importance,
    grow_tree,
    new_ensemble,
    serialize,
    train_batch,
)
from fedtrees.gbdt.binning import bin_boundaries


# --- binning ---------------------------------------------------------------


def test_bin_boundaries_few_distinct_values_use_midpoints():
    values = np.array([1.0, 1.0, 2.0, 4.0])
    np.testing.assert_array_equal(bin_boundaries(values, 255), [1.5, 3.0])


def test_bin_boundaries_constant_column_unsplittable():
    assert bin_boundaries(np.full(10, 3.3), 255).size == 0


def test_bin_boundaries_capped_by_max_bins():
    rng = np.random.default_rng(0)
    values = rng.uniform(size=10_000)
    bounds = bin_boundaries(values, 16)
    assert bounds.size <= 15
    assert np.all(np.diff(bounds) > 0)


def test_bin_matrix_left_semantics():
    spec = build_histograms(make_regression(50, 2, seed=1), max_bins=8)
    binned = bin_matrix(np.array([[spec.boundaries[0][0], 0.5]]), spec)
    # a value exactly on a boundary lands in the bin left of it
    assert binned[0, 0] == 0


def test_bin_matrix_shape_mismatch():
    spec = build_histograms(make_regression(20, 2, seed=2), max_bins=8)
    with pytest.raises(DataError):
        bin_matrix(np.zeros((3, 5)), spec)


# --- single tree grower ----------------------------------------------------


def _reference_first_split(binned, g, h, n_bins, min_data, lam):
    """Brute-force scan of every (feature, bin) candidate at the root.

    Mirrors the histogram arithmetic (sequential accumulation) so gains are
    comparable bit for bit; returns (feature, bin, gain) or None.
    """
    n, f = binned.shape
    if n < 2 * min_data:
        return None
    total_g = 0.0
    total_h = 0.0
    for i in range(n):
        total_g += g[i]
        total_h += h[i]
    parent = total_g * total_g / (total_h + lam)
    best = (0.0, -1, -1)
    for j in range(f):
        hist_g = [0.0] * int(n_bins[j])
        hist_h = [0.0] * int(n_bins[j])
        hist_c = [0] * int(n_bins[j])
        for i in range(n):
            b = binned[i, j]
            hist_g[b] += g[i]
            hist_h[b] += h[i]
            hist_c[b] += 1
        gl = hl = 0.0
        cl = 0
        for b in range(int(n_bins[j]) - 1):
            gl += hist_g[b]
            hl += hist_h[b]
            cl += hist_c[b]
            if cl < min_data:
                continue
            if n - cl < min_data:
                break
            gr = total_g - gl
            hr = total_h - hl
            gain = gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent
            if gain > best[0]:
                best = (gain, j, b)
    if best[1] < 0:
        return None
    return best[1], best[2], best[0]


@pytest.mark.parametrize("seed", range(12))
def test_first_split_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(6, 51))
    f = int(rng.integers(1, 5))
    min_data = int(rng.integers(1, 4))
    lam = float(rng.choice([0.0, 1.5]))
    train = make_regression(n, f, seed=seed + 100)
    g = train.target - train.target.mean()
    h = np.ones(n)
    params = GbdtParams(
        num_leaves=2, max_depth=6, min_data_in_leaf=min_data, lambda_l2=lam, max_bins=8
    )
    bins = build_histograms(train, params.max_bins)
    binned = bin_matrix(train.features, bins)
    tree = grow_tree(g, h, train, params, bins=bins)
    expected = _reference_first_split(binned, g, h, bins.n_bins(), min_data, lam)
    if expected is None:
        assert tree.n_nodes == 1 and tree.feature[0] == -1
    else:
        j, b, _ = expected
        assert tree.feature[0] == j
        assert tree.threshold[0] == bins.boundaries[j][b]
        assert tree.count[1] == int(np.sum(binned[:, j] <= b))


def test_stump_when_too_few_rows():
    train = make_regression(5, 2, seed=0)
    g = train.target.copy()
    tree = grow_tree(g, np.ones(5), train, GbdtParams(min_data_in_leaf=3, num_leaves=4))
    assert tree.n_nodes == 1
    # stump value is the regularized mean of the negative gradient
    assert tree.value[0] == pytest.approx(-g.sum() / 5.0)


def test_stump_value_with_regularization():
    train = make_regression(10, 1, seed=3)
    g = train.target.copy()
    tree = grow_tree(
        g,
        np.ones(10),
        train,
        GbdtParams(min_data_in_leaf=10, num_leaves=4, lambda_l2=2.5),
    )
    assert tree.n_nodes == 1
    assert tree.value[0] == pytest.approx(-g.sum() / 12.5)


def _reference_grow(binned, g, h, bins, params):
    """Plain-Python leaf-wise grower with the same tie rules as the kernel."""
    n, f = binned.shape
    n_bins = bins.n_bins()
    lam = params.lambda_l2
    min_data = params.min_data_in_leaf

    nodes = []  # dicts: rows, depth, feat, bin, left, right, value, gain

    def scan(rows):
        if rows.size < 2 * min_data:
            return (0.0, -1, -1)
        total_g = 0.0
        total_h = 0.0
        for i in rows:
            total_g += g[i]
            total_h += h[i]
        parent = total_g * total_g / (total_h + lam)
        best = (0.0, -1, -1)
        for j in range(f):
            hist_g = [0.0] * int(n_bins[j])
            hist_h = [0.0] * int(n_bins[j])
            hist_c = [0] * int(n_bins[j])
            for i in rows:
                b = binned[i, j]
                hist_g[b] += g[i]
                hist_h[b] += h[i]
                hist_c[b] += 1
            gl = hl = 0.0
            cl = 0
            for b in range(int(n_bins[j]) - 1):
                gl += hist_g[b]
                hl += hist_h[b]
                cl += hist_c[b]
                if cl < min_data:
                    continue
                if rows.size - cl < min_data:
                    break
                gr = total_g - gl
                hr = total_h - hl
                gain = gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent
                if gain > best[0]:
                    best = (gain, j, b)
        return best

    def add_node(rows, depth):
        nodes.append(
            {
                "rows": rows,
                "depth": depth,
                "feat": -1,
                "bin": -1,
                "left": -1,
                "right": -1,
                "cand": scan(rows) if depth < params.max_depth else (0.0, -1, -1),
                "open": True,
            }
        )

    add_node(np.arange(n), 0)
    leaves = 1
    while leaves < params.num_leaves:
        chosen, best = -1, 0.0
        for nd, node in enumerate(nodes):
            if node["open"] and node["cand"][0] > best:
                best, chosen = node["cand"][0], nd
        if chosen < 0:
            break
        node = nodes[chosen]
        gain, j, b = node["cand"]
        rows = node["rows"]
        mask = binned[rows, j] <= b
        node["feat"], node["bin"] = j, b
        node["open"] = False
        node["gain"] = gain
        node["left"] = len(nodes)
        add_node(rows[mask], node["depth"] + 1)
        node["right"] = len(nodes)
        add_node(rows[~mask], node["depth"] + 1)
        leaves += 1

    values = {}
    for nd, node in enumerate(nodes):
        if node["feat"] < 0:
            sg = 0.0
            sh = 0.0
            for i in node["rows"]:
                sg += g[i]
                sh += h[i]
            values[nd] = -sg / (sh + lam)
    return nodes, values


@pytest.mark.parametrize("seed", range(8))
def test_full_tree_matches_reference(seed):
    rng = np.random.default_rng(200 + seed)
    n = int(rng.integers(30, 61))
    train = make_regression(n, 3, seed=seed)
    g = train.target - float(train.target.mean())
    h = np.ones(n)
    params = GbdtParams(num_leaves=5, max_depth=3, min_data_in_leaf=2, max_bins=8)
    bins = build_histograms(train, params.max_bins)
    binned = bin_matrix(train.features, bins)
    tree = grow_tree(g, h, train, params, bins=bins)
    nodes, values = _reference_grow(binned, g, h, bins, params)

    assert tree.n_nodes == len(nodes)
    for nd, node in enumerate(nodes):
        assert tree.feature[nd] == node["feat"]
        assert tree.left[nd] == node["left"]
        assert tree.right[nd] == node["right"]
        assert tree.count[nd] == node["rows"].size
        assert tree.depth[nd] == node["depth"]
        if node["feat"] >= 0:
            assert tree.threshold[nd] == bins.boundaries[node["feat"]][node["bin"]]
        else:
            assert tree.value[nd] == pytest.approx(values[nd], abs=1e-12)
    assert tree.n_leaves <= params.num_leaves
    assert tree.max_node_depth <= params.max_depth


def test_apply_routes_by_threshold():
    train = make_regression(200, 2, seed=9)
    g = train.target - float(train.target.mean())
    tree = grow_tree(g, np.ones(200), train, GbdtParams(num_leaves=8, min_data_in_leaf=5))
    preds = tree.apply(train.features)
    # rows in the same leaf share a value; leaf count matches distinct outputs
    assert np.unique(preds).size <= tree.n_leaves
    # routing a leaf's own training rows reproduces that leaf's value
    assert np.all(np.isin(preds, tree.value[tree.feature < 0]))


def test_grow_tree_length_mismatch():
    train = make_regression(20, 2, seed=0)
    with pytest.raises(DataError):
        grow_tree(np.zeros(19), np.ones(20), train, GbdtParams())


# --- params / ensemble -----------------------------------------------------


def test_params_validation():
    with pytest.raises(ConfigError):
        GbdtParams(num_leaves=1).validate()
    with pytest.raises(ConfigError):
        GbdtParams(learning_rate=0.0).validate()
    with pytest.raises(ConfigError):
        GbdtParams(batch_size=0).validate()
    with pytest.raises(ConfigError):
        GbdtParams(max_bins=1).validate()
    GbdtParams().validate()


def test_new_ensemble_base_score_resolution(regression):
    train = regression(50, 2, 4)
    auto = new_ensemble(GbdtParams(), train)
    assert auto.base_score == pytest.approx(float(train.target.mean()))
    fixed = new_ensemble(GbdtParams(base_score=0.25), train)
    assert fixed.base_score == 0.25


def test_predict_is_base_plus_scaled_tree_sums(regression):
    train = regression(300, 3, 5)
    params = GbdtParams(batch_size=3, learning_rate=0.1)
    model = boost(train, params, 2)
    manual = np.full(train.n_rows, model.base_score)
    for batch in model.batches:
        for tree in batch.trees:
            manual = manual + params.learning_rate * tree.apply(train.features)
    np.testing.assert_array_equal(model.predict(train.features), manual)


def test_boost_round_indices_and_producer(regression):
    model = boost(regression(120, 2, 6), GbdtParams(batch_size=2), 3, producer_id=7)
    assert [b.round_index for b in model.batches] == [1, 2, 3]
    assert all(b.producer_id == 7 for b in model.batches)
    assert all(len(b.trees) == 2 for b in model.batches)


def test_boost_on_batch_early_stop(regression):
    seen = []

    def stop_after_two(r, model, margin):
        seen.append((r, len(model.batches), margin.shape))
        return r == 2

    model = boost(regression(100, 2, 7), GbdtParams(batch_size=1), 10, on_batch=stop_after_two)
    assert len(model.batches) == 2
    assert [s[0] for s in seen] == [1, 2]


def test_train_batch_equals_boost_round(regression):
    train = regression(150, 3, 8)
    params = GbdtParams(batch_size=4)
    model = boost(train, params, 1, producer_id="centralized")
    base = new_ensemble(params, train)
    batch = train_batch(base, train, round_index=1)
    assert serialize(base.with_batch(batch)) == serialize(model)


def test_batch_predict_sums_batch_trees(regression):
    train = regression(80, 2, 9)
    params = GbdtParams(batch_size=3, learning_rate=0.2)
    batch = train_batch(new_ensemble(params, train), train, round_index=1)
    out = batch_predict(batch, train.features, params.learning_rate)
    manual = np.zeros(train.n_rows)
    for tree in batch.trees:
        manual += params.learning_rate * tree.apply(train.features)
    np.testing.assert_array_equal(out, manual)


def test_tree_batch_requires_positive_round():
    with pytest.raises(ConfigError):
        TreeBatch(trees=(), producer_id=0, round_index=0)


def test_training_error_decreases(regression):
    train = regression(500, 4, 10, noise=0.05)
    model = boost(train, GbdtParams(batch_size=5), 8)
    mse = float(np.mean((model.predict(train.features) - train.target) ** 2))
    base = float(np.var(train.target))
    assert mse < base * 0.1


# --- serialization ---------------------------------------------------------


def test_serialize_round_trip_byte_identical(regression):
    model = boost(regression(150, 3, 11), GbdtParams(batch_size=2), 3, producer_id=1)
    text = serialize(model)
    again = serialize(deserialize(text))
    assert text == again


def test_deserialize_preserves_predictions(regression):
    train = regression(150, 3, 12)
    model = boost(train, GbdtParams(batch_size=2), 3)
    back = deserialize(serialize(model))
    np.testing.assert_array_equal(back.predict(train.features), model.predict(train.features))
    assert back.feature_names == model.feature_names


def test_deserialize_rejects_garbage():
    with pytest.raises(ModelFormatError):
        deserialize("not json at all")
    with pytest.raises(ModelFormatError):
        deserialize("[1, 2, 3]")


def test_deserialize_rejects_foreign_format(regression):
    doc = json.loads(serialize(boost(regression(60, 2, 13), GbdtParams(batch_size=1), 1)))
    doc["format"] = "something-else"
    with pytest.raises(ModelFormatError, match="format"):
        deserialize(json.dumps(doc))
    doc = json.loads(serialize(boost(regression(60, 2, 13), GbdtParams(batch_size=1), 1)))
    doc["version"] = 99
    with pytest.raises(ModelFormatError, match="version"):
        deserialize(json.dumps(doc))


def test_deserialize_rejects_missing_and_unknown_param_keys(regression):
    text = serialize(boost(regression(60, 2, 14), GbdtParams(batch_size=1), 1))
    doc = json.loads(text)
    del doc["params"]["num_leaves"]
    with pytest.raises(ModelFormatError):
        deserialize(json.dumps(doc))
    doc = json.loads(text)
    doc["params"]["mystery"] = 5
    with pytest.raises(ModelFormatError):
        deserialize(json.dumps(doc))


def test_serialized_batch_metadata_round_trips(regression):
    train = regression(60, 2, 15)
    params = GbdtParams(batch_size=1)
    model = new_ensemble(params, train)
    model = model.with_batch(train_batch(model, train, round_index=1, producer_id=2))
    back = deserialize(serialize(model))
    assert back.batches[0].producer_id == 2
    assert back.batches[0].round_index == 1


# --- feature importance ----------------------------------------------------


def test_feature_importance_counts_match_tree_walk(regression):
    train = regression(400, 4, 16)
    model = boost(train, GbdtParams(batch_size=3), 4)
    imp = feature_importance(model)
    manual_counts = np.zeros(4, dtype=np.int64)
    manual_gain = np.zeros(4)
    for batch in model.batches:
        for tree in batch.trees:
            for nd in range(tree.n_nodes):
                if tree.feature[nd] >= 0:
                    manual_counts[tree.feature[nd]] += 1
                    manual_gain[tree.feature[nd]] += tree.gain[nd]
    np.testing.assert_array_equal(imp.split_counts, manual_counts)
    np.testing.assert_allclose(imp.gain_totals, manual_gain)
    assert imp.feature_names == train.feature_names


def test_feature_importance_ranking_orders_and_ties():
    # stable tie handling: equal values keep canonical feature order
    from fedtrees.gbdt.ensemble import FeatureImportance

    imp = FeatureImportance(
        feature_names=("a", "b", "c"),
        split_counts=np.array([2, 5, 2]),
        gain_totals=np.array([1.0, 9.0, 1.0]),
    )
    assert [n for n, _ in imp.ranked(by="gain")] == ["b", "a", "c"]
    assert [n for n, _ in imp.ranked(by="splits")] == ["b", "a", "c"]
    with pytest.raises(ConfigError):
        imp.ranked(by="nope")
