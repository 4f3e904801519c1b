"""Gradient-boosted ensembles built from batches of trees.

An :class:`Ensemble` is immutable: training a batch of trees against it
yields a :class:`TreeBatch`, and :meth:`Ensemble.with_batch` returns a new
ensemble with that batch appended. Batches carry the id of the client that
produced them and the round they were accepted in, which is what a
federated server needs to reconstruct training history from the model
alone.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from fedtrees.dataset import SupervisedSet
from fedtrees.errors import ConfigError, DataError
from fedtrees.gbdt.binning import BinSpec, bin_matrix, build_histograms
from fedtrees.gbdt.grow import DecisionTree, grow_tree_binned


@dataclass(frozen=True)
class GbdtParams:
    """Boosting hyperparameters. ``base_score=None`` means the train-set mean."""

    num_leaves: int = 30
    max_depth: int = 12
    learning_rate: float = 0.078
    batch_size: int = 10
    min_data_in_leaf: int = 20
    max_bins: int = 255
    lambda_l2: float = 0.0
    base_score: float | None = None

    def validate(self) -> None:
        if self.num_leaves < 2:
            raise ConfigError(f"num_leaves must be >= 2, got {self.num_leaves}")
        if self.max_depth < 1:
            raise ConfigError(f"max_depth must be >= 1, got {self.max_depth}")
        if not (0.0 < self.learning_rate <= 1.0):
            raise ConfigError(f"learning_rate must be in (0, 1], got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.min_data_in_leaf < 1:
            raise ConfigError(f"min_data_in_leaf must be >= 1, got {self.min_data_in_leaf}")
        if self.max_bins < 2:
            raise ConfigError(f"max_bins must be >= 2, got {self.max_bins}")
        if self.lambda_l2 < 0.0:
            raise ConfigError(f"lambda_l2 must be >= 0, got {self.lambda_l2}")


@dataclass(frozen=True)
class TreeBatch:
    """A consecutive run of trees grown by one producer in one round.

    ``producer_id`` is a client id or the string ``"centralized"``;
    ``round_index`` is 1-based.
    """

    trees: tuple[DecisionTree, ...]
    producer_id: int | str
    round_index: int

    def __post_init__(self):
        if self.round_index < 1:
            raise ConfigError(f"round_index must be >= 1, got {self.round_index}")

    def __len__(self) -> int:
        return len(self.trees)


@dataclass(frozen=True)
class Ensemble:
    params: GbdtParams
    base_score: float
    feature_names: tuple[str, ...]
    batches: tuple[TreeBatch, ...] = ()

    @property
    def n_trees(self) -> int:
        return sum(len(b) for b in self.batches)

    @property
    def n_batches(self) -> int:
        return len(self.batches)

    def with_batch(self, batch: TreeBatch) -> "Ensemble":
        return replace(self, batches=self.batches + (batch,))

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Sum of base score and learning-rate-scaled tree outputs."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise DataError(
                f"feature matrix has shape {X.shape}, expected (*, {len(self.feature_names)})"
            )
        out = np.full(X.shape[0], self.base_score, dtype=np.float64)
        lr = self.params.learning_rate
        for batch in self.batches:
            for tree in batch.trees:
                out += lr * tree.apply(X)
        return out


def new_ensemble(params: GbdtParams, train: SupervisedSet) -> Ensemble:
    """Empty ensemble for ``train``, resolving a default base score to its target mean."""
    params.validate()
    base = params.base_score
    if base is None:
        base = float(np.mean(train.target))
    return Ensemble(params=params, base_score=base, feature_names=train.feature_names)


def batch_predict(batch: TreeBatch, X: np.ndarray, learning_rate: float) -> np.ndarray:
    """Margin contribution of one batch: learning-rate-scaled sum of its trees."""
    out = np.zeros(X.shape[0], dtype=np.float64)
    for tree in batch.trees:
        out += learning_rate * tree.apply(X)
    return out


def train_batch(base: Ensemble, train: SupervisedSet, *, round_index: int,
                producer_id: int | str = "centralized", bins: BinSpec | None = None,
                binned: np.ndarray | None = None,
                base_margin: np.ndarray | None = None) -> TreeBatch:
    """Boost one batch of trees against ``base`` on squared error.

    Each tree fits gradients ``g = margin - y`` with unit hessians, and the
    margin advances by the learning-rate-scaled tree output before the next
    tree, so trees within a batch are sequential boosting steps.
    ``base_margin`` (the base ensemble's predictions on ``train``) skips the
    full-ensemble predict when the caller is tracking margins incrementally.
    """
    params = base.params
    if train.feature_names != base.feature_names:
        raise DataError(
            f"training features {train.feature_names} do not match model features "
            f"{base.feature_names}"
        )
    if bins is None:
        bins = build_histograms(train, params.max_bins)
    if binned is None:
        binned = bin_matrix(train.features, bins)
    if base_margin is None:
        margin = base.predict(train.features)
    else:
        margin = np.array(base_margin, dtype=np.float64)
        if margin.shape != (train.n_rows,):
            raise DataError(
                f"base margin has shape {margin.shape}, expected ({train.n_rows},)"
            )
    y = train.target
    trees = []
    for _ in range(params.batch_size):
        g = margin - y
        h = np.ones_like(g)
        tree = grow_tree_binned(binned, g, h, bins, params.num_leaves,
                                params.max_depth, params.min_data_in_leaf,
                                params.lambda_l2)
        trees.append(tree)
        margin = margin + params.learning_rate * tree.apply(train.features)
    return TreeBatch(trees=tuple(trees), producer_id=producer_id, round_index=round_index)


def boost(train: SupervisedSet, params: GbdtParams, n_batches: int, *,
          producer_id: int | str = "centralized",
          on_batch=None) -> Ensemble:
    """Train ``n_batches`` consecutive batches on one data set.

    ``on_batch(round_index, model, margin)`` runs after each batch is
    appended; returning True stops training early (used for validation-based
    stopping without retraining).
    """
    model = new_ensemble(params, train)
    bins = build_histograms(train, params.max_bins)
    binned = bin_matrix(train.features, bins)
    margin = np.full(train.n_rows, model.base_score, dtype=np.float64)
    for r in range(1, n_batches + 1):
        batch = train_batch(model, train, round_index=r, producer_id=producer_id,
                            bins=bins, binned=binned, base_margin=margin)
        model = model.with_batch(batch)
        margin = margin + batch_predict(batch, train.features, params.learning_rate)
        if on_batch is not None and on_batch(r, model, margin):
            break
    return model


@dataclass(frozen=True)
class FeatureImportance:
    """Per-feature split counts and total split gain across an ensemble."""

    feature_names: tuple[str, ...]
    split_counts: np.ndarray
    gain_totals: np.ndarray

    def ranked(self, by: str = "gain") -> list[tuple[str, float]]:
        """Features sorted by descending importance; ties keep feature order."""
        if by == "gain":
            values = self.gain_totals
        elif by == "splits":
            values = self.split_counts.astype(np.float64)
        else:
            raise ConfigError(f"unknown importance kind {by!r}, expected 'gain' or 'splits'")
        order = np.argsort(-values, kind="stable")
        return [(self.feature_names[i], float(values[i])) for i in order]


def feature_importance(model: Ensemble) -> FeatureImportance:
    f = len(model.feature_names)
    counts = np.zeros(f, dtype=np.int64)
    gains = np.zeros(f, dtype=np.float64)
    for batch in model.batches:
        for tree in batch.trees:
            for nd in range(tree.n_nodes):
                j = int(tree.feature[nd])
                if j >= 0:
                    counts[j] += 1
                    gains[j] += float(tree.gain[nd])
    return FeatureImportance(feature_names=model.feature_names,
                             split_counts=counts, gain_totals=gains)
