"""Histogram-based, leaf-wise gradient-boosted regression trees.

Built for batch-wise continuation: a batch of trees can be trained against
any existing ensemble, which is what the round-based federation needs.
"""

from fedtrees.gbdt.binning import BinSpec, bin_boundaries, build_histograms, bin_matrix
from fedtrees.gbdt.grow import DecisionTree, grow_tree
from fedtrees.gbdt.ensemble import (
    Ensemble,
    FeatureImportance,
    GbdtParams,
    TreeBatch,
    batch_predict,
    boost,
    feature_importance,
    new_ensemble,
    train_batch,
)
from fedtrees.gbdt.serialize import deserialize, load_model, save_model, serialize

__all__ = [
    "BinSpec",
    "DecisionTree",
    "Ensemble",
    "FeatureImportance",
    "GbdtParams",
    "TreeBatch",
    "batch_predict",
    "bin_boundaries",
    "bin_matrix",
    "boost",
    "build_histograms",
    "deserialize",
    "feature_importance",
    "grow_tree",
    "load_model",
    "new_ensemble",
    "save_model",
    "serialize",
    "train_batch",
]
