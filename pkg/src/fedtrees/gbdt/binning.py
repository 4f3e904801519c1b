"""Feature binning: quantile bin boundaries and integer bin assignment.

Split candidates are the bin boundaries. Each boundary is the midpoint
between two adjacent representative values (all distinct values when there
are few, quantile points otherwise), so stored thresholds are real data-
scale values rather than bin ids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedtrees.dataset import SupervisedSet
from fedtrees.errors import DataError


@dataclass(frozen=True)
class BinSpec:
    """Per-feature bin boundaries for one training set."""

    boundaries: tuple[np.ndarray, ...]

    @property
    def n_features(self) -> int:
        return len(self.boundaries)

    def n_bins(self) -> np.ndarray:
        return np.array([b.size + 1 for b in self.boundaries], dtype=np.int64)


def bin_boundaries(values: np.ndarray, max_bins: int) -> np.ndarray:
    """Boundaries (candidate thresholds) for one feature column.

    With at most ``max_bins`` distinct values every adjacent pair of
    distinct values contributes a midpoint; otherwise representatives are
    the quantiles at bin centers, which makes bin populations near-equal.
    A constant column gets no boundary and is never splittable.
    """
    values = np.asarray(values, dtype=np.float64)
    distinct = np.unique(values)
    if distinct.size <= 1:
        return np.empty(0, dtype=np.float64)
    if distinct.size <= max_bins:
        reps = distinct
    else:
        centers = (2.0 * np.arange(max_bins) + 1.0) / (2.0 * max_bins)
        reps = np.unique(np.quantile(values, centers))
    return (reps[:-1] + reps[1:]) / 2.0


def build_histograms(train: SupervisedSet, max_bins: int) -> BinSpec:
    """Monotone per-feature boundaries from quantiles; at most ``max_bins`` bins."""
    if train.n_rows == 0:
        raise DataError("cannot bin an empty training set")
    if max_bins < 2:
        raise DataError(f"max_bins must be >= 2, got {max_bins}")
    return BinSpec(
        boundaries=tuple(bin_boundaries(train.features[:, j], max_bins) for j in range(train.n_features))
    )


def bin_matrix(features: np.ndarray, bins: BinSpec) -> np.ndarray:
    """Map raw feature values to bin indices (values <= boundary[b] land in bins <= b)."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[1] != bins.n_features:
        raise DataError(f"{features.shape[1]} feature columns but {bins.n_features} bin specs")
    out = np.empty(features.shape, dtype=np.int32)
    for j, bounds in enumerate(bins.boundaries):
        out[:, j] = np.searchsorted(bounds, features[:, j], side="left").astype(np.int32)
    return out
