"""Versioned JSON serialization for ensembles.

The document is canonical: keys are sorted, separators are fixed, and
floats use Python's shortest round-trip repr. Serializing a deserialized
model therefore reproduces the original document byte for byte, which
makes model equality checkable with a string compare.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from fedtrees.errors import ModelFormatError
from fedtrees.gbdt.ensemble import Ensemble, GbdtParams, TreeBatch
from fedtrees.gbdt.grow import DecisionTree

FORMAT_NAME = "fedtrees-ensemble"
FORMAT_VERSION = 1

_TREE_FIELDS = ("feature", "threshold", "left", "right", "value", "gain", "count", "depth")
_TREE_DTYPES = {
    "feature": np.int32,
    "threshold": np.float64,
    "left": np.int32,
    "right": np.int32,
    "value": np.float64,
    "gain": np.float64,
    "count": np.int64,
    "depth": np.int32,
}


def _tree_doc(tree: DecisionTree) -> dict:
    return {name: getattr(tree, name).tolist() for name in _TREE_FIELDS}


def serialize(model: Ensemble) -> str:
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "params": dataclasses.asdict(model.params),
        "base_score": model.base_score,
        "feature_names": list(model.feature_names),
        "batches": [
            {
                "producer_id": batch.producer_id,
                "round_index": batch.round_index,
                "trees": [_tree_doc(tree) for tree in batch.trees],
            }
            for batch in model.batches
        ],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ModelFormatError(f"model document is missing {key!r} in {where}")
    return doc[key]


def _tree_from_doc(doc: dict, where: str) -> DecisionTree:
    arrays = {}
    for name in _TREE_FIELDS:
        raw = _require(doc, name, where)
        try:
            arrays[name] = np.asarray(raw, dtype=_TREE_DTYPES[name])
        except (TypeError, ValueError) as exc:
            raise ModelFormatError(f"bad {name!r} array in {where}: {exc}") from exc
    n = arrays["feature"].shape[0]
    for name in _TREE_FIELDS:
        if arrays[name].shape != (n,):
            raise ModelFormatError(
                f"node arrays in {where} disagree on length: {name!r} has "
                f"shape {arrays[name].shape}, expected ({n},)"
            )
    if n == 0:
        raise ModelFormatError(f"empty tree in {where}")
    return DecisionTree(**arrays)


def deserialize(text: str) -> Ensemble:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"invalid model document at byte {exc.pos}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ModelFormatError(f"model document must be an object, got {type(doc).__name__}")
    fmt = _require(doc, "format", "document root")
    if fmt != FORMAT_NAME:
        raise ModelFormatError(f"unknown model format {fmt!r}, expected {FORMAT_NAME!r}")
    version = _require(doc, "version", "document root")
    if version != FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported model format version {version!r}, expected {FORMAT_VERSION}"
        )
    raw_params = _require(doc, "params", "document root")
    known = {f.name for f in dataclasses.fields(GbdtParams)}
    unknown = set(raw_params) - known
    if unknown:
        raise ModelFormatError(f"unknown params keys {sorted(unknown)} in model document")
    missing = known - set(raw_params)
    if missing:
        raise ModelFormatError(f"params keys {sorted(missing)} missing from model document")
    params = GbdtParams(**raw_params)
    params.validate()
    batches = []
    for bi, bdoc in enumerate(_require(doc, "batches", "document root")):
        where = f"batch {bi}"
        trees = tuple(
            _tree_from_doc(tdoc, f"{where}, tree {ti}")
            for ti, tdoc in enumerate(_require(bdoc, "trees", where))
        )
        raw_pid = _require(bdoc, "producer_id", where)
        if not isinstance(raw_pid, (int, str)) or isinstance(raw_pid, bool):
            raise ModelFormatError(f"producer_id in {where} must be an id or label, got {raw_pid!r}")
        batches.append(TreeBatch(
            trees=trees,
            producer_id=raw_pid,
            round_index=int(_require(bdoc, "round_index", where)),
        ))
    return Ensemble(
        params=params,
        base_score=float(_require(doc, "base_score", "document root")),
        feature_names=tuple(_require(doc, "feature_names", "document root")),
        batches=tuple(batches),
    )


def save_model(model: Ensemble, path) -> None:
    Path(path).write_text(serialize(model) + "\n", encoding="utf-8")


def load_model(path) -> Ensemble:
    p = Path(path)
    if not p.exists():
        raise ModelFormatError(f"model file not found: {p}")
    return deserialize(p.read_text(encoding="utf-8"))
