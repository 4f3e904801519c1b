"""A small dense regression network with parameters as one flat vector.

Keeping parameters flat makes federated averaging a plain weighted sum of
vectors. The architecture is fixed shape: ReLU hidden layers and a single
identity output unit trained on mean squared error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from fedtrees.errors import ConfigError, DataError, ModelFormatError


@dataclass(frozen=True)
class MlpArch:
    n_inputs: int
    hidden: tuple[int, ...] = (64,)

    def __post_init__(self):
        if self.n_inputs < 1:
            raise ConfigError(f"n_inputs must be >= 1, got {self.n_inputs}")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError(f"hidden sizes must all be >= 1, got {self.hidden}")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.n_inputs,) + tuple(self.hidden) + (1,)

    def shapes(self) -> list[tuple[tuple[int, int], tuple[int]]]:
        """Per layer: weight shape ``(fan_out, fan_in)`` and bias shape."""
        sizes = self.layer_sizes
        return [((sizes[i + 1], sizes[i]), (sizes[i + 1],)) for i in range(len(sizes) - 1)]

    @property
    def n_params(self) -> int:
        return sum(w[0] * w[1] + b[0] for w, b in self.shapes())


def init_params(arch: MlpArch, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights, zero biases, flattened layer by layer."""
    chunks = []
    for (fan_out, fan_in), bias_shape in arch.shapes():
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-limit, limit, size=fan_out * fan_in))
        chunks.append(np.zeros(bias_shape[0]))
    return np.concatenate(chunks)


def unflatten(arch: MlpArch, flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    flat = np.asarray(flat, dtype=np.float64)
    if flat.shape != (arch.n_params,):
        raise DataError(f"parameter vector has shape {flat.shape}, expected ({arch.n_params},)")
    layers = []
    pos = 0
    for (fan_out, fan_in), _ in arch.shapes():
        w = flat[pos:pos + fan_out * fan_in].reshape(fan_out, fan_in)
        pos += fan_out * fan_in
        b = flat[pos:pos + fan_out]
        pos += fan_out
        layers.append((w, b))
    return layers


def flatten(layers: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in layers])


def _forward(layers, X):
    """Returns (prediction, pre-activations, activations); keeps what backprop needs."""
    a = X
    zs = []
    acts = [a]
    last = len(layers) - 1
    for li, (w, b) in enumerate(layers):
        z = a @ w.T + b
        zs.append(z)
        a = z if li == last else np.maximum(z, 0.0)
        acts.append(a)
    return a[:, 0], zs, acts


def predict(arch: MlpArch, flat: np.ndarray, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != arch.n_inputs:
        raise DataError(f"feature matrix has shape {X.shape}, expected (*, {arch.n_inputs})")
    out, _, _ = _forward(unflatten(arch, flat), X)
    return out


def mse_loss(arch: MlpArch, flat: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    pred = predict(arch, flat, X)
    return float(np.mean((pred - y) ** 2))


def grad(arch: MlpArch, flat: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Flat gradient of the mean squared error over the batch."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    layers = unflatten(arch, flat)
    pred, zs, acts = _forward(layers, X)
    n = X.shape[0]
    delta = (2.0 / n) * (pred - y)[:, None]
    grads = [None] * len(layers)
    for li in range(len(layers) - 1, -1, -1):
        grads[li] = (delta.T @ acts[li], delta.sum(axis=0))
        if li > 0:
            delta = (delta @ layers[li][0]) * (zs[li - 1] > 0.0)
    return flatten(grads)


@dataclass(frozen=True)
class SgdConfig:
    """Local optimizer settings; ``kind`` is ``"sgd"`` or ``"adam"``."""

    kind: str = "adam"
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> None:
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"optimizer kind must be 'sgd' or 'adam', got {self.kind!r}")
        if self.learning_rate <= 0.0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0.0 <= self.beta1 < 1.0) or not (0.0 <= self.beta2 < 1.0):
            raise ConfigError(f"betas must be in [0, 1), got {self.beta1}/{self.beta2}")
        if self.eps <= 0.0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")


def sgd_epochs(arch: MlpArch, flat: np.ndarray, X: np.ndarray, y: np.ndarray,
               opt: SgdConfig, epochs: int, batch_size: int,
               rng: np.random.Generator) -> np.ndarray:
    """Run ``epochs`` of minibatch training and return the updated vector.

    Rows are reshuffled every epoch; the trailing partial batch is kept.
    Adam moments start at zero on every call, so a federated client's
    optimizer state never leaks across rounds.
    """
    opt.validate()
    if epochs < 1 or batch_size < 1:
        raise ConfigError(f"epochs/batch_size must be >= 1, got {epochs}/{batch_size}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise DataError(f"bad training set: {X.shape[0]} feature rows, {y.shape[0]} targets")
    w = np.array(flat, dtype=np.float64)
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    t = 0
    n = X.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for s in range(0, n, batch_size):
            batch = order[s:s + batch_size]
            g = grad(arch, w, X[batch], y[batch])
            if opt.kind == "sgd":
                w -= opt.learning_rate * g
            else:
                t += 1
                m = opt.beta1 * m + (1.0 - opt.beta1) * g
                v = opt.beta2 * v + (1.0 - opt.beta2) * g * g
                m_hat = m / (1.0 - opt.beta1 ** t)
                v_hat = v / (1.0 - opt.beta2 ** t)
                w -= opt.learning_rate * m_hat / (np.sqrt(v_hat) + opt.eps)
    return w


MLP_FORMAT = "fedtrees-mlp"
MLP_VERSION = 1


def serialize_mlp(arch: MlpArch, flat: np.ndarray, *, context: str = "centralized",
                  feature_names=None) -> str:
    """Canonical JSON for a parameter vector.

    ``context`` records whether the model predicts the pooled aggregate or
    per-zone targets; ``feature_names`` lets later tooling rebuild matching
    inputs.
    """
    if context not in ("centralized", "federated"):
        raise ConfigError(f"context must be 'centralized' or 'federated', got {context!r}")
    flat = np.asarray(flat, dtype=np.float64)
    if flat.shape != (arch.n_params,):
        raise DataError(f"parameter vector has shape {flat.shape}, expected ({arch.n_params},)")
    if feature_names is not None and len(feature_names) != arch.n_inputs:
        raise DataError(
            f"{len(feature_names)} feature names for a {arch.n_inputs}-input network"
        )
    doc = {
        "format": MLP_FORMAT,
        "version": MLP_VERSION,
        "context": context,
        "n_inputs": arch.n_inputs,
        "hidden": list(arch.hidden),
        "feature_names": None if feature_names is None else list(feature_names),
        "params": flat.tolist(),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def deserialize_mlp(text: str) -> tuple[MlpArch, np.ndarray, str, tuple[str, ...] | None]:
    """Inverse of :func:`serialize_mlp`; returns (arch, params, context, feature names)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"invalid network document at byte {exc.pos}: {exc.msg}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MLP_FORMAT:
        raise ModelFormatError(f"not a network parameter document (format {doc.get('format')!r})"
                               if isinstance(doc, dict) else "network document must be an object")
    if doc.get("version") != MLP_VERSION:
        raise ModelFormatError(
            f"unsupported network document version {doc.get('version')!r}, expected {MLP_VERSION}"
        )
    for key in ("context", "n_inputs", "hidden", "params"):
        if key not in doc:
            raise ModelFormatError(f"network document is missing {key!r}")
    arch = MlpArch(n_inputs=int(doc["n_inputs"]), hidden=tuple(int(h) for h in doc["hidden"]))
    flat = np.asarray(doc["params"], dtype=np.float64)
    if flat.shape != (arch.n_params,):
        raise ModelFormatError(
            f"network document carries {flat.shape[0]} parameters, expected {arch.n_params}"
        )
    context = doc["context"]
    if context not in ("centralized", "federated"):
        raise ModelFormatError(f"unknown network context {context!r}")
    names = doc.get("feature_names")
    if names is not None:
        names = tuple(str(n) for n in names)
        if len(names) != arch.n_inputs:
            raise ModelFormatError(
                f"network document names {len(names)} features for {arch.n_inputs} inputs"
            )
    return arch, flat, context, names
