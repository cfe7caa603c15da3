"""MLP encoder, class-proxy classifier, contrastive/CE losses and plain SGD."""

from __future__ import annotations

import json
import os
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor

CHECKPOINT_FORMAT = "acr-checkpoint"
CHECKPOINT_VERSION = 1


class DegenerateBatchError(ValueError):
    """The batch covers a single class, so the contrastive loss is identically zero."""


class Encoder:
    """Fully connected ReLU network mapping inputs to embeddings.

    ``hidden=()`` gives a single linear map, which is handy for tests.
    The last layer has no activation.
    """

    def __init__(self, input_dim: int, hidden: Sequence[int] = (64,), embed_dim: int = 32,
                 bias: bool = True, rng: Optional[np.random.Generator] = None):
        if input_dim < 1 or embed_dim < 1 or any(h < 1 for h in hidden):
            raise ValueError("layer widths must be positive")
        rng = np.random.default_rng(0) if rng is None else rng
        self.input_dim = int(input_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.embed_dim = int(embed_dim)
        self.bias = bias
        widths = [self.input_dim, *self.hidden, self.embed_dim]
        self.weights: List[Tensor] = []
        self.biases: List[Tensor] = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            limit = np.sqrt(6.0 / fan_in)  # He-uniform for ReLU
            self.weights.append(Tensor(rng.uniform(-limit, limit, (fan_in, fan_out)), requires_grad=True))
            if bias:
                self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True))

    @property
    def widths(self) -> List[int]:
        return [self.input_dim, *self.hidden, self.embed_dim]

    def parameters(self) -> List[Tensor]:
        params = []
        for i, w in enumerate(self.weights):
            params.append(w)
            if self.bias:
                params.append(self.biases[i])
        return params

    def __call__(self, x) -> Tensor:
        return encode(self, x)


def encode(enc: Encoder, x) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.data.ndim != 2 or x.shape[1] != enc.input_dim:
        raise DimensionError(f"encoder expects (n, {enc.input_dim}) input, got {x.shape}")
    h = x
    last = len(enc.weights) - 1
    for i, w in enumerate(enc.weights):
        h = ad.matmul(h, w)
        if enc.bias:
            h = ad.add_row_bias(h, enc.biases[i])
        if i < last:
            h = ad.relu(h)
    return h


class ProxyClassifier:
    """One learnable proxy row per class; logits are ``z @ W.T``.

    Rows are appended the first time a class label is seen, initialised
    uniformly in [-init_scale, init_scale].
    """

    def __init__(self, embed_dim: int, init_scale: float = 0.05,
                 rng: Optional[np.random.Generator] = None):
        self.embed_dim = int(embed_dim)
        self.init_scale = init_scale
        self.rng = np.random.default_rng(0) if rng is None else rng
        self.classes_: List[int] = []
        self._row: Dict[int, int] = {}
        self.W = Tensor(np.zeros((0, self.embed_dim)), requires_grad=True)

    @property
    def n_classes(self) -> int:
        return len(self.classes_)

    def add_classes(self, labels: Iterable[int]) -> List[int]:
        new = [int(c) for c in dict.fromkeys(int(v) for v in labels) if int(c) not in self._row]
        if new:
            rows = self.rng.uniform(-self.init_scale, self.init_scale, (len(new), self.embed_dim))
            for c in new:
                self._row[c] = len(self.classes_)
                self.classes_.append(c)
            self.W = Tensor(np.vstack([self.W.data, rows]), requires_grad=True)
        return new

    def rows_for(self, labels: Iterable[int]) -> np.ndarray:
        try:
            return np.array([self._row[int(c)] for c in labels], dtype=np.intp)
        except KeyError as exc:
            raise KeyError(f"no proxy for class {exc.args[0]}") from None

    def parameters(self) -> List[Tensor]:
        return [self.W]

    def logits(self, z: Tensor) -> Tensor:
        return ad.matmul(z, ad.transpose(self.W))


def pcl_loss(z: Tensor, y: Sequence[int], W: Tensor, tau: float = 0.1,
             batch_classes: Optional[Iterable[int]] = None) -> Tensor:
    """Proxy contrastive loss with the softmax restricted to the batch's classes.

    ``y`` and ``batch_classes`` index rows of ``W``.  With ``batch_classes``
    omitted the set of labels present in ``y`` is used.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    y = np.asarray(y, dtype=np.intp)
    if y.size == 0:
        raise ValueError("empty batch")
    if z.data.ndim != 2 or z.shape[0] != y.size:
        raise DimensionError(f"pcl_loss: {y.size} labels for embeddings of shape {z.shape}")
    if W.data.ndim != 2 or W.shape[1] != z.shape[1]:
        raise DimensionError(f"pcl_loss: proxies {W.shape} do not match embeddings {z.shape}")
    classes = np.unique(y) if batch_classes is None else np.unique(np.asarray(list(batch_classes), dtype=np.intp))
    if classes.min() < 0 or classes.max() >= W.shape[0]:
        raise KeyError(f"label without proxy: proxies cover rows 0..{W.shape[0] - 1}")
    if not np.isin(y, classes).all():
        raise ValueError("batch label missing from batch_classes")
    if classes.size < 2:
        raise DegenerateBatchError("batch holds a single class")
    target = np.searchsorted(classes, y)
    logits = ad.scale(ad.matmul(z, ad.transpose(ad.take_rows(W, classes))), 1.0 / tau)
    return ad.scale(ad.mean(ad.pick(ad.log_softmax_rows(logits), target)), -1.0)


def ce_loss(z: Tensor, y: Sequence[int], W: Tensor) -> Tensor:
    """Softmax cross-entropy of ``z @ W.T`` over every proxy row."""
    y = np.asarray(y, dtype=np.intp)
    if y.size == 0:
        raise ValueError("empty batch")
    if z.data.ndim != 2 or z.shape[0] != y.size:
        raise DimensionError(f"ce_loss: {y.size} labels for embeddings of shape {z.shape}")
    if W.data.ndim != 2 or W.shape[1] != z.shape[1]:
        raise DimensionError(f"ce_loss: proxies {W.shape} do not match embeddings {z.shape}")
    if y.min() < 0 or y.max() >= W.shape[0]:
        raise KeyError(f"label without proxy: proxies cover rows 0..{W.shape[0] - 1}")
    logits = ad.matmul(z, ad.transpose(W))
    return ad.scale(ad.mean(ad.pick(ad.log_softmax_rows(logits), y)), -1.0)


def sgd_step(params: Sequence[Tensor], lr: float, grads: Optional[Sequence[np.ndarray]] = None) -> None:
    """``p <- p - lr * g`` for every parameter, then clear the gradients.

    Parameter arrays are rebound rather than mutated so earlier snapshots
    sharing them stay intact.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if grads is None:
        grads = [p.grad for p in params]
    if len(grads) != len(params):
        raise DimensionError(f"{len(grads)} gradients for {len(params)} parameters")
    for p, g in zip(params, grads):
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise DimensionError(f"sgd_step: gradient {g.shape} for parameter {p.shape}")
        p.data = p.data - lr * g
    for p in params:
        p.grad = None


# ----------------------------------------------------------- checkpoints


def _pack(t: Tensor) -> dict:
    return {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}


def _unpack(d: dict) -> Tensor:
    return Tensor(np.array(d["data"], dtype=np.float64).reshape(d["shape"]), requires_grad=True)


def save_checkpoint(path, encoder: Encoder, proxies: ProxyClassifier) -> None:
    """Write shapes and row-major values as JSON (floats round-trip exactly)."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "encoder": {
            "input_dim": encoder.input_dim,
            "hidden": list(encoder.hidden),
            "embed_dim": encoder.embed_dim,
            "bias": encoder.bias,
            "weights": [_pack(w) for w in encoder.weights],
            "biases": [_pack(b) for b in encoder.biases],
        },
        "proxies": {"classes": list(proxies.classes_), "init_scale": proxies.init_scale, "W": _pack(proxies.W)},
    }
    with open(os.fspath(path), "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    with open(os.fspath(path)) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} file")
    e = doc["encoder"]
    enc = Encoder(e["input_dim"], e["hidden"], e["embed_dim"], bias=e["bias"])
    enc.weights = [_unpack(w) for w in e["weights"]]
    enc.biases = [_unpack(b) for b in e["biases"]]
    p = doc["proxies"]
    proxies = ProxyClassifier(enc.embed_dim, init_scale=p["init_scale"])
    proxies.classes_ = [int(c) for c in p["classes"]]
    proxies._row = {c: i for i, c in enumerate(proxies.classes_)}
    proxies.W = _unpack(p["W"])
    if proxies.W.shape[0] != len(proxies.classes_):
        raise ValueError(f"{path}: {proxies.W.shape[0]} proxy rows for {len(proxies.classes_)} classes")
    return enc, proxies
