"""Finite-difference check of the encoder + proxy classifier gradients."""

from __future__ import annotations

from typing import List, Tuple

import numpy as np

from . import autodiff as ad
from .model import Encoder, ProxyClassifier, encode, pcl_loss


def check_model_gradients(rng: np.random.Generator, eps: float = 1e-5) -> float:
    """Max relative error over every parameter of one random 2-layer model."""
    in_dim = int(rng.integers(3, 7))
    hidden = int(rng.integers(4, 9))
    embed = int(rng.integers(3, 6))
    n_classes = int(rng.integers(2, 5))
    n = int(rng.integers(4, 9))
    tau = float(rng.uniform(0.2, 1.0))

    enc = Encoder(in_dim, (hidden,), embed, rng=rng)
    for b in enc.biases:
        b.data = rng.uniform(-0.5, 0.5, b.shape)
    proxies = ProxyClassifier(embed, init_scale=1.0, rng=rng)
    proxies.add_classes(range(n_classes))
    x = ad.Tensor(rng.uniform(-2, 2, (n, in_dim)))
    y = rng.integers(0, n_classes, n)
    y[:2] = [0, 1]  # at least two classes in the batch
    params = enc.parameters() + proxies.parameters()

    def f():
        return pcl_loss(encode(enc, x), y, proxies.W, tau).item()

    for p in params:
        p.zero_grad()
    ad.backward(pcl_loss(encode(enc, x), y, proxies.W, tau), params)
    worst = 0.0
    for p in params:
        worst = max(worst, ad.relative_error(p.grad, ad.numerical_gradient(f, p, eps)))
    return worst


def run_gradcheck(n_configs: int = 20, seed: int = 0) -> Tuple[float, List[float]]:
    rng = np.random.default_rng(seed)
    errors = [check_model_gradients(rng) for _ in range(n_configs)]
    return max(errors), errors
