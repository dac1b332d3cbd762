"""Minimal reverse-mode building blocks shared by the surrogate model and the
policy networks. Everything is float64 numpy; gradients are exact.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

SQRT2 = np.sqrt(2.0)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    phi = 0.5 * (1.0 + erf(x / SQRT2))
    return phi + x * INV_SQRT_2PI * np.exp(-0.5 * x * x)


def linear_init(rng: np.random.Generator, fan_in: int, fan_out: int,
                scale: float = 1.0) -> np.ndarray:
    """He-style Gaussian init."""
    return rng.standard_normal((fan_in, fan_out)) * (scale / np.sqrt(fan_in))


class AdamW:
    """Decoupled weight decay Adam over a flat dict of parameter arrays.

    `decay_mask[name]` selects which parameters receive weight decay
    (weight matrices yes, biases and normalization parameters no).
    """

    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 decay_mask: dict[str, bool] | None = None):
        self.params = params
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.decay_mask = decay_mask or {}
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], lr: float | None = None):
        lr = self.lr if lr is None else float(lr)
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            p = self.params[k]
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay and self.decay_mask.get(k, False):
                update = update + self.weight_decay * p
            p -= lr * update


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def clip_grads_(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """In-place global-norm clipping; returns the pre-clip norm."""
    norm = global_grad_norm(grads)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm
