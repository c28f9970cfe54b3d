"""Gradient-descent optimizers over Parameter lists."""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter


class Sgd:
    """Plain stochastic gradient descent with a fixed learning rate."""

    def __init__(self, params: list[Parameter], lr: float):
        self.params = list(params)
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            p.data -= self.lr * p.grad


class Adam:
    """Adaptive moment estimation with bias correction and global norm clipping."""

    def __init__(self, params: list[Parameter], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 clip_norm: float | None = 1.0):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        clip = 1.0
        if self.clip_norm is not None:
            total = np.sqrt(sum(float(np.sum(p.grad ** 2)) for p in self.params))
            if total > self.clip_norm:
                clip = self.clip_norm / total
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad * clip
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g ** 2 - v)
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
