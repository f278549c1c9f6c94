"""Adam optimizer over named Tensor parameters."""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, params, lr=3e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip=5.0):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip = clip
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._t = 0

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self._t += 1
        if self.clip is not None:
            total = 0.0
            for p in self.params.values():
                if p.grad is not None:
                    total += float((p.grad**2).sum())
            norm = np.sqrt(total)
            scale = self.clip / norm if norm > self.clip else 1.0
        else:
            scale = 1.0
        for key, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            g = g * scale
            m = self._m[key] = self.beta1 * self._m[key] + (1 - self.beta1) * g
            v = self._v[key] = self.beta2 * self._v[key] + (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1**self._t)
            v_hat = v / (1 - self.beta2**self._t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
