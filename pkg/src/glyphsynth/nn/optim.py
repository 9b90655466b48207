"""Adam optimizer and exponential moving average of parameters."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class Adam:
    def __init__(self, params: list[Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self):
        self.t += 1
        b1t = 1.0 - self.b1**self.t
        b2t = 1.0 - self.b2**self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] += (1.0 - self.b1) * (g - self.m[i])
            self.v[i] += (1.0 - self.b2) * (g * g - self.v[i])
            p.data -= self.lr * (self.m[i] / b1t) / (np.sqrt(self.v[i] / b2t) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


class EMA:
    """Shadow copy of named parameters, s ← decay·s + (1−decay)·p."""

    def __init__(self, named_params: dict[str, Tensor], decay: float = 0.999):
        self.decay = decay
        self.shadow = {k: p.data.copy() for k, p in named_params.items()}

    def update(self, named_params: dict[str, Tensor]):
        d = self.decay
        for k, p in named_params.items():
            self.shadow[k] += (1.0 - d) * (p.data - self.shadow[k])

    def state_arrays(self) -> dict[str, np.ndarray]:
        return dict(self.shadow)
