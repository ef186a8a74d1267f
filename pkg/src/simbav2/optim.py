"""Adam without weight decay; moments live in ambient coordinates."""

from __future__ import annotations

import numpy as np

from .module import Parameter


class Adam:
    def __init__(self, params: list[Parameter], betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            if lr != 0.0:
                # p -= lr * (m / c1) / (sqrt(v / c2) + eps), without temporaries per factor
                denom = np.sqrt(v, out=np.empty_like(v))
                denom *= 1.0 / np.sqrt(c2)
                denom += self.eps
                step = np.divide(m, denom, out=denom)
                step *= lr / c1
                p.data -= step

    def state_dict(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.t": np.array(float(self.t))}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}.m.{i}"] = m.copy()
            out[f"{prefix}.v.{i}"] = v.copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], prefix: str) -> None:
        self.t = int(state[f"{prefix}.t"])
        self.m = [np.array(state[f"{prefix}.m.{i}"]).reshape(p.data.shape) for i, p in enumerate(self.params)]
        self.v = [np.array(state[f"{prefix}.v.{i}"]).reshape(p.data.shape) for i, p in enumerate(self.params)]
