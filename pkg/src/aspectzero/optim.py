"""AdamW with decoupled weight decay, plus warmup learning-rate schedules."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class AdamW:
    def __init__(
        self,
        params: dict[str, Tensor],
        learning_rate: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr_scale: float = 1.0) -> None:
        self.t += 1
        lr = self.learning_rate * lr_scale
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name, param in self.params.items():
            g = grads[name]
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            # decoupled decay: applied directly to the weights, not the gradient
            param.data -= lr * (update + self.weight_decay * param.data)


def schedule_multiplier(step: int, total_steps: int, warmup_fraction: float,
                        shape: str) -> float:
    """Learning-rate multiplier at `step` (0-based) of `total_steps`.

    Linear ramp over the warmup fraction, then linear or cosine decay to 0.
    """
    if shape not in ("linear", "cosine"):
        raise ValueError(f"unknown schedule shape {shape!r}")
    total_steps = max(1, total_steps)
    warmup = int(round(warmup_fraction * total_steps))
    if warmup > 0 and step < warmup:
        return (step + 1) / warmup
    span = max(1, total_steps - warmup)
    progress = min(1.0, (step - warmup) / span)
    if shape == "linear":
        return 1.0 - progress
    return 0.5 * (1.0 + np.cos(np.pi * progress))
