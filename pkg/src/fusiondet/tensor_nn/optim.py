from __future__ import annotations

import numpy as np

BASE_LR = 1e-3
PAPER_LR_STEP = 50_000
DESK_LR_STEP = 2_000


def lr_schedule(iteration: int, step: int = DESK_LR_STEP, base_lr: float = BASE_LR) -> float:
    """Step decay: divide the learning rate by 10 every ``step`` iterations."""
    return base_lr * 10.0 ** (-(iteration // step))


class SGDMomentum:
    """Velocity-form SGD: ``v = m * v - lr * g``; ``p = p + v``."""

    def __init__(self, momentum: float = 0.9):
        if not 0 <= momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params, grads, lr: float):
        for name, p in params.items():
            v = self.velocity.get(name)
            if v is None:
                v = self.velocity[name] = np.zeros_like(p)
            g = grads.get(name)
            v *= self.momentum
            if g is not None:
                v -= (lr * g).astype(v.dtype)
            p += v
        return params


def sgd_momentum_step(params, grads, optimizer: SGDMomentum, lr: float):
    return optimizer.step(params, grads, lr)
