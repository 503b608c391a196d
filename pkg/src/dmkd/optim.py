"""SGD with heavy-ball momentum."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import MissingGrad
from .tensor import Tensor


class SGD:
    """``v <- momentum * v + grad``; ``p <- p - lr * v``; grads are then cleared."""

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        missing = [i for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            names = ", ".join(self.params[i].name or f"#{i}" for i in missing)
            raise MissingGrad(f"no gradient for parameter(s) {names}")
        for p, v in zip(self.params, self.velocity):
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def sgd_step(params: Sequence[Tensor], lr: float, momentum: float, state: SGD | None = None) -> SGD:
    """Functional form: one update of ``params``; pass the returned state back in next time."""
    if state is None:
        state = SGD(params, lr, momentum)
    state.lr, state.momentum = lr, momentum
    state.step()
    return state
