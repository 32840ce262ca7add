"""Adam with the standard bias-corrected update."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class AdamState:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.first_moment = [np.zeros_like(p.data) for p in params]
        self.second_moment = [np.zeros_like(p.data) for p in params]


def adam_step(params, grads, state: AdamState):
    """One in-place Adam update on `params` given matching `grads`.

    Non-finite gradients raise and leave both params and state untouched.
    """
    grads = [np.asarray(g) for g in grads]
    if len(grads) != len(params):
        raise ValueError("params/grads length mismatch")
    for p, g in zip(params, grads):
        if p.data.shape != g.shape:
            raise ValueError("params/grads shape mismatch")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        p.data -= (state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(
            p.data.dtype
        )
    return params


class Adam:
    """Object wrapper: reads .grad off the parameters and clears it after."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = AdamState(self.params, lr, beta1, beta2, eps)

    @property
    def lr(self):
        return self.state.lr

    @lr.setter
    def lr(self, value):
        self.state.lr = value

    def step(self):
        grads = [
            p.grad if p.grad is not None else np.zeros_like(p.data)
            for p in self.params
        ]
        adam_step(self.params, grads, self.state)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def parameter(data, rng=None, scale=None) -> Tensor:
    """Trainable tensor; optionally Gaussian-initialized by `rng` and `scale`."""
    if rng is not None:
        data = rng.standard_normal(size=tuple(data)) * (scale if scale else 1.0)
    return Tensor(data, requires_grad=True)
