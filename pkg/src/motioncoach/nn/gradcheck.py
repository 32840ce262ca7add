"""Central finite-difference oracle for every analytic backward pass."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, default_dtype, precision


def grad_check(loss_fn, params, eps=1e-5) -> float:
    """Max relative error between analytic and numeric gradients.

    loss_fn() must rebuild a scalar loss Tensor from the current values of
    `params` (a list of requires_grad Tensors) and be deterministic. The
    analytic gradient is taken at the active precision; the numeric side is
    a central difference per element evaluated with the parameters upcast to
    float64, so a 32-bit check measures the backward pass itself rather than
    float32 forward noise. The relative error is |a - n| / max(|a|, |n|, s)
    with s the largest analytic gradient entry across all params, so
    near-zero entries are judged against the actual gradient scale.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    for p in params:
        p.grad = None
    loss = loss_fn()
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ValueError("loss_fn must return a scalar Tensor")
    if not np.isfinite(loss.data):
        raise FloatingPointError("non-finite loss")
    loss.backward()
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]
    scale = max((float(np.abs(a).max()) for a in analytic), default=0.0)
    scale = max(scale, 1e-8)

    worst = 0.0
    originals = [p.data for p in params]
    try:
        with precision(np.float64):
            for p, orig in zip(params, originals):
                p.data = orig.astype(np.float64)
            for p, a in zip(params, analytic):
                flat = p.data.reshape(-1)
                aflat = a.reshape(-1)
                for i in range(flat.size):
                    x = flat[i]
                    h = eps * max(1.0, abs(float(x)))
                    flat[i] = x + h
                    up = float(loss_fn().data)
                    flat[i] = x - h
                    down = float(loss_fn().data)
                    flat[i] = x
                    numeric = (up - down) / (2.0 * h)
                    err = abs(float(aflat[i]) - numeric) / max(
                        abs(float(aflat[i])), abs(numeric), scale
                    )
                    worst = max(worst, err)
    finally:
        for p, orig in zip(params, originals):
            p.data = orig
    return worst
