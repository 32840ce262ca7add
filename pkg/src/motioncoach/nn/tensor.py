"""Minimal reverse-mode autodiff over numpy arrays.

Only the operations needed by the networks in this package are provided:
elementwise arithmetic with broadcasting, matmul, conv1d, relu, softmax,
layer norm, embedding lookup, cross entropy, and shape plumbing. Storage is
32-bit by default; reductions accumulate in 64-bit.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_DEFAULT_DTYPE = np.float32


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype):
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


@contextmanager
def precision(dtype):
    """Temporarily switch the default real precision (e.g. for 64-bit grad checks)."""
    old = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @classmethod
    def _from_op(cls, data, parents, backward):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # -- autograd ------------------------------------------------------------

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without gradient requires a scalar")
            grad = np.ones_like(self.data)
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad or pg is None:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other)
        data = self.data + other.data
        a, b = self, other

        def backward(g):
            return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

        return Tensor._from_op(data, (a, b), backward)

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor._from_op(-self.data, (a,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other)
        a, b = self, other
        data = a.data * b.data

        def backward(g):
            return (
                _unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape),
            )

        return Tensor._from_op(data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor) or isinstance(other, np.ndarray):
            other = _as_tensor(other)
            a, b = self, other
            data = a.data / b.data

            def backward(g):
                return (
                    _unbroadcast(g / b.data, a.shape),
                    _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
                )

            return Tensor._from_op(data, (a, b), backward)
        return self * (1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        a = self
        data = self.data[key]

        def backward(g):
            out = np.zeros_like(a.data)
            np.add.at(out, key, g)
            return (out,)

        return Tensor._from_op(data, (a,), backward)

    # -- shape plumbing --------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = a.shape
        return Tensor._from_op(
            self.data.reshape(shape), (a,), lambda g: (g.reshape(old),)
        )

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        inv = tuple(np.argsort(axes))
        return Tensor._from_op(
            self.data.transpose(axes), (a,), lambda g: (g.transpose(inv),)
        )

    def swapaxes(self, ax1, ax2):
        a = self
        return Tensor._from_op(
            self.data.swapaxes(ax1, ax2), (a,), lambda g: (g.swapaxes(ax1, ax2),)
        )

    # -- reductions (64-bit accumulation) --------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        data = self.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64)
        data = data.astype(self.data.dtype)

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, a.shape).astype(a.data.dtype),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, a.shape).astype(a.data.dtype),)

        return Tensor._from_op(np.asarray(data), (a,), backward)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        else:
            n = self.data.shape[axis] if isinstance(axis, int) else int(
                np.prod([self.data.shape[ax] for ax in axis])
            )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# -- functional ops -----------------------------------------------------------


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim > 2 and bd.ndim == 2:
        # collapse leading axes so BLAS sees one large GEMM per product
        a2 = ad.reshape(-1, ad.shape[-1])
        data = (a2 @ bd).reshape(ad.shape[:-1] + (bd.shape[-1],))

        def backward(g):
            g2 = g.reshape(-1, g.shape[-1])
            return ((g2 @ bd.T).reshape(ad.shape), a2.T @ g2)

        return Tensor._from_op(data, (a, b), backward)
    data = ad @ bd

    def backward(g):
        ga = g @ bd.swapaxes(-1, -2)
        gb = ad.swapaxes(-1, -2) @ g
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return Tensor._from_op(data, (a, b), backward)


def relu(x):
    x = _as_tensor(x)
    mask = x.data > 0
    return Tensor._from_op(np.where(mask, x.data, 0), (x,), lambda g: (g * mask,))


def stop_gradient(x):
    """Detach from the graph; gradients do not flow past this point."""
    x = _as_tensor(x)
    return Tensor(x.data.copy())


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(data, tuple(tensors), backward)


def softmax(x, axis=-1):
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return Tensor._from_op(y, (x,), backward)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis of x, then scale/shift by gain and bias."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    y = gain.data * xhat + bias.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead).astype(g.dtype)
        dbias = g.sum(axis=lead).astype(g.dtype)
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = (dxhat - m1 - xhat * m2) * inv
        return (dx, _unbroadcast(dgain, gain.shape), _unbroadcast(dbias, bias.shape))

    return Tensor._from_op(y, (x, gain, bias), backward)


def embedding(weight, ids):
    """Row lookup: weight is (V, E), ids any integer array shape S -> (S..., E)."""
    weight = _as_tensor(weight)
    ids = np.asarray(ids)
    data = weight.data[ids]

    def backward(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids, g)
        return (gw,)

    return Tensor._from_op(data, (weight,), backward)


def cross_entropy(logits, targets, mask=None, reduction="mean"):
    """Softmax cross entropy over the last axis.

    targets holds integer class ids with the same shape as logits minus the
    last axis. mask (same shape as targets) selects which positions
    contribute; with reduction="mean" the loss is normalized by the number of
    contributing positions.
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets)
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logsumexp
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    if mask is None:
        mask_arr = np.ones_like(picked)
    else:
        if isinstance(mask, Tensor):
            mask = mask.data
        mask_arr = np.asarray(mask, dtype=picked.dtype)
    denom = 1.0 if reduction == "sum" else max(float(mask_arr.sum()), 1.0)
    loss = -(picked * mask_arr).sum(dtype=np.float64) / denom
    loss = np.asarray(loss, dtype=logits.data.dtype)

    def backward(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        dl = (p - onehot) * mask_arr[..., None] / denom
        return (g * dl,)

    return Tensor._from_op(loss, (logits,), backward)


def conv1d_out_length(T, k, stride=1, padding=0, dilation=1):
    span = dilation * (k - 1) + 1
    if T + 2 * padding < span:
        raise ValueError(
            f"input length {T} with padding {padding} is shorter than the "
            f"kernel span {span}"
        )
    return (T + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv1d(x, weight, bias=None, stride=1, padding=0, dilation=1):
    """1-D convolution (cross-correlation) over the last axis.

    x: (C_in, T) or (B, C_in, T); weight: (C_out, C_in, k); bias: (C_out,).
    Zero padding; output length per the usual floor formula.
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    if stride < 1 or padding < 0 or dilation < 1:
        raise ValueError("invalid conv1d hyperparameters")
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or weight.data.ndim != 3:
        raise ValueError("conv1d expects (B, C_in, T) input and (C_out, C_in, k) kernels")
    B, Cin, T = xd.shape
    Cout, Cin_w, k = weight.data.shape
    if Cin != Cin_w:
        raise ValueError(f"channel mismatch: input {Cin}, kernels expect {Cin_w}")
    Tout = conv1d_out_length(T, k, stride, padding, dilation)
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding)))
    out = np.zeros((B, Cout, Tout), dtype=xd.dtype)
    ends = (Tout - 1) * stride + 1
    for j in range(k):
        seg = xp[:, :, j * dilation : j * dilation + ends : stride]
        out += np.matmul(weight.data[:, :, j], seg)
    parents = [x, weight]
    if bias is not None:
        bias = _as_tensor(bias)
        out = out + bias.data[:, None]
        parents.append(bias)

    def backward(g):
        gb = g[None] if g.ndim == 2 else g
        gw = np.zeros_like(weight.data)
        gxp = np.zeros_like(xp)
        for j in range(k):
            sl = slice(j * dilation, j * dilation + ends, stride)
            seg = xp[:, :, sl]
            gw[:, :, j] = np.einsum("bot,bit->oi", gb, seg, optimize=True)
            gxp[:, :, sl] += np.matmul(weight.data[:, :, j].T, gb)
        gx = gxp[:, :, padding : padding + T] if padding else gxp
        if squeeze:
            gx = gx[0]
        grads = [gx, gw]
        if bias is not None:
            grads.append(gb.sum(axis=(0, 2)))
        return tuple(grads)

    data = out[0] if squeeze else out
    return Tensor._from_op(data, tuple(parents), backward)
