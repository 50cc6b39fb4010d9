"""Differentiable operations on :class:`~danet.tensor.Tensor`.

Shapes are explicit: elementwise ops require identical shapes and there is
no implicit broadcasting.  Use :func:`expand` to broadcast on purpose.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from danet.tensor import Tensor

LEAKY_SLOPE = 0.2
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _axis(axis: int, ndim: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise ValueError(f"{op}: axis {axis} out of range for rank {ndim}")
    return axis % ndim


# -- elementwise -------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return Tensor._make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return Tensor._make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return Tensor._make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, factor: float) -> Tensor:
    return Tensor._make(a.data * factor, (a,), lambda g: (g * factor,), "scale")


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, slope * x.data)
    return Tensor._make(out, (x,), lambda g: (np.where(pos, g, slope * g),),
                        "leaky_relu")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow is reported by the finite check
        out = np.exp(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out,), "exp")


# -- shape -------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot reshape {src} into {tuple(shape)}") from None
    return Tensor._make(out, (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ValueError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return Tensor._make(out, (x,),
                        lambda g: (np.ascontiguousarray(g.transpose(inv)),),
                        "transpose")


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Broadcast ``x`` to ``shape`` following numpy rules, explicitly."""
    shape = tuple(shape)
    try:
        out = np.array(np.broadcast_to(x.data, shape))
    except ValueError:
        raise ValueError(f"expand: cannot broadcast {x.shape} to {shape}") from None
    src = x.shape
    lead = len(shape) - len(src)

    def back(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(src) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return Tensor._make(out, (x,), back, "expand")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ValueError("concat: no tensors")
    ax = _axis(axis, tensors[0].ndim, "concat")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
                t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ValueError(f"concat: shape mismatch {ref} vs {t.shape} on axis {ax}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def back(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, bounds, axis=ax))

    return Tensor._make(out, tuple(tensors), back, "concat")


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    ax = _axis(axis, x.ndim, "narrow")
    if start < 0 or length < 0 or start + length > x.shape[ax]:
        raise ValueError(f"narrow: [{start}, {start + length}) outside axis of size {x.shape[ax]}")
    sl = [slice(None)] * x.ndim
    sl[ax] = slice(start, start + length)
    sl = tuple(sl)
    out = np.ascontiguousarray(x.data[sl])

    def back(g):
        full = np.zeros(x.shape)
        full[sl] = g
        return (full,)

    return Tensor._make(out, (x,), back, "narrow")


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Row gather.

    ``x`` of shape (N, C) with integer ``index`` of any shape gives
    ``index.shape + (C,)``.  ``x`` of shape (B, N, C) with ``index`` of shape
    (B, ...) gathers per batch element.
    """
    index = np.asarray(index)
    if not np.issubdtype(index.dtype, np.integer):
        raise TypeError("gather_rows: index must be integer")
    if x.ndim == 2:
        n, c = x.shape
        flat_idx = index.reshape(-1)
        src = x.data
    elif x.ndim == 3:
        b, n, c = x.shape
        if index.shape[0] != b:
            raise ValueError(f"gather_rows: batch {b} vs index batch {index.shape[0]}")
        offsets = (np.arange(b) * n).reshape((b,) + (1,) * (index.ndim - 1))
        flat_idx = (index + offsets).reshape(-1)
        src = x.data.reshape(b * n, c)
    else:
        raise ValueError(f"gather_rows: expected rank 2 or 3 input, got shape {x.shape}")
    if index.size and (index.min() < 0 or index.max() >= n):
        raise IndexError(f"gather_rows: index out of range for {n} rows")
    out = src[flat_idx].reshape(index.shape + (c,))

    def back(g):
        acc = np.zeros((src.shape[0], c))
        np.add.at(acc, flat_idx, g.reshape(-1, c))
        return (acc.reshape(x.shape),)

    return Tensor._make(out, (x,), back, "gather_rows")


# -- linear algebra ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes must match exactly."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)

    def back(g):
        return (np.matmul(g, np.swapaxes(bd, -1, -2)),
                np.matmul(np.swapaxes(ad, -1, -2), g))

    return Tensor._make(out, (a, b), back, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight + bias`` over the last axis of ``x``."""
    cin, cout = weight.shape
    if x.shape[-1] != cin or (bias is not None and bias.shape != (cout,)):
        raise ValueError(f"linear: input {x.shape}, weight {weight.shape}, "
                         f"bias {None if bias is None else bias.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, cin)
    w = weight.data
    out = x2 @ w
    if bias is not None:
        out += bias.data
    out = out.reshape(lead + (cout,))

    def back(g):
        g2 = g.reshape(-1, cout)
        gx = (g2 @ w.T).reshape(x.shape)
        gw = x2.T @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, back, "linear")


# -- reductions ----------------------------------------------------------------

def sum(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape
    if axis is None:
        out = np.asarray(x.data.sum())
        return Tensor._make(out, (x,), lambda g: (np.full(shape, float(g)),), "sum")
    ax = _axis(axis, x.ndim, "sum")
    out = x.data.sum(axis=ax, keepdims=keepdims)

    def back(g):
        g = g if keepdims else np.expand_dims(g, ax)
        return (np.array(np.broadcast_to(g, shape)),)

    return Tensor._make(out, (x,), back, "sum")


def mean(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else x.shape[_axis(axis, x.ndim, "mean")]
    return scale(sum(x, axis, keepdims), 1.0 / n)


def avg_pool(x: Tensor, axis: int, keepdims: bool = True) -> Tensor:
    """Average pooling along one axis."""
    return mean(x, axis, keepdims)


def max_pool(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max along ``axis``; ties go to the lowest index along that axis."""
    ax = _axis(axis, x.ndim, "max_pool")
    idx = np.argmax(x.data, axis=ax, keepdims=True)
    out = np.take_along_axis(x.data, idx, axis=ax)
    if not keepdims:
        out = np.squeeze(out, axis=ax)

    def back(g):
        g = g if keepdims else np.expand_dims(g, ax)
        full = np.zeros(x.shape)
        np.put_along_axis(full, idx, g, axis=ax)
        return (full,)

    return Tensor._make(out, (x,), back, "max_pool")


def softmax(x: Tensor, axis: int) -> Tensor:
    ax = _axis(axis, x.ndim, "softmax")
    z = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=ax, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=ax, keepdims=True)),)

    return Tensor._make(s, (x,), back, "softmax")


def log_softmax(x: Tensor, axis: int) -> Tensor:
    ax = _axis(axis, x.ndim, "log_softmax")
    z = x.data - x.data.max(axis=ax, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=ax, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def back(g):
        return (g - s * g.sum(axis=ax, keepdims=True),)

    return Tensor._make(out, (x,), back, "log_softmax")


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of (M, C) logits against M integer labels."""
    labels = np.asarray(labels).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ValueError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    m, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"cross_entropy: label out of range for {c} classes")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(m)
    loss = np.asarray(-logp[rows, labels].mean())

    def back(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (float(g) / m),)

    return Tensor._make(loss, (logits,), back, "cross_entropy")


# -- normalisation / regularisation -------------------------------------------

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = BN_MOMENTUM,
               eps: float = BN_EPS) -> Tensor:
    """Per-channel batch norm over every axis but the last.

    In training mode the running statistics are updated in place (unbiased
    variance, like the usual frameworks).
    """
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batch_norm: input {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    x2 = x.data.reshape(-1, c)
    m = x2.shape[0]
    g_, b_ = gamma.data, beta.data
    if training:
        mu = x2.mean(axis=0)
        xc = x2 - mu
        var = (xc * xc).mean(axis=0)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased

        def back(g):
            g2 = g.reshape(-1, c)
            dgamma = (g2 * xhat).sum(axis=0)
            dbeta = g2.sum(axis=0)
            dxhat = g2 * g_
            dx = inv / m * (m * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            return dx.reshape(x.shape), dgamma, dbeta
    else:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x2 - running_mean) * inv

        def back(g):
            g2 = g.reshape(-1, c)
            return ((g2 * (g_ * inv)).reshape(x.shape),
                    (g2 * xhat).sum(axis=0), g2.sum(axis=0))

    out = (xhat * g_ + b_).reshape(x.shape)
    return Tensor._make(out, (x, gamma, beta), back, "batch_norm")


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) during training."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: p must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return Tensor._make(x.data * mask, (x,), lambda g: (g * mask,), "dropout")
