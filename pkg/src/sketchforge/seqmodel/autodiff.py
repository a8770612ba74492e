"""Minimal reverse-mode autodiff over float64 numpy arrays.

Fixed operator set: broadcast add/mul, scalar scale, matmul, transpose,
reshape, concat, embedding gather, batched row gather, layer norm, GELU,
softmax, and a fused softmax cross-entropy.  Enough for small transformers,
and every op is finite-difference checkable.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "parameter",
    "constant",
    "add",
    "mul",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "embedding",
    "gather_rows",
    "layer_norm",
    "gelu",
    "softmax",
    "token_nll_nats",
    "cross_entropy_logits",
]


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def backward(self):
        if self.data.ndim != 0:
            raise ValueError("backward() starts from a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node.backward_fn is not None and node.grad is not None:
                node.backward_fn(node.grad)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data)


def _acc(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the target shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, (a, b))

    def back(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(g, b.data.shape))

    out.backward_fn = back
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, (a, b))

    def back(g):
        _acc(a, _unbroadcast(g * b.data, a.data.shape))
        _acc(b, _unbroadcast(g * a.data, b.data.shape))

    out.backward_fn = back
    return out


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s, (a,))
    out.backward_fn = lambda g: _acc(a, g * s)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data @ b.data, (a, b))

    def back(g):
        _acc(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        _acc(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    out.backward_fn = back
    return out


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    out = Tensor(np.transpose(a.data, axes), (a,))
    out.backward_fn = lambda g: _acc(a, np.transpose(g, inv))
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), (a,))
    out.backward_fn = lambda g: _acc(a, g.reshape(a.data.shape))
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    ts = list(tensors)
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis), ts)
    sizes = [t.data.shape[axis] for t in ts]

    def back(g):
        splits = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        for t, gs in zip(ts, splits):
            _acc(t, gs)

    out.backward_fn = back
    return out


def embedding(table: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx)
    out = Tensor(table.data[idx], (table,))

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        _acc(table, gt)

    out.backward_fn = back
    return out


def gather_rows(src: Tensor, idx: np.ndarray) -> Tensor:
    """Batched row gather: src (B, N, D), idx (B, L) -> (B, L, D)."""
    idx = np.asarray(idx)
    b_ix = np.arange(src.data.shape[0])[:, None]
    out = Tensor(src.data[b_ix, idx], (src,))

    def back(g):
        gs = np.zeros_like(src.data)
        np.add.at(gs, (b_ix, idx), g)
        _acc(src, gs)

    out.backward_fn = back
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data, (x, gain, bias))

    def back(g):
        gxhat = g * gain.data
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        _acc(x, gx)
        red = tuple(range(g.ndim - 1))
        _acc(gain, (g * xhat).sum(axis=red))
        _acc(bias, g.sum(axis=red))

    out.backward_fn = back
    return out


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    u = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(u)
    out = Tensor(0.5 * x.data * (1.0 + t), (x,))

    def back(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data**2)
        sech2 = 1.0 - t * t
        _acc(x, g * (0.5 * (1.0 + t) + 0.5 * x.data * sech2 * du))

    out.backward_fn = back
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, (x,))

    def back(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _acc(x, y * (g - dot))

    out.backward_fn = back
    return out


def token_nll_nats(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-position negative log-likelihood in nats; pure numpy, no graph."""
    m = np.max(logits, axis=-1, keepdims=True)
    z = logits - m
    lse = np.log(np.exp(z).sum(axis=-1)) + m[..., 0]
    picked = np.take_along_axis(logits, targets[..., None], axis=-1)[..., 0]
    return lse - picked


def cross_entropy_logits(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean masked cross-entropy (nats) of next-token targets.

    logits (..., V); targets int (...); mask float/bool (...).
    """
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=np.float64)
    denom = mask.sum()
    if denom <= 0:
        raise ValueError("cross entropy needs at least one unmasked target")
    nll = token_nll_nats(logits.data, targets)
    out = Tensor((nll * mask).sum() / denom, (logits,))

    def back(g):
        m = np.max(logits.data, axis=-1, keepdims=True)
        e = np.exp(logits.data - m)
        p = e / e.sum(axis=-1, keepdims=True)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        _acc(logits, g * (p - onehot) * (mask / denom)[..., None])

    out.backward_fn = back
    return out
