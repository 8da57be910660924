"""Dense-tensor reverse-mode differentiation and the AdamW optimizer.

Tensors wrap numpy arrays and record the operations that produced them;
backward() replays the tape in reverse topological order.  All primitives
act on the trailing one or two dimensions, so any leading batch dimensions
broadcast for free.  float32 by default; pass dtype=np.float64 when running
finite-difference checks.
"""
from __future__ import annotations

import math

import numpy as np

DEFAULT_DTYPE = np.float32
_ERF = np.vectorize(math.erf)
_GELU_C = math.sqrt(2.0 / math.pi)


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        if dtype is None:
            # np.generic covers 0-d scalars from reductions like .sum()
            dtype = data.dtype if isinstance(data, (np.ndarray, np.generic)) else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._prev: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def grad_value(self) -> np.ndarray:
        """The accumulated gradient; zeros when unreached by backward."""
        return self.grad if self.grad is not None else np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g


def param(data, dtype=None) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(data, requires_grad=True, dtype=dtype)


def _result(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Populate .grad on every tensor reachable from a scalar loss."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    topo: list[Tensor] = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._prev:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _result(out_data, (a, b), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data + b.data
    except ValueError:
        raise ValueError(f"add shape mismatch: {a.data.shape} + {b.data.shape}")

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _result(out_data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data * b.data
    except ValueError:
        raise ValueError(f"mul shape mismatch: {a.data.shape} * {b.data.shape}")

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _result(out_data, (a, b), bw)


def scale(a: Tensor, s: float) -> Tensor:
    def bw(g):
        a._accumulate(s * g)

    return _result(a.data * s, (a,), bw)


def concat_rows(tensors: list[Tensor]) -> Tensor:
    rows = [t.data.shape[-2] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=-2)

    def bw(g):
        start = 0
        for t, n in zip(tensors, rows):
            if t.requires_grad:
                t._accumulate(
                    _unbroadcast(g[..., start : start + n, :], t.data.shape)
                )
            start += n

    return _result(out_data, tuple(tensors), bw)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.data)
        full[..., start:stop, :] = g
        a._accumulate(full)

    return _result(a.data[..., start:stop, :].copy(), (a,), bw)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.data)
        full[..., start:stop] = g
        a._accumulate(full)

    return _result(a.data[..., start:stop].copy(), (a,), bw)


def transpose_last2(a: Tensor) -> Tensor:
    def bw(g):
        a._accumulate(np.swapaxes(g, -1, -2))

    return _result(np.swapaxes(a.data, -1, -2).copy(), (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    def bw(g):
        a._accumulate(g.reshape(a.data.shape))

    return _result(a.data.reshape(shape).copy(), (a,), bw)


def embedding_lookup(table: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= table.data.shape[0]):
        raise ValueError(
            f"embedding index out of range for table of {table.data.shape[0]} rows"
        )

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        table._accumulate(full)

    return _result(table.data[idx].copy(), (table,), bw)


def gelu(a: Tensor, exact: bool = False) -> Tensor:
    x = a.data
    if exact:
        cdf = 0.5 * (1.0 + _ERF(x / math.sqrt(2.0)).astype(x.dtype))
        pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        out_data = x * cdf
        dydx = cdf + x * pdf
    else:
        u = _GELU_C * (x + 0.044715 * x**3)
        t = np.tanh(u)
        out_data = 0.5 * x * (1.0 + t)
        du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        dydx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du

    def bw(g):
        a._accumulate(g * dydx)

    return _result(out_data, (a,), bw)


def softmax_lastdim(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        a._accumulate(s * (g - np.sum(g * s, axis=-1, keepdims=True)))

    return _result(s, (a,), bw)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = a.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ValueError(
            f"layer_norm gain/bias must be ({d},), got {gain.data.shape}/{bias.data.shape}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = gain.data * xhat + bias.data

    def bw(g):
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.data.shape))
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * xhat, gain.data.shape))
        if a.requires_grad:
            dxhat = g * gain.data
            a._accumulate(
                inv / d * (
                    d * dxhat
                    - dxhat.sum(axis=-1, keepdims=True)
                    - xhat * np.sum(dxhat * xhat, axis=-1, keepdims=True)
                )
            )

    return _result(out_data, (a, gain, bias), bw)


def dropout(a: Tensor, keep_prob: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must be in (0, 1], got {keep_prob}")
    if not train or keep_prob == 1.0:
        def bw_id(g):
            a._accumulate(g)

        return _result(a.data.copy(), (a,), bw_id)
    if rng is None:
        raise ValueError("train-mode dropout needs an explicit generator")
    # inverted scaling keeps the expectation equal to the input
    mask = (rng.random(a.data.shape) < keep_prob).astype(a.data.dtype) / keep_prob

    def bw(g):
        a._accumulate(g * mask)

    return _result(a.data * mask, (a,), bw)


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.data.shape != target.data.shape:
        raise ValueError(
            f"l1_loss shape mismatch: {pred.data.shape} vs {target.data.shape}"
        )
    diff = pred.data - target.data
    n = diff.size

    def bw(g):
        s = np.sign(diff) * (g / n)
        if pred.requires_grad:
            pred._accumulate(s)
        if target.requires_grad:
            target._accumulate(-s)

    return _result(np.abs(diff).mean(dtype=pred.data.dtype), (pred, target), bw)


def sum_all(a: Tensor) -> Tensor:
    def bw(g):
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return _result(a.data.sum(dtype=a.data.dtype), (a,), bw)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class AdamW:
    """Adam with decoupled weight decay and bias-corrected moments."""

    def __init__(self, params: list[Tensor], lr=1e-4, beta1=0.9, beta2=0.99,
                 eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.lr, self.beta1, self.beta2 = lr, beta1, beta2
        self.eps, self.weight_decay = eps, weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        zero_grads(self.params)

    def step(self):
        self.step_count += 1
        t = self.step_count
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(
                    f"gradient shape {g.shape} does not match parameter {p.data.shape}"
                )
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / (1.0 - self.beta1**t)
            v_hat = self.v[i] / (1.0 - self.beta2**t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def global_grad_norm(params: list[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return math.sqrt(total)


def clip_grad_norm(params: list[Tensor], max_norm: float) -> float:
    """Scale all gradients so their global norm is at most max_norm."""
    norm = global_grad_norm(params)
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= factor
    return norm
