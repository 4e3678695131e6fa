"""Reverse-mode autodiff over numpy arrays, with just the ops the models need.

Tensors store float32 by default (float64 supported for tight gradient
checks). The graph is taped per forward pass; backward() walks it once in
reverse topological order.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError

_grad_enabled = True


class no_grad:
    """Context manager: ops inside build no graph (evaluation/decoding path)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad=False, _prev=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad and _grad_enabled
        self._prev = _prev if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def backward(self) -> None:
        """Accumulate gradients of this (scalar) node into every ancestor."""
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in node._prev:
                if child.requires_grad and id(child) not in visited:
                    stack.append((child, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def _as_array(x, like: np.ndarray) -> np.ndarray:
    if isinstance(x, Tensor):
        raise TypeError("pass Tensor operands positionally, not as constants")
    return np.asarray(x, dtype=like.dtype)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def add(a: Tensor, b) -> Tensor:
    b = _lift(b, a)
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad, (a, b))

    def _bw():
        if a.requires_grad:
            a.ensure_grad()
            a.grad += _unbroadcast(out.grad, a.data.shape)
        if b.requires_grad:
            b.ensure_grad()
            b.grad += _unbroadcast(out.grad, b.data.shape)

    out._backward = _bw if out.requires_grad else None
    return out


def sub(a: Tensor, b) -> Tensor:
    b = _lift(b, a)
    out = Tensor(a.data - b.data, a.requires_grad or b.requires_grad, (a, b))

    def _bw():
        if a.requires_grad:
            a.ensure_grad()
            a.grad += _unbroadcast(out.grad, a.data.shape)
        if b.requires_grad:
            b.ensure_grad()
            b.grad -= _unbroadcast(out.grad, b.data.shape)

    out._backward = _bw if out.requires_grad else None
    return out


def rsub(a, b: Tensor) -> Tensor:
    """a - b with a constant (e.g. 1 - z in the GRU update)."""
    a_arr = _as_array(a, b.data)
    out = Tensor(a_arr - b.data, b.requires_grad, (b,))

    def _bw():
        b.ensure_grad()
        b.grad -= _unbroadcast(out.grad, b.data.shape)

    out._backward = _bw if out.requires_grad else None
    return out


def mul(a: Tensor, b) -> Tensor:
    b = _lift(b, a)
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad, (a, b))

    def _bw():
        if a.requires_grad:
            a.ensure_grad()
            a.grad += _unbroadcast(out.grad * b.data, a.data.shape)
        if b.requires_grad:
            b.ensure_grad()
            b.grad += _unbroadcast(out.grad * a.data, b.data.shape)

    out._backward = _bw if out.requires_grad else None
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data, a.requires_grad or b.requires_grad, (a, b))

    def _bw():
        g = out.grad
        if a.requires_grad:
            a.ensure_grad()
            a.grad += g @ b.data.T
        if b.requires_grad:
            b.ensure_grad()
            if a.data.ndim == 1:
                b.grad += np.outer(a.data, g)
            else:
                b.grad += a.data.T @ g

    out._backward = _bw if out.requires_grad else None
    return out


def sigmoid(a: Tensor) -> Tensor:
    # stable in both tails
    x = a.data
    e = np.exp(-np.abs(x))
    out_data = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    out = Tensor(out_data, a.requires_grad, (a,))

    def _bw():
        a.ensure_grad()
        a.grad += out.grad * out.data * (1.0 - out.data)

    out._backward = _bw if out.requires_grad else None
    return out


def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data), a.requires_grad, (a,))

    def _bw():
        a.ensure_grad()
        a.grad += out.grad * (1.0 - out.data * out.data)

    out._backward = _bw if out.requires_grad else None
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0), a.requires_grad, (a,))

    def _bw():
        a.ensure_grad()
        a.grad += out.grad * (a.data > 0)

    out._backward = _bw if out.requires_grad else None
    return out


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    data = np.concatenate([p.data for p in parts], axis=axis)
    req = any(p.requires_grad for p in parts)
    out = Tensor(data, req, tuple(parts))

    def _bw():
        offset = 0
        for p in parts:
            width = p.data.shape[axis]
            slicer = [slice(None)] * data.ndim
            slicer[axis] = slice(offset, offset + width)
            if p.requires_grad:
                p.ensure_grad()
                p.grad += out.grad[tuple(slicer)]
            offset += width

    out._backward = _bw if out.requires_grad else None
    return out


def rows(table: Tensor, indices) -> Tensor:
    """Embedding lookup: out[i] = table[indices[i]]. Gradient scatters onto rows."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise IndexError(f"index out of range for table with {table.data.shape[0]} rows")
    out = Tensor(table.data[idx], table.requires_grad, (table,))

    def _bw():
        table.ensure_grad()
        np.add.at(table.grad, idx, out.grad)

    out._backward = _bw if out.requires_grad else None
    return out


def tsum(a: Tensor) -> Tensor:
    # float64 accumulation regardless of storage dtype
    out = Tensor(np.asarray(a.data.sum(dtype=np.float64)), a.requires_grad, (a,))

    def _bw():
        a.ensure_grad()
        a.grad += np.asarray(out.grad, dtype=a.data.dtype)

    out._backward = _bw if out.requires_grad else None
    return out


def softmax_cross_entropy(logits: Tensor, targets, mask=None):
    """Summed cross-entropy over rows of logits against integer targets.

    logits: [B, V] (or [V] for a single row); targets: [B] ints; mask: [B]
     0/1 floats, rows with mask 0 contribute nothing. Returns (loss Tensor
    scalar float64, probs ndarray float64). Softmax is max-subtracted.
    """
    lg = logits.data if logits.data.ndim == 2 else logits.data[None, :]
    tg = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if tg.min(initial=0) < 0 or (tg.size and tg.max() >= lg.shape[1]):
        raise IndexError("target index out of range")
    m = np.ones(lg.shape[0]) if mask is None else np.asarray(mask, dtype=np.float64)
    x = lg.astype(np.float64)
    x = x - x.max(axis=1, keepdims=True)
    ex = np.exp(x)
    denom = ex.sum(axis=1, keepdims=True)
    probs = ex / denom
    logp = x - np.log(denom)
    nll = -(logp[np.arange(lg.shape[0]), tg] * m).sum()
    out = Tensor(np.asarray(nll), logits.requires_grad, (logits,))

    def _bw():
        g = (probs.copy())
        g[np.arange(lg.shape[0]), tg] -= 1.0
        g *= m[:, None]
        g *= out.grad
        logits.ensure_grad()
        logits.grad += g.reshape(logits.data.shape).astype(logits.data.dtype)

    out._backward = _bw if out.requires_grad else None
    return out, probs


def add_scalars(parts: Iterable[Tensor]) -> Tensor:
    parts = list(parts)
    total = np.asarray(sum(float(p.data) for p in parts))
    out = Tensor(total, any(p.requires_grad for p in parts), tuple(parts))

    def _bw():
        for p in parts:
            if p.requires_grad:
                p.ensure_grad()
                p.grad += np.asarray(out.grad, dtype=p.data.dtype)

    out._backward = _bw if out.requires_grad else None
    return out
