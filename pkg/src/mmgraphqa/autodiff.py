"""Taped reverse-mode automatic differentiation over dense float64 arrays.

Every op records onto the innermost active ``Tape`` (a thread-local stack,
so independent tapes may run concurrently).  Creation order is a topological
order, so ``Tape.backward`` replays records once, in reverse, accumulating
each contribution in a fixed order; repeated calls are bit-identical.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

_TLS = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_TLS, "stack", None)
    if stack is None:
        stack = []
        _TLS.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense float64 array, optionally tracked by the active tape."""

    __slots__ = ("data", "requires_grad", "grad", "tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class _Record:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out: Tensor, parents: tuple[Tensor, ...], backward: Callable):
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Ordered op records; context manager activating this tape."""

    def __init__(self):
        self._records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Reverse-mode sweep from a scalar ``loss`` produced on this tape.

        Returns a mapping from leaf tensors (requires_grad, not produced by
        an op) to their gradients, and stores the same arrays on ``.grad``.
        """
        if loss.tape is not self:
            raise ValueError("loss was not produced on this tape")
        if loss.data.shape != ():
            raise ValueError(f"loss must be a scalar, got shape {loss.data.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
        holders: dict[int, Tensor] = {id(loss): loss}
        for rec in reversed(self._records):
            g = grads.pop(id(rec.out), None)
            holders.pop(id(rec.out), None)
            if g is None:
                continue
            for parent, pg in zip(rec.parents, rec.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pid = id(parent)
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = np.asarray(pg, dtype=np.float64)
                    holders[pid] = parent
        out: dict[Tensor, np.ndarray] = {}
        for pid, g in grads.items():
            t = holders[pid]
            t.grad = g
            out[t] = g
        return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _apply(out_data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable) -> Tensor:
    tape = active_tape()
    req = any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=bool(req and tape is not None))
    if out.requires_grad:
        out.tape = tape
        tape._records.append(_Record(out, parents, backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / linear algebra


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _apply(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _apply(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _apply(ad * bd, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _apply(-a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _apply(a.data * c, (a,), lambda g: (g * c,))


def power(a, p: float) -> Tensor:
    """Elementwise x**p for a constant exponent p."""
    a = _as_tensor(a)
    p = float(p)
    ad = a.data

    def backward(g):
        return (g * p * np.power(ad, p - 1.0),)

    return _apply(np.power(ad, p), (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return g @ bd.T, ad.T @ g

    return _apply(ad @ bd, (a, b), backward)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0.0

    def backward(g):
        return (g * mask,)

    return _apply(np.where(mask, a.data, 0.0), (a,), backward)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.data.shape
    return _apply(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(_as_tensor(p) for p in parts)
    if not parts:
        raise ValueError("concat of zero tensors")
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(s) for s in np.split(g, splits, axis=axis))

    return _apply(np.concatenate([p.data for p in parts], axis=axis), parts, backward)


def gather_rows(x, idx) -> Tensor:
    """Select rows of ``x`` by integer index; backward scatters with +=."""
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    xd = x.data

    def backward(g):
        gx = np.zeros_like(xd)
        np.add.at(gx, idx, g)
        return (gx,)

    return _apply(xd[idx], (x,), backward)


def tsum(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    shape = x.data.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _apply(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward)


def mean(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    if n == 0:
        raise ValueError("mean over an empty axis")
    return scale(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# segment ops (receiver-grouped reductions for message passing)


def segment_sum(x, seg: np.ndarray, n: int) -> Tensor:
    """Sum rows of ``x`` into ``n`` buckets given per-row bucket ids."""
    x = _as_tensor(x)
    seg = np.asarray(seg, dtype=np.intp)
    out = np.zeros((n,) + x.data.shape[1:], dtype=np.float64)
    np.add.at(out, seg, x.data)

    def backward(g):
        return (g[seg],)

    return _apply(out, (x,), backward)


def segment_softmax(scores, seg: np.ndarray, n: int) -> Tensor:
    """Stable softmax of 1-D ``scores`` within each bucket of ``seg``."""
    scores = _as_tensor(scores)
    if scores.ndim != 1:
        raise ValueError(f"segment_softmax expects 1-D scores, got {scores.shape}")
    seg = np.asarray(seg, dtype=np.intp)
    m = np.full(n, -np.inf)
    np.maximum.at(m, seg, scores.data)
    e = np.exp(scores.data - m[seg])
    denom = np.zeros(n)
    np.add.at(denom, seg, e)
    alpha = e / denom[seg]

    def backward(g):
        s = np.zeros(n)
        np.add.at(s, seg, alpha * g)
        return (alpha * (g - s[seg]),)

    return _apply(alpha, (scores,), backward)


# ---------------------------------------------------------------------------
# softmax / loss


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    if x.data.shape[axis] == 0:
        raise ValueError("softmax of an empty input")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (y * g).sum(axis=axis, keepdims=True)),)

    return _apply(y, (x,), backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    if x.data.shape[axis] == 0:
        raise ValueError("log_softmax of an empty input")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _apply(out, (x,), backward)


def cross_entropy(logits: Tensor, gold: int) -> Tensor:
    """Negative log softmax probability of the ``gold`` class; scalar."""
    logits = _as_tensor(logits)
    if logits.ndim != 1:
        raise ValueError(f"cross_entropy expects a 1-D logit vector, got {logits.shape}")
    k = logits.shape[0]
    if not 0 <= gold < k:
        raise ValueError(f"gold index {gold} out of range for {k} classes")
    ls = log_softmax(logits)
    return reshape(neg(gather_rows(ls, [gold])), ())
