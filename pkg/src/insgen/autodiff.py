"""Minimal dense-tensor arithmetic with reverse-mode automatic differentiation.

Just enough machinery for a small encoder-decoder attention model: matmul,
softmax, layer norm, fused multi-head attention, embedding lookups, gathers
and reductions. Tensors wrap numpy arrays; a Tape records ops in execution
order (which is already topological) and replays them in reverse to
accumulate gradients.

Two precisions are supported: float64 for gradient checking, float32 for
training speed. No broadcasting beyond what the model needs.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "tensor",
    "set_finite_checks",
    "matmul",
    "add",
    "affine",
    "sub",
    "neg",
    "mul",
    "relu",
    "tanh",
    "softmax",
    "log_softmax",
    "logsumexp",
    "layer_norm",
    "attention",
    "embedding",
    "adjacent_pairs",
    "max_over_axis",
    "take",
    "tsum",
    "tmean",
    "reshape",
    "stack",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """A dense array with an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


_FINITE_CHECKS = False


def set_finite_checks(enabled: bool) -> None:
    """Toggle per-op NaN/Inf detection (on in tests, off in hot loops)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = enabled


class _Node:
    __slots__ = ("output", "inputs", "backward_fn")

    def __init__(self, output: Tensor, inputs: tuple[Tensor, ...], backward_fn):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """Execution-ordered record of differentiable ops.

    Ops append themselves while a tape is active (``with Tape() as t:``).
    Because ops record at execution time the list is topologically sorted
    by construction; reverse traversal propagates gradients.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    if _FINITE_CHECKS and not np.all(np.isfinite(out.data)):
        raise FloatingPointError("op produced non-finite values")
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(_Node(out, inputs, backward_fn))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into t.grad for every leaf tensor on the tape.

    Repeated calls accumulate; callers zero grads between steps. Never
    mutates intermediate grad buffers in place, so shared upstream arrays
    stay intact.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    produced = {id(n.output) for n in tape.nodes}
    if id(loss) not in produced:
        if loss.requires_grad:
            loss.accumulate_grad(np.ones_like(loss.data))
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue
        for t, g in zip(node.inputs, node.backward_fn(g_out)):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            acc = grads.get(key)
            grads[key] = g if acc is None else acc + g
            if key not in produced:
                leaves[key] = t
    for key, t in leaves.items():
        t.accumulate_grad(grads[key])


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product a @ b; operands at least 2-D, inner dims must agree."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    folded = a.data.ndim > 2 and b.data.ndim == 2  # one GEMM beats a batched loop
    if folded:
        k, n = b.shape
        out = Tensor((a.data.reshape(-1, k) @ b.data).reshape(a.shape[:-1] + (n,)))
    else:
        out = Tensor(a.data @ b.data)

    def bwd(g):
        if folded:
            g2 = g.reshape(-1, b.shape[1])
            ga = (g2 @ b.data.T).reshape(a.shape)
            gb = a.data.reshape(-1, a.shape[-1]).T @ g2
            return ga, gb
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _record(out, (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), bwd)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused x @ w + b for x (..., k), w (k, n), b (n,)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"affine inner dimensions disagree: {x.shape} vs {w.shape}")
    k, n = w.shape
    y = x.data.reshape(-1, k) @ w.data
    y += b.data
    out = Tensor(y.reshape(x.shape[:-1] + (n,)))

    def bwd(g):
        g2 = g.reshape(-1, n)
        gx = (g2 @ w.data.T).reshape(x.shape)
        gw = x.data.reshape(-1, k).T @ g2
        gb = g2.sum(axis=0)
        return gx, gw, gb

    return _record(out, (x, w, b), bwd)


def neg(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(_as_tensor(b)))


def mul(a: Tensor, b) -> Tensor:
    """Elementwise (broadcasting) product; b may be a plain scalar/array constant."""
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), bwd)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0))
    return _record(out, (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * (1.0 - y * y),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along `axis`: nonnegative, sums to one."""
    a = _as_tensor(a)
    if a.data.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (a,), bwd)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    if a.data.shape[axis] == 0:
        raise ShapeError("log_softmax over an empty axis")
    m = a.data.max(axis=axis, keepdims=True)
    z = a.data - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    out = Tensor(y)
    p = np.exp(y)

    def bwd(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _record(out, (a,), bwd)


def logsumexp(a: Tensor, axis: int = 0) -> Tensor:
    a = _as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    s = np.exp(a.data - m).sum(axis=axis)
    y = np.squeeze(m, axis=axis) + np.log(s)
    out = Tensor(y)
    p = np.exp(a.data - np.expand_dims(y, axis))

    def bwd(g):
        return (np.expand_dims(g, axis) * p,)

    return _record(out, (a,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xhat = x.data - mu
    var = np.einsum("...i,...i->...", xhat, xhat)[..., None] / x.shape[-1]
    inv = 1.0 / np.sqrt(var + eps)
    xhat *= inv
    y = xhat * gain.data
    y += bias.data
    out = Tensor(y)

    def bwd(g):
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        return dx, dgain, dbias

    return _record(out, (x, gain, bias), bwd)


def attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    num_heads: int = 1,
    mask: np.ndarray | None = None,
) -> Tensor:
    """Fused scaled-dot-product attention: softmax(QK^T / sqrt(d)) V per head.

    q: (..., Tq, h), k/v: (..., Tk, h) with h divisible by num_heads.
    mask, when given, is boolean with True marking visible keys and must
    broadcast to (..., Tq, Tk); with mask=None every position attends to
    every position.
    """
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape != v.shape:
        raise ShapeError(f"attention shapes disagree: q{q.shape} k{k.shape} v{v.shape}")
    h = q.shape[-1]
    if h % num_heads != 0:
        raise ShapeError(f"model width {h} not divisible by {num_heads} heads")
    d = h // num_heads

    squeeze = q.data.ndim == 2
    qd = q.data[None] if squeeze else q.data
    kd = k.data[None] if squeeze else k.data
    vd = v.data[None] if squeeze else v.data
    B, Tq, _ = qd.shape
    Tk = kd.shape[1]
    scale = qd.dtype.type(1.0 / math.sqrt(d))

    def split(x):  # (B, T, h) -> contiguous (B, heads, T, d)
        return np.ascontiguousarray(x.reshape(B, -1, num_heads, d).transpose(0, 2, 1, 3))

    qh, kh, vh = split(qd * scale), split(kd), split(vd)
    scores = qh @ np.swapaxes(kh, -1, -2)
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.ndim == 2:
            m = m[None]
        if m.ndim != 3 or any(
            ms not in (1, full) for ms, full in zip(m.shape, (B, Tq, Tk))
        ):
            raise ShapeError(f"attention mask {m.shape} does not broadcast to {(B, Tq, Tk)}")
        scores += np.where(m, 0.0, -1e9).astype(scores.dtype)[:, None, :, :]
    scores -= scores.max(axis=-1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=-1, keepdims=True)
    w = scores
    oh = w @ vh
    out_data = np.ascontiguousarray(oh.transpose(0, 2, 1, 3)).reshape(B, Tq, h)
    out = Tensor(out_data[0] if squeeze else out_data)

    def bwd(g):
        gd = g[None] if squeeze else g
        goh = np.ascontiguousarray(gd.reshape(B, Tq, num_heads, d).transpose(0, 2, 1, 3))
        gw = goh @ np.swapaxes(vh, -1, -2)
        gvh = np.swapaxes(w, -1, -2) @ goh
        gs = gw
        gs -= np.einsum("bhij,bhij->bhi", gw, w)[..., None]
        gs *= w
        gqh = gs @ kh
        gqh *= scale
        gkh = np.swapaxes(gs, -1, -2) @ qh  # qh holds the pre-scaled queries

        def merge(x):  # (B, heads, T, d) -> (B, T, h)
            return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(B, -1, h)

        gq, gk, gv = merge(gqh), merge(gkh), merge(gvh)
        if squeeze:
            gq, gk, gv = gq[0], gk[0], gv[0]
        return gq, gk, gv

    return _record(out, (q, k, v), bwd)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup table[ids]; gradient scatter-adds into the table."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    out = Tensor(table.data[ids])

    def bwd(g):
        # segment-sum scatter (sort + reduceat); np.add.at is far slower
        gt = np.zeros_like(table.data)
        flat_ids = ids.reshape(-1)
        g2 = g.reshape(-1, table.shape[-1])
        order = np.argsort(flat_ids, kind="stable")
        sorted_ids = flat_ids[order]
        starts = np.concatenate(([0], np.flatnonzero(np.diff(sorted_ids)) + 1))
        gt[sorted_ids[starts]] = np.add.reduceat(g2[order], starts, axis=0)
        return (gt,)

    return _record(out, (table,), bwd)


def adjacent_pairs(x: Tensor) -> Tensor:
    """Concatenate each adjacent row pair: (..., T, h) -> (..., T-1, 2h)."""
    x = _as_tensor(x)
    T = x.shape[-2]
    if T < 2:
        raise ShapeError("adjacent_pairs needs at least two rows")
    h = x.shape[-1]
    buf = np.empty(x.shape[:-2] + (T - 1, 2 * h), dtype=x.dtype)
    buf[..., :h] = x.data[..., :-1, :]
    buf[..., h:] = x.data[..., 1:, :]
    out = Tensor(buf)

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[..., :-1, :] += g[..., :h]
        gx[..., 1:, :] += g[..., h:]
        return (gx,)

    return _record(out, (x,), bwd)


def max_over_axis(x: Tensor, axis: int) -> Tensor:
    """Elementwise max reduction; gradient routes to the (first) argmax."""
    x = _as_tensor(x)
    out = Tensor(x.data.max(axis=axis))
    idx = x.data.argmax(axis=axis)

    def bwd(g):
        gx = np.zeros_like(x.data)
        ax = axis % x.data.ndim
        grid = np.indices(out.data.shape)
        index = list(grid)
        index.insert(ax, idx)
        gx[tuple(index)] = g
        return (gx,)

    return _record(out, (x,), bwd)


def take(x: Tensor, indices: tuple[np.ndarray, ...]) -> Tensor:
    """Advanced-index gather x[indices] -> 1-D; gradient scatter-adds."""
    x = _as_tensor(x)
    out = Tensor(x.data[indices])

    def bwd(g):
        flat = np.ravel_multi_index(indices, x.shape)
        gx = np.bincount(flat, weights=g.astype(np.float64), minlength=x.data.size)
        return (gx.astype(x.dtype).reshape(x.shape),)

    return _record(out, (x,), bwd)


def tsum(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.asarray(x.data.sum()))
    return _record(out, (x,), lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),))


def tmean(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.asarray(x.data.mean()))
    n = x.data.size

    def bwd(g):
        return (np.broadcast_to(g / n, x.shape).astype(x.dtype, copy=True),)

    return _record(out, (x,), bwd)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data.reshape(shape))
    return _record(out, (x,), lambda g: (g.reshape(x.shape),))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in ts], axis=axis))

    def bwd(g):
        pieces = np.moveaxis(g, axis, 0)
        return tuple(pieces[i] for i in range(len(ts)))

    return _record(out, tuple(ts), bwd)
