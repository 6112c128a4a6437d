"""Minimal dense float64 tensor with reverse-mode automatic differentiation.

Every op records its parents and a closure mapping the output gradient to
parent gradients.  Nodes carry a monotonically increasing creation id, so the
reverse of creation order is a valid (and deterministic) reverse topological
order for :func:`backward`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, DimensionError

_ids = itertools.count()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_id")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, _op="leaf"):
        arr = np.array(data, dtype=np.float64) if _op == "leaf" else np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr.sum()) and not np.isfinite(arr).all():
            raise FloatingPointError(f"non-finite values produced by {_op}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = tuple(_parents)
        self._backward = _backward
        self._op = _op
        self._id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def __getitem__(self, index) -> "Tensor":
        return take_slice(self, index)

    def __add__(self, other):
        return add(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, _op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, _op=op)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor, fixed_order: bool = False) -> Tensor:
    """Matrix product over the last two axes.

    Leading batch axes must match, except that a 2-d right operand is shared
    across the batch of a 3-d left operand.

    ``fixed_order=True`` accumulates the inner dimension strictly left to
    right (``((a0*b0) + a1*b1) + ...``) instead of delegating to BLAS, so the
    result is reproducible element by element by a scalar loop.
    """
    a, b = as_tensor(a), as_tensor(b)
    shared_rhs = a.data.ndim == 3 and b.data.ndim == 2
    if (
        a.data.ndim < 2
        or b.data.ndim < 2
        or a.shape[-1] != b.shape[-2]
        or (a.shape[:-2] != b.shape[:-2] and not shared_rhs)
    ):
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    if fixed_order:
        A, Bm = a.data, b.data
        out = np.zeros(A.shape[:-1] + Bm.shape[-1:])
        for t in range(A.shape[-1]):
            out = out + A[..., :, t : t + 1] * Bm[..., t : t + 1, :]
    else:
        out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            if shared_rhs:
                gb = gb.sum(axis=0)
        return ga, gb

    return _result(out, (a, b), backward, "matmul")


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    x = as_tensor(x)
    return _result(np.swapaxes(x.data, -1, -2).copy(), (x,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    return _result(x.data.reshape(shape).copy(), (x,), lambda g: (g.reshape(src),), "reshape")


def take_slice(x: Tensor, index) -> Tensor:
    """Basic (slice/integer) indexing."""
    x = as_tensor(x)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[index] += g
        return (gx,)

    return _result(x.data[index].copy(), (x,), backward, "slice")


def pad_left(x: Tensor, width: int) -> Tensor:
    """Prepend ``width`` zero columns along the last axis."""
    x = as_tensor(x)
    pad = [(0, 0)] * (x.data.ndim - 1) + [(width, 0)]
    return _result(np.pad(x.data, pad), (x,), lambda g: (g[..., width:],), "pad_left")


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([x.data for x in xs], axis=axis), xs, backward, "concat")


# ---------------------------------------------------------------------------
# pointwise


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def scale(x: Tensor, alpha: float) -> Tensor:
    x = as_tensor(x)
    return _result(x.data * alpha, (x,), lambda g: (g * alpha,), "scale")


def mul_const(x: Tensor, c: np.ndarray) -> Tensor:
    """Multiply by a constant (non-differentiable) array of the same shape."""
    x = as_tensor(x)
    c = np.asarray(c, dtype=np.float64)
    if c.shape != x.shape:
        raise DimensionError(f"mul_const shape mismatch: {x.shape} vs {c.shape}")
    return _result(x.data * c, (x,), lambda g: (g * c,), "mul_const")


def elementwise(x: Tensor, kind: str, other: Tensor | None = None, alpha: float = 1.0) -> Tensor:
    """Dispatch for the pointwise op family: ``relu``, ``add`` and ``scale``."""
    if kind == "relu":
        return relu(x)
    if kind == "add":
        return add(x, other)
    if kind == "scale":
        return scale(x, alpha)
    raise ConfigurationError(f"unknown elementwise kind {kind!r}")


def tsum(x: Tensor) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _result(np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),), "sum")


def weighted_sum(x: Tensor, w: np.ndarray) -> Tensor:
    """Scalar ``sum(x * w)`` for a constant ``w``; handy for gradient probes."""
    x = as_tensor(x)
    w = np.asarray(w, dtype=np.float64)
    return _result(np.array((x.data * w).sum()), (x,), lambda g: (float(g) * w,), "weighted_sum")


# ---------------------------------------------------------------------------
# softmax / losses


def softmax_rows(logits: Tensor) -> Tensor:
    """Softmax along the last axis with per-row max subtraction."""
    x = as_tensor(logits)
    s = x.data - x.data.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)

    def backward(g):
        out = g - (g * s).sum(axis=-1, keepdims=True)
        out *= s
        return (out,)

    return _result(s, (x,), backward, "softmax")


def softmax_cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean over pixels of ``-log softmax(logits)[target]``; logits are K x H x W."""
    x = as_tensor(logits)
    t = np.asarray(target)
    K = x.shape[0]
    if t.shape != x.shape[1:]:
        raise DimensionError(f"target shape {t.shape} does not match logits {x.shape}")
    if t.size and (t.min() < 0 or t.max() >= K):
        raise ConfigurationError(f"labels must lie in [0, {K}); got range [{t.min()}, {t.max()}]")
    z = x.data - x.data.max(axis=0, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=0, keepdims=True))
    logp = z - lse
    onehot = np.zeros_like(x.data)
    np.put_along_axis(onehot, t[None].astype(np.intp), 1.0, axis=0)
    n = t.size
    loss = -(logp * onehot).sum() / n

    def backward(g):
        return (float(g) * (np.exp(logp) - onehot) / n,)

    return _result(np.array(loss), (x,), backward, "cross_entropy")


# ---------------------------------------------------------------------------
# convolution and resampling


def conv2d(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """Same-padded cross-correlation of a C_in x H x W map with 1x1 or 3x3 kernels."""
    x, w, bias = as_tensor(x), as_tensor(w), as_tensor(bias)
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise DimensionError(f"conv2d expects C x H x W input and 4-d kernel, got {x.shape}, {w.shape}")
    co, ci, kh, kw = w.shape
    if kh != kw or kh not in (1, 3):
        raise ConfigurationError(f"unsupported kernel size {kh}x{kw}; only 1x1 and 3x3")
    if ci != x.shape[0] or bias.shape != (co,):
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, kernel {w.shape}, bias {bias.shape}")
    _, H, W = x.shape
    wm = w.data.reshape(co, ci * kh * kw)
    if kh == 1:
        cols = x.data.reshape(ci, H * W)
    else:
        xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1)))
        win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # ci, H, W, 3, 3
        cols = win.transpose(0, 3, 4, 1, 2).reshape(ci * 9, H * W)
    out = (wm @ cols + bias.data[:, None]).reshape(co, H, W)

    def backward(g):
        g2 = g.reshape(co, H * W)
        gx = gw = gb = None
        if w.requires_grad:
            gw = (g2 @ cols.T).reshape(w.shape)
        if bias.requires_grad:
            gb = g2.sum(axis=1)
        if x.requires_grad:
            gcols = wm.T @ g2
            if kh == 1:
                gx = gcols.reshape(ci, H, W)
            else:
                gcols = gcols.reshape(ci, 3, 3, H, W)
                gxp = np.zeros((ci, H + 2, W + 2))
                for di in range(3):
                    for dj in range(3):
                        gxp[:, di : di + H, dj : dj + W] += gcols[:, di, dj]
                gx = gxp[:, 1:-1, 1:-1]
        return gx, gw, gb

    return _result(out, (x, w, bias), backward, "conv2d")


def maxpool2(x: Tensor) -> Tensor:
    x = as_tensor(x)
    C, H, W = x.shape
    if H % 2 or W % 2:
        raise DimensionError(f"maxpool2 needs even spatial dims, got {H}x{W}")
    win = x.data.reshape(C, H // 2, 2, W // 2, 2).transpose(0, 1, 3, 2, 4).reshape(C, H // 2, W // 2, 4)
    arg = win.argmax(axis=-1)[..., None]
    out = np.take_along_axis(win, arg, axis=-1)[..., 0]

    def backward(g):
        g4 = np.zeros((C, H // 2, W // 2, 4))
        np.put_along_axis(g4, arg, g[..., None], axis=-1)
        return (g4.reshape(C, H // 2, W // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(C, H, W),)

    return _result(out, (x,), backward, "maxpool2")


def upsample2(x: Tensor) -> Tensor:
    x = as_tensor(x)
    C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)
    return _result(out, (x,), lambda g: (g.reshape(C, H, 2, W, 2).sum(axis=(2, 4)),), "upsample2")


def pool_unpool(x: Tensor, kind: str) -> Tensor:
    if kind == "maxpool2":
        return maxpool2(x)
    if kind == "nearest_upsample2":
        return upsample2(x)
    raise ConfigurationError(f"unknown pooling kind {kind!r}")


# ---------------------------------------------------------------------------
# position gather / scatter (used by the blocked attention)


def gather_positions(x: Tensor, index: np.ndarray) -> Tensor:
    """Gather columns of a d x N matrix into an M x L x d stack (``index`` is M x L)."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    d, N = x.shape
    out = x.data.T[index]

    def backward(g):
        gT = np.zeros((N, d))
        np.add.at(gT, index.reshape(-1), g.reshape(-1, d))
        return (gT.T,)

    return _result(out, (x,), backward, "gather")


def scatter_positions(y: Tensor, index: np.ndarray, n_positions: int, reverse: bool = False) -> Tensor:
    """Sum an M x L x d stack back into a d x N matrix.

    Contributions are accumulated block by block in the order of ``index``
    (raster order for a schedule), or in the opposite order with ``reverse``.
    """
    y = as_tensor(y)
    index = np.asarray(index, dtype=np.intp)
    M, L, d = y.shape
    vals = y.data
    idx = index
    if reverse:
        vals, idx = vals[::-1], idx[::-1]
    acc = np.zeros((n_positions, d))
    np.add.at(acc, idx.reshape(-1), vals.reshape(-1, d))

    def backward(g):
        return (g.T[index],)

    return _result(acc.T.copy(), (y,), backward, "scatter")


# ---------------------------------------------------------------------------
# graph traversal


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad tensor reachable from ``loss``.

    Leaf gradients accumulate across calls (call ``zero_grad`` between steps);
    intermediate gradients are overwritten.
    """
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t._id in nodes or not t.requires_grad:
            continue
        nodes[t._id] = t
        stack.extend(t._parents)
    grads: dict[int, np.ndarray] = {loss._id: np.ones_like(loss.data)}
    for nid in sorted(nodes, reverse=True):
        t = nodes[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        if t._backward is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        t.grad = g
        for p, gp in zip(t._parents, t._backward(g)):
            if gp is None or not p.requires_grad:
                continue
            gp = np.asarray(gp, dtype=np.float64).reshape(p.shape)
            grads[p._id] = grads[p._id] + gp if p._id in grads else gp


# ---------------------------------------------------------------------------
# gradient oracle and optimizer


def finite_diff_gradient(f: Callable[[Tensor], Tensor | float], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if h <= 0:
        raise ValueError("h must be positive")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)

    def ev(arr):
        r = f(Tensor(arr))
        return r.item() if isinstance(r, Tensor) else float(r)

    for i in range(base.size):
        xp = base.copy().reshape(-1)
        xm = base.copy().reshape(-1)
        xp[i] += h
        xm[i] -= h
        flat[i] = (ev(xp.reshape(base.shape)) - ev(xm.reshape(base.shape))) / (2 * h)
    return grad


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: AdamState) -> Sequence[Tensor]:
    """One bias-corrected ADAM update, in place on ``params``."""
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} params but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise DimensionError("optimizer state does not match parameter list")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape or m.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def relative_gradient_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error, safe when both gradients vanish."""
    num = float(np.linalg.norm(np.ravel(analytic) - np.ravel(numeric)))
    den = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), 1e-300)
    return 0.0 if num == 0.0 else num / den
