"""Dense tensors with reverse-mode automatic differentiation on top of numpy.

The engine is a classic tape: every primitive records its parents and a
backward closure on the output tensor, and ``backward()`` walks the graph in
reverse topological order. 32-bit arrays are the training default; gradient
verification (``finite_difference_check``) requires 64-bit inputs because
central differences are unreliable in float32.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward values only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A dense real array plus an optional gradient buffer.

    Tensors created by primitives carry the backward closure that links them
    to their parents; leaf tensors (parameters, inputs) have none.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> np.ndarray:
        return self.data

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # operator sugar; non-Tensor operands become constants
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _make(data, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Record an op on the graph when grad is enabled and some parent needs it."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(output: Tensor):
    """Populate ``.grad`` of every requires_grad tensor reachable from ``output``.

    Gradients accumulate across calls; use ``zero_grads`` between steps.
    """
    if output.data.size != 1:
        raise ValueError(f"backward: output must be scalar, got shape {output.data.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    # local buffers so repeated backward() calls each contribute exactly once
    local: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    for node in reversed(topo):
        g = local.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in local:
                local[key] = local[key] + pg
            else:
                local[key] = pg


def zero_grads(params: Iterable[Tensor]):
    for p in params:
        p.grad = None


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def bwd(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), bwd)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(f"matmul: operands must be >=2-D, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    out = np.matmul(a.data, b.data)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _make(out, (a, b), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    out = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(a.data.shape),)

    return _make(out, (a,), bwd)


def transpose(a: Tensor, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = a.data.transpose(axes)

    def bwd(g):
        return (g.transpose(inv),)

    return _make(out, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), bwd)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: ids of any shape against a (vocab, dim) table."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and int(ids.max()) >= table.data.shape[0]:
        raise ValueError(
            f"embedding: id {int(ids.max())} out of range for table of {table.data.shape[0]} rows")
    if ids.size and int(ids.min()) < 0:
        raise ValueError("embedding: negative id")
    out = table.data[ids]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _make(out, (table,), bwd)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows of a 2-D tensor; repeated indices accumulate on backward."""
    a = _as_tensor(a)
    idx = np.asarray(idx)

    out = a.data[idx]

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(out, (a,), bwd)


def softmax_masked(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax over the last axis with an optional additive mask.

    ``mask`` broadcasts against ``x``; ``-inf`` entries are excluded exactly.
    Fully-masked rows yield all-zero output rather than NaN so that padding
    query positions stay finite.
    """
    x = _as_tensor(x)
    z = x.data if mask is None else x.data + mask
    m = np.max(z, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.where(np.isfinite(z), np.exp(z - m), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    p = np.where(s > 0, e / np.where(s > 0, s, 1.0), 0.0)

    def bwd(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - inner),)

    return _make(p, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ValueError(
            f"layer_norm: gain/bias must have shape ({d},), got {gain.data.shape} and {bias.data.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gain.data + bias.data

    def bwd(g):
        ggain = (g * xhat).reshape(-1, d).sum(axis=0)
        gbias = g.reshape(-1, d).sum(axis=0)
        gx_hat = g * gain.data
        gx = inv * (gx_hat
                    - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, ggain, gbias

    return _make(out, (x, gain, bias), bwd)


def gelu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data / math.sqrt(2.0)))
    out = x.data * cdf

    def bwd(g):
        pdf = np.exp(-0.5 * x.data * x.data) / math.sqrt(2.0 * math.pi)
        return (g * (cdf + x.data * pdf),)

    return _make(out, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.maximum(x.data, 0.0)

    def bwd(g):
        return (g * (x.data > 0),)

    return _make(out, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _make(out, (x,), bwd)


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.log(x.data)

    def bwd(g):
        return (g / x.data,)

    return _make(out, (x,), bwd)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where the input is inside [lo, hi]."""
    x = _as_tensor(x)
    out = np.clip(x.data, lo, hi)

    def bwd(g):
        return (g * ((x.data >= lo) & (x.data <= hi)),)

    return _make(out, (x,), bwd)


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    x = _as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _make(out, (x,), bwd)


def tmean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    x = _as_tensor(x)
    if axis is None:
        n = x.data.size
    else:
        n = x.data.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def tmax(x: Tensor, axis: int) -> Tensor:
    """Max reduction; the gradient routes to the first argmax along the axis."""
    x = _as_tensor(x)
    out = x.data.max(axis=axis)
    arg = x.data.argmax(axis=axis)

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(arg, axis),
                          np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _make(out, (x,), bwd)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; call only in train mode."""
    x = _as_tensor(x)
    if rate <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    scale = 1.0 / (1.0 - rate)
    out = x.data * keep * scale

    def bwd(g):
        return (g * keep * scale,)

    return _make(out, (x,), bwd)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


# ---------------------------------------------------------------------------
# parameter helpers and verification
# ---------------------------------------------------------------------------


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02,
                     dtype=np.float32) -> np.ndarray:
    """Normal draws redrawn until within two standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out.astype(dtype)


def parameter(data, name=None) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True, name=name)


def finite_difference_check(loss_fn: Callable[[], Tensor],
                            params: dict[str, Tensor] | Sequence[Tensor],
                            eps: float = 1e-5,
                            max_coords: int = 100,
                            seed: int = 0) -> float:
    """Compare backward() against central differences; return max relative error.

    Tensors larger than ``max_coords`` are sub-sampled (deterministically per
    ``seed``). Relative error uses denominator max(|a|, |b|, 1e-8). Requires
    64-bit parameters and eps in [1e-6, 1e-4].
    """
    if not (1e-6 <= eps <= 1e-4):
        raise ValueError(f"finite_difference_check: eps {eps} outside [1e-6, 1e-4]")
    plist = list(params.values()) if isinstance(params, dict) else list(params)
    for p in plist:
        if p.data.dtype != np.float64:
            raise ValueError("finite_difference_check requires float64 parameters")

    zero_grads(plist)
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise ValueError("finite_difference_check: non-finite loss")
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in plist]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, g in zip(plist, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        gflat = g.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            with no_grad():
                up = loss_fn().item()
            flat[c] = orig - eps
            with no_grad():
                down = loss_fn().item()
            flat[c] = orig
            fd = (up - down) / (2.0 * eps)
            denom = max(abs(fd), abs(gflat[c]), 1e-8)
            worst = max(worst, abs(fd - gflat[c]) / denom)
    return worst
