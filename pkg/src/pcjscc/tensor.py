"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op records its parents and a backward closure on the output tensor, so
the recorded graph is the tape. ``backward`` walks it once in reverse
topological order. After a backward pass the interior nodes drop their
parents and closures (the tape is consumed); leaves keep their ``grad``
buffers, which accumulate until :func:`zero_grad` or ``t.grad = None``.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Run forward code without recording a tape."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class ShapeError(ValueError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # construction -------------------------------------------------------
    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"], backward) -> "Tensor":
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    # autodiff -----------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        backward(self, grad)

    # operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Populate ``.grad`` on every reachable tensor that requires it.

    ``loss`` must be a scalar unless an explicit seed ``grad`` is supplied.
    """
    if grad is None:
        if loss.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        return
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    grads: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=np.float64)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node._accumulate(g)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        # consume the tape
        node._parents = ()
        node._backward = None


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# elementwise binary ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._make(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)

    def bw(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._make(a.data / b.data, (a, b), bw)


def scale(a, c: float) -> Tensor:
    return mul(a, float(c))


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shapes {a.shape} and {b.shape} do not broadcast") from None


# elementwise unary ----------------------------------------------------------

def _unary(a: Tensor, out: np.ndarray, dfn) -> Tensor:
    def bw(g):
        return (g * dfn(),)

    return Tensor._make(out, (a,), bw)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return _unary(a, a.data**p, lambda: p * a.data ** (p - 1))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _unary(a, out, lambda: out)


def log(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.log(a.data), lambda: 1.0 / a.data)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _unary(a, out, lambda: 0.5 / out)


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.abs(a.data), lambda: np.sign(a.data))


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.maximum(a.data, 0.0), lambda: (a.data > 0).astype(np.float64))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # split by sign so exp never overflows
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _unary(a, out, lambda: out * (1.0 - out))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _unary(a, out, lambda: 1.0 / (1.0 + np.exp(-x)))


def elementwise(op: str, *args, **kwargs) -> Tensor:
    """Dispatch by name: relu, sigmoid, softplus, add, mul, scale."""
    table = {
        "relu": relu,
        "sigmoid": sigmoid,
        "softplus": softplus,
        "add": add,
        "mul": mul,
        "scale": scale,
    }
    if op not in table:
        raise ValueError(f"unknown elementwise op {op!r}")
    return table[op](*args, **kwargs)


# reductions -----------------------------------------------------------------

def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return Tensor._make(out, (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    n = math.prod(a.shape[ax] for ax in axes)
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def amin(a, axis: int) -> Tensor:
    """Minimum along one axis; the gradient goes to the first minimiser."""
    a = as_tensor(a)
    idx = np.argmin(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis).squeeze(axis)

    def bw(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (full,)

    return Tensor._make(out, (a,), bw)


# shape ----------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def bw(g):
        return (g.reshape(a.shape),)

    return Tensor._make(out, (a,), bw)


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return (np.swapaxes(g, ax1, ax2),)

    return Tensor._make(np.swapaxes(a.data, ax1, ax2), (a,), bw)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return (_unbroadcast(g, a.shape),)

    return Tensor._make(np.broadcast_to(a.data, shape).copy(), (a,), bw)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._make(a.data[idx], (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in ts], axis=axis), ts, bw)


def gather_rows(a, idx: np.ndarray) -> Tensor:
    """Batched row gather: ``out[b, i] = a[b, idx[b, i]]`` for ``a`` of shape (B, M, C)."""
    a = as_tensor(a)
    b_idx = np.arange(a.shape[0])[:, None]
    out = a.data[b_idx, idx]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (b_idx, idx), g)
        return (full,)

    return Tensor._make(out, (a,), bw)


# linear algebra -------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch dims do not broadcast: {a.shape} x {b.shape}") from None

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._make(a.data @ b.data, (a, b), bw)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (a,), bw)


def layernorm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then apply gamma, beta."""
    if eps <= 0:
        raise ValueError(f"layernorm eps must be positive, got {eps}")
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        d = x.shape[-1]
        gx_hat = g * gamma.data
        gx = inv / d * (d * gx_hat - gx_hat.sum(-1, keepdims=True)
                        - xhat * (gx_hat * xhat).sum(-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)

    return Tensor._make(out, (x, gamma, beta), bw)


def softmax_attention(q, k, v, mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention over the second-to-last axis.

    ``q`` (..., Tq, d), ``k`` and ``v`` (..., Tk, d). Logits are scaled by
    1/sqrt(d); ``mask`` (broadcastable to (..., Tq, Tk), True = keep) removes
    keys from the softmax.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = q.shape[-1]
    logits = matmul(q, swapaxes(k, -1, -2)) * (1.0 / math.sqrt(d))
    if mask is not None:
        logits = logits + Tensor(np.where(mask, 0.0, -1e30))
    return matmul(softmax(logits, axis=-1), v)


# quantisation ---------------------------------------------------------------

def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def ste_round_scaled(x, alpha, lo: float, hi: float) -> Tensor:
    """``clip(round(alpha * x))`` with a straight-through backward.

    The gradient w.r.t. ``x`` is passed through unchanged (identity Jacobian);
    ``alpha`` receives ``sum(g * x)`` as if the rounding were absent.
    """
    x, alpha = as_tensor(x), as_tensor(alpha)
    out = np.clip(round_half_away(alpha.data * x.data), lo, hi)

    def bw(g):
        return g, _unbroadcast(g * x.data, alpha.shape)

    return Tensor._make(out, (x, alpha), bw)


# gradient checking ----------------------------------------------------------

def numerical_grad(fn: Callable[[], Tensor], t: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` w.r.t. ``t.data`` (mutated in place)."""
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(fn().data)
            flat[i] = orig - step
            fm = float(fn().data)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps identically-zero gradients (e.g. a key bias under softmax)
    from turning finite-difference round-off into a relative error of 1.
    """
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(num / den)


def gradcheck(fn: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5) -> dict[int, float]:
    """Compare autodiff gradients of scalar ``fn()`` against finite differences.

    Returns ``{param index: relative error}``.
    """
    zero_grad(params)
    loss = fn()
    backward(loss)
    errs = {}
    for i, p in enumerate(params):
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        errs[i] = relative_error(analytic, numerical_grad(fn, p, step))
    return errs


def substitute(a, value: np.ndarray) -> Tensor:
    """Forward ``value`` in place of ``a.data``; backward is the identity to ``a``."""
    a = as_tensor(a)

    def bw(g):
        return (g,)

    return Tensor._make(np.asarray(value, dtype=np.float64), (a,), bw)


def std(a, axis: int = -1, keepdims: bool = True) -> Tensor:
    """Population standard deviation; zero-variance rows get a zero gradient."""
    a = as_tensor(a)
    mu = a.data.mean(axis=axis, keepdims=True)
    xc = a.data - mu
    sd = np.sqrt((xc * xc).mean(axis=axis, keepdims=True))
    n = a.shape[axis]

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(sd > 0, sd, 1.0)
        return (np.where(sd > 0, g * xc / (n * safe), 0.0),)

    out = sd if keepdims else sd.squeeze(axis)
    return Tensor._make(out, (a,), bw)


def triangular_histogram(a, lo: int, hi: int) -> Tensor:
    """Soft counts over integer bins ``lo..hi``: each value adds ``max(0, 1-|v-i|)`` to bin i."""
    a = as_tensor(a)
    v = a.data.reshape(-1)
    nb = hi - lo + 1
    f = np.floor(v)
    frac = v - f
    left = (f - lo).astype(np.int64)
    right = left + 1
    counts = np.zeros(nb)
    in_l = (left >= 0) & (left < nb)
    in_r = (right >= 0) & (right < nb)
    np.add.at(counts, left[in_l], 1.0 - frac[in_l])
    np.add.at(counts, right[in_r], frac[in_r])

    def bw(g):
        gl = np.where(in_l, g[np.clip(left, 0, nb - 1)], 0.0)
        gr = np.where(in_r, g[np.clip(right, 0, nb - 1)], 0.0)
        return ((gr - gl).reshape(a.shape),)

    return Tensor._make(counts, (a,), bw)
