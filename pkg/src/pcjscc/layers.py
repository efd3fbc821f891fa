"""Parameterised layers on top of :mod:`pcjscc.tensor`."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as tn
from .tensor import Tensor


class Module:
    """Parameter container; parameters are discovered by attribute walk."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in own.items():
            if state[k].shape != p.shape:
                raise ValueError(f"parameter {k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=np.float64)


def param(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


class Linear(Module):
    """``y = x @ W + b`` with U(-1/sqrt(fan_in), 1/sqrt(fan_in)) init."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / math.sqrt(fan_in)
        self.weight = param(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        self.bias = param(rng.uniform(-bound, bound, size=(fan_out,))) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = tn.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y

    def zero_(self) -> "Linear":
        self.weight.data[...] = 0.0
        if self.bias is not None:
            self.bias.data[...] = 0.0
        return self


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = param(np.ones(dim))
        self.beta = param(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return tn.layernorm(x, self.gamma, self.beta, self.eps)


class MLP(Module):
    """Linear -> ReLU -> Linear."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator):
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(tn.relu(self.fc1(x)))


def split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, t, d = x.shape
    return tn.swapaxes(x.reshape(*lead, t, heads, d // heads), -2, -3)


def merge_heads(x: Tensor) -> Tensor:
    *lead, h, t, dh = x.shape
    return tn.swapaxes(x, -2, -3).reshape(*lead, t, h * dh)


class MultiHeadAttention(Module):
    """Multi-head attention; self-attention when ``kv`` is omitted."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)

    def __call__(self, x: Tensor, kv: Tensor | None = None, mask: np.ndarray | None = None) -> Tensor:
        kv = x if kv is None else kv
        q = split_heads(self.q(x), self.heads)
        k = split_heads(self.k(kv), self.heads)
        v = split_heads(self.v(kv), self.heads)
        if mask is not None:
            mask = mask[..., None, None, :]  # (B, Tk) -> (B, 1, 1, Tk)
        return self.out(merge_heads(tn.softmax_attention(q, k, v, mask)))


class EncoderBlock(Module):
    """``z + FFN(LN(z + MHSA(LN(z))))``.

    The attention output only feeds the FFN branch; the outer residual adds
    the FFN output to the block input.
    """

    def __init__(self, dim: int, heads: int, ffn_hidden: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.ln2 = LayerNorm(dim)
        self.ffn = MLP(dim, ffn_hidden, dim, rng)

    def __call__(self, z: Tensor, mask: np.ndarray | None = None) -> Tensor:
        a = self.attn(self.ln1(z), mask=mask)
        return z + self.ffn(self.ln2(z + a))
