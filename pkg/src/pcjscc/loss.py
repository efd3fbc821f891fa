"""Training objective: Chamfer reconstruction plus symbol-usage, sparsity and diversity penalties."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .tensor import Tensor


@dataclass
class LossWeights:
    lambda_sym: float = 0.5
    lambda_sparsity: float = 1.0
    lambda_diversity: float = 1.0
    tau: float = 0.1

    def __post_init__(self):
        for name in ("lambda_sym", "lambda_sparsity", "lambda_diversity"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss.{name} must be >= 0")


@dataclass
class LossBreakdown:
    cd: Tensor
    sym: Tensor
    sparsity: Tensor
    diversity: Tensor
    total: Tensor
    weights: LossWeights

    def as_dict(self) -> dict[str, float]:
        return {
            "total": float(self.total.data),
            "cd": float(self.cd.data),
            "sym": float(self.sym.data),
            "sparsity": float(self.sparsity.data),
            "diversity": float(self.diversity.data),
        }


def _nearest(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """For (B, N, 3) ``a`` and (B, M, 3) ``b``: index in ``b`` of each a-point's nearest neighbour."""
    out = np.empty(a.shape[:2], dtype=np.int64)
    for i in range(a.shape[0]):
        d = ((a[i, :, None, :] - b[i, None, :, :]) ** 2).sum(-1)
        out[i] = np.argmin(d, axis=1)
    return out


def chamfer(x, x_hat) -> Tensor:
    """Bidirectional mean squared nearest-neighbour distance, averaged over the batch.

    Accepts (N, 3) or (B, N, 3) inputs; gradients route to each point's nearest partner.
    """
    x, x_hat = tn.as_tensor(x), tn.as_tensor(x_hat)
    if x.ndim == 2:
        x, x_hat = x.reshape(1, *x.shape), x_hat.reshape(1, *x_hat.shape)
    if x.shape[1] == 0 or x_hat.shape[1] == 0:
        raise ValueError("chamfer distance needs two non-empty clouds")
    fwd = _nearest(x.data, x_hat.data)
    bwd = _nearest(x_hat.data, x.data)
    d_ab = tn.tsum((x - tn.gather_rows(x_hat, fwd)) ** 2, axis=-1)
    d_ba = tn.tsum((x_hat - tn.gather_rows(x, bwd)) ** 2, axis=-1)
    return tn.mean(d_ab) + tn.mean(d_ba)


def symbol_usage_penalty(p: Tensor) -> Tensor:
    """``1 - H(p) / ln M``: 0 for uniform symbol usage, 1 for a single symbol."""
    p = tn.as_tensor(p)
    m = p.data.size
    if m < 2:
        raise ValueError("symbol alphabet needs at least two bins")
    if np.any(p.data < 0) or abs(p.data.sum() - 1.0) > 1e-9:
        raise ValueError("symbol histogram must be a probability vector")
    zero = Tensor((p.data == 0).astype(np.float64))
    entropy = -tn.tsum(p * tn.log(p + zero))
    return 1.0 - entropy * (1.0 / math.log(m))


def sparsity_penalty(s, tau: float = 0.1) -> Tensor:
    """Mean over batch and tokens of ``max(S - tau, 0)``."""
    return tn.mean(tn.relu(tn.as_tensor(s) - tau))


def diversity_penalty(z) -> Tensor:
    """Mean over samples of the mean squared off-diagonal token Gram entry ``<z_i, z_j> / D``.

    ``z`` is (B, T, D) of standardised tokens; T >= 2.
    """
    z = tn.as_tensor(z)
    _, t, d = z.shape
    if t < 2:
        raise ValueError("diversity penalty needs at least two tokens")
    gram = tn.matmul(z, tn.swapaxes(z, -1, -2)) * (1.0 / d)
    off = Tensor(1.0 - np.eye(t))
    per_sample = tn.tsum((gram * off) ** 2, axis=(1, 2)) * (1.0 / (t * (t - 1)))
    return tn.mean(per_sample)


def total(cd: Tensor, sym: Tensor, sparsity: Tensor, diversity: Tensor,
          weights: LossWeights = LossWeights()) -> LossBreakdown:
    cd, sym, sparsity, diversity = map(tn.as_tensor, (cd, sym, sparsity, diversity))
    tot = (cd + sym * weights.lambda_sym + sparsity * weights.lambda_sparsity
           + diversity * weights.lambda_diversity)
    return LossBreakdown(cd, sym, sparsity, diversity, tot, weights)
