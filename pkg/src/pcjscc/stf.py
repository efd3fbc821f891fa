"""Sensitivity scoring, soft token weighting and hard top-K payload selection."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import tensor as tn
from .layers import LayerNorm, Linear, Module
from .tensor import Tensor


@dataclass(frozen=True)
class PayloadBudget:
    K: int
    D: int
    N: int
    b: int

    def __post_init__(self):
        for name in ("K", "D", "N", "b"):
            if getattr(self, name) < 1:
                raise ValueError(f"payload {name} must be positive, got {getattr(self, name)}")

    @property
    def cbr(self) -> Fraction:
        """Channel uses per source dimension: K*D / (3N)."""
        return Fraction(self.K * self.D, 3 * self.N)

    @property
    def bpp(self) -> Fraction:
        """Payload bits per point: K*D*b / N."""
        return Fraction(self.K * self.D * self.b, self.N)


def budget(K: int, D: int, N: int, b: int = 8) -> PayloadBudget:
    return PayloadBudget(K, D, N, b)


class SensitivityFilter(Module):
    """Scores tokens in [0, 1], reweights them, and refines the result.

    With ``refine=False`` the refinement MLP is skipped (identity), which is
    the configuration where the soft and hard paths coincide for S = 1, K = T.
    """

    def __init__(self, dim: int, rng: np.random.Generator, refine: bool = True):
        self.score_norm = LayerNorm(dim)
        self.score_fc1 = Linear(dim, dim, rng)
        self.score_fc2 = Linear(dim, 1, rng)
        self.refine = refine
        self.refine_norm = LayerNorm(dim)
        self.refine_fc1 = Linear(dim, dim, rng)
        self.refine_fc2 = Linear(dim, dim, rng)

    def score(self, z: Tensor) -> Tensor:
        h = tn.relu(self.score_fc1(self.score_norm(z)))
        return tn.sigmoid(self.score_fc2(h))

    def filter_soft(self, z: Tensor, s: Tensor) -> Tensor:
        weighted = z * s
        if not self.refine:
            return weighted
        return self.refine_fc2(tn.relu(self.refine_fc1(self.refine_norm(weighted))))

    def __call__(self, z: Tensor) -> tuple[Tensor, Tensor]:
        s = self.score(z)
        return self.filter_soft(z, s), s


def topk_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Per-row indices of the ``k`` largest scores, ties to the lower index, sorted ascending."""
    scores = np.asarray(scores)
    t = scores.shape[-1]
    if not 1 <= k <= t:
        raise ValueError(f"K must lie in [1, {t}], got {k}")
    order = np.argsort(-scores, axis=-1, kind="stable")[..., :k]
    return np.sort(order, axis=-1)


def select_topk(z: Tensor, s: Tensor | np.ndarray, k: int) -> tuple[Tensor, np.ndarray]:
    """Keep the K highest-scoring tokens per sample, in ascending index order.

    ``s`` is (B, T, 1) or (B, T). Returns kept tokens (B, K, D) and the index
    sets (B, K), which travel as error-free side information.
    """
    sv = s.data if isinstance(s, Tensor) else np.asarray(s)
    if sv.ndim == 3:
        sv = sv[..., 0]
    idx = topk_indices(sv, k)
    b = np.arange(z.shape[0])[:, None]
    return tn.getitem(z, (b, idx)), idx


def scatter_tokens(kept: Tensor, idx: np.ndarray, t: int) -> Tensor:
    """Place (B, K, D) received tokens at their positions in a zero-filled (B, T, D) array."""
    bsz, k, d = kept.shape
    onehot = np.zeros((bsz, t, k))
    onehot[np.arange(bsz)[:, None], idx, np.arange(k)[None, :]] = 1.0
    return tn.matmul(Tensor(onehot), kept)
