"""Patch tokenizer and transformer encoder producing latent tokens."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .layers import EncoderBlock, Linear, Module, param
from .tensor import Tensor


@dataclass
class EncoderConfig:
    dim: int = 256
    depth: int = 4
    heads: int = 8
    tokens: int = 64
    ffn_hidden: int = 512
    pooling: str = "mean"  # or "max"

    def __post_init__(self):
        for name in ("dim", "heads", "tokens", "ffn_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"encoder.{name} must be >= 1")
        if self.depth < 0:
            raise ValueError("encoder.depth must be >= 0")
        if self.dim % self.heads:
            raise ValueError(f"encoder.dim={self.dim} not divisible by encoder.heads={self.heads}")
        if self.pooling not in ("mean", "max"):
            raise ValueError(f"unknown pooling {self.pooling!r}")


class Encoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.point_embed = Linear(3, cfg.dim, rng)
        # patch centers enter through their own bias-free map, so a token
        # carries where its patch sits as well as the patch's local shape
        self.center_embed = Linear(3, cfg.dim, rng, bias=False)
        self.pos = param(rng.normal(0.0, 0.02, size=(1, cfg.tokens, cfg.dim)))
        self.blocks = [EncoderBlock(cfg.dim, cfg.heads, cfg.ffn_hidden, rng) for _ in range(cfg.depth)]

    def tokenize(self, centers: np.ndarray, rel: np.ndarray) -> Tensor:
        """Embed (B, T, k, 3) relative patch coordinates and pool to (B, T, D), plus P."""
        if rel.shape[1] != self.cfg.tokens:
            raise tn.ShapeError(f"got {rel.shape[1]} patches, encoder configured for {self.cfg.tokens}")
        feats = self.point_embed(Tensor(rel))
        if self.cfg.pooling == "mean":
            pooled = tn.mean(feats, axis=2)
        else:
            pooled = -tn.amin(-feats, axis=2)
        return pooled + self.center_embed(Tensor(centers)) + self.pos

    def encode(self, z: Tensor) -> Tensor:
        for block in self.blocks:
            z = block(z)
        return z

    def __call__(self, centers: np.ndarray, rel: np.ndarray) -> Tensor:
        return self.encode(self.tokenize(centers, rel))
