"""SNR-conditioned decoder: coarse points, token refinement, upsampling, residual head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .layers import EncoderBlock, LayerNorm, Linear, MLP, Module, MultiHeadAttention, param
from .tensor import Tensor

ABLATIONS = ("none", "transformer", "upsample", "residual", "coarse-only")


@dataclass(frozen=True)
class DecoderAblation:
    use_transformer: bool = True
    use_upsample: bool = True
    use_residual_head: bool = True

    @property
    def coarse_only(self) -> bool:
        return not (self.use_transformer or self.use_upsample or self.use_residual_head)

    @classmethod
    def from_name(cls, name: str) -> "DecoderAblation":
        """Map a CLI ablation name (the stage removed) to flags."""
        if name not in ABLATIONS:
            raise ValueError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}")
        return {
            "none": cls(),
            "transformer": cls(use_transformer=False),
            "upsample": cls(use_upsample=False),
            "residual": cls(use_residual_head=False),
            "coarse-only": cls(False, False, False),
        }[name]

    @property
    def name(self) -> str:
        for n in ABLATIONS:
            if DecoderAblation.from_name(n) == self:
                return n
        return "custom"


@dataclass
class DecoderConfig:
    dim: int = 256
    heads: int = 8
    ffn_hidden: int = 512
    tokens: int = 64
    points: int = 2048
    snr_hidden: int = 64
    head_hidden: int = 128
    seed_dim: int = 16
    snr_scale: float = 10.0  # dB are divided by this before the embedding MLP

    def __post_init__(self):
        if self.points % self.tokens:
            raise ValueError(f"decoder needs N divisible by T, got N={self.points}, T={self.tokens}")
        if self.dim % self.heads:
            raise ValueError(f"decoder dim {self.dim} not divisible by heads {self.heads}")

    @property
    def fanout(self) -> int:
        return self.points // self.tokens


@dataclass
class DecoderIntermediates:
    x_initial: Tensor
    f_refined: Tensor
    x_tilde: Tensor
    f_out: Tensor
    x_hat: Tensor


SNR_CLAMP_DB = 60.0


class SnrEmbedding(Module):
    """Scalar SNR estimate -> (1, 1, D) vector via 1 -> hidden -> D.

    The estimate is clamped to +-60 dB first, so a noiseless channel
    (+inf dB) gets a finite embedding.
    """

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, scale: float = 10.0):
        self.mlp = MLP(1, hidden, dim, rng)
        self.scale = scale

    def __call__(self, snr_db: float) -> Tensor:
        snr_db = float(np.clip(snr_db, -SNR_CLAMP_DB, SNR_CLAMP_DB))
        x = Tensor(np.full((1, 1, 1), snr_db / self.scale))
        return self.mlp(x)

    def zero_(self) -> "SnrEmbedding":
        for p in self.parameters():
            p.data[...] = 0.0
        return self


class Upsampler(Module):
    """Each token emits ``r`` children from its refined feature and ``r`` learned seed codes.

    Child offsets and child features come from linear heads on
    [token feature || seed code]; the child features then attend over all
    refined tokens (queries = children) and add the result.
    """

    def __init__(self, cfg: DecoderConfig, rng: np.random.Generator):
        r = cfg.fanout
        self.r = r
        self.seeds = param(rng.uniform(-1.0, 1.0, size=(r, cfg.seed_dim)))
        self.offset_feat = Linear(cfg.dim, 3, rng)
        self.offset_seed = Linear(cfg.seed_dim, 3, rng, bias=False)
        self.child_feat = Linear(cfg.dim, cfg.dim, rng)
        self.child_seed = Linear(cfg.seed_dim, cfg.dim, rng, bias=False)
        self.norm = LayerNorm(cfg.dim)
        self.attn = MultiHeadAttention(cfg.dim, cfg.heads, rng)

    def __call__(self, x_init: Tensor, f_ref: Tensor) -> tuple[Tensor, Tensor]:
        b, t, d = f_ref.shape
        n = t * self.r
        off = self.offset_feat(f_ref).reshape(b, t, 1, 3) + self.offset_seed(self.seeds)
        x_tilde = (x_init.reshape(b, t, 1, 3) + off).reshape(b, n, 3)
        child = self.child_feat(f_ref).reshape(b, t, 1, d) + self.child_seed(self.seeds)
        child = child.reshape(b, n, d)
        f_out = child + self.attn(self.norm(child), kv=f_ref)
        return x_tilde, f_out


def replicate(x: Tensor, r: int) -> Tensor:
    """(B, T, C) -> (B, T*r, C), each row repeated r times consecutively."""
    b, t, c = x.shape
    return tn.broadcast_to(x.reshape(b, t, 1, c), (b, t, r, c)).reshape(b, t * r, c)


class Decoder(Module):
    def __init__(self, cfg: DecoderConfig, rng: np.random.Generator,
                 ablation: DecoderAblation = DecoderAblation(), use_snr: bool = True):
        self.cfg = cfg
        self.ablation = ablation
        self.use_snr = use_snr
        self.snr_embed = SnrEmbedding(cfg.dim, cfg.snr_hidden, rng, cfg.snr_scale)
        if not use_snr:
            # the disabled embedding is all zeros and excluded from training
            self.snr_embed.zero_()
            for p in self.snr_embed.parameters():
                p.requires_grad = False
        self.coarse_head = Linear(cfg.dim, 3, rng)
        self.coord_embed = Linear(3, cfg.dim, rng)
        self.block = EncoderBlock(cfg.dim, cfg.heads, cfg.ffn_hidden, rng)
        self.upsampler = Upsampler(cfg, rng)
        self.residual = MLP(cfg.dim, cfg.head_hidden, 3, rng)

    def inject_snr(self, y: Tensor, snr_db: float) -> Tensor:
        if not self.use_snr:
            return y
        return y + self.snr_embed(snr_db)

    def coarse(self, y: Tensor) -> Tensor:
        return self.coarse_head(y)

    def refine(self, y: Tensor, x_init: Tensor) -> Tensor:
        if not self.ablation.use_transformer:
            return y
        return self.block(y + self.coord_embed(x_init))

    def upsample(self, x_init: Tensor, f_ref: Tensor, n: int | None = None) -> tuple[Tensor, Tensor]:
        n = self.cfg.points if n is None else n
        t = x_init.shape[1]
        if n % t or n // t != self.upsampler.r:
            raise ValueError(f"cannot upsample {t} tokens to {n} points with fan-out {self.upsampler.r}")
        if not self.ablation.use_upsample:
            return replicate(x_init, self.upsampler.r), replicate(f_ref, self.upsampler.r)
        return self.upsampler(x_init, f_ref)

    def residual_head(self, x_tilde: Tensor, f_out: Tensor) -> Tensor:
        if not self.ablation.use_residual_head:
            return x_tilde
        return x_tilde + self.residual(f_out)

    def __call__(self, y: Tensor, snr_db: float) -> DecoderIntermediates:
        y2 = self.inject_snr(y, snr_db)
        x_init = self.coarse(y2)
        f_ref = self.refine(y2, x_init)
        x_tilde, f_out = self.upsample(x_init, f_ref)
        x_hat = self.residual_head(x_tilde, f_out)
        return DecoderIntermediates(x_init, f_ref, x_tilde, f_out, x_hat)
