"""End-to-end learned transmission model.

Training runs the soft path: every token is weighted by its sensitivity
score, quantised with the straight-through estimator, power-normalised,
sent through the channel and decoded. Transmission runs the hard path:
only the K highest-scoring tokens are quantised and sent; the receiver
zero-fills the dropped positions (their indices are side information).
The receiver undoes power normalisation and the quantiser scale before
decoding; clipping reconstructions to the unit normalisation cube is optional.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import loss as L
from . import tensor as tn
from .channel import Channel, ChannelRealization
from .decoder import Decoder, DecoderAblation, DecoderConfig
from .encoder import Encoder, EncoderConfig
from .layers import Module
from .pointcloud import group_batch
from .quantizer import QuantizedPayload, Quantizer, QuantizerConfig, normalize, power_gain
from .stf import SensitivityFilter, budget, scatter_tokens, select_topk
from .tensor import Tensor


@dataclass
class ModelConfig:
    points: int = 2048
    tokens: int = 64
    dim: int = 256
    depth: int = 4
    heads: int = 8
    ffn_hidden: int = 512
    pooling: str = "mean"
    keep_tokens: int = 64
    bits: int = 8
    alpha_init: float = 4.0
    stf_refine: bool = True
    use_snr_embedding: bool = True
    ablation: str = "none"
    seed_dim: int = 16
    snr_hidden: int = 64
    head_hidden: int = 128
    dequantize: bool = True
    clip_output: bool = False

    def __post_init__(self):
        if not 1 <= self.keep_tokens <= self.tokens:
            raise ValueError(f"payload.K must lie in [1, T={self.tokens}], got {self.keep_tokens}")
        if self.points % self.tokens:
            raise ValueError(f"N={self.points} must be divisible by T={self.tokens}")
        # validate the sub-configs eagerly
        self.encoder_config()
        self.decoder_config()
        DecoderAblation.from_name(self.ablation)
        QuantizerConfig(self.bits, self.alpha_init)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.dim, self.depth, self.heads, self.tokens, self.ffn_hidden, self.pooling)

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(self.dim, self.heads, self.ffn_hidden, self.tokens, self.points,
                             self.snr_hidden, self.head_hidden, self.seed_dim)

    @property
    def patch_size(self) -> int:
        return self.points // self.tokens

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TransmitResult:
    x_hat: np.ndarray
    payload: QuantizedPayload
    realization: ChannelRealization
    scores: np.ndarray
    cbr: float = field(default=0.0)


class TransmissionModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(cfg.encoder_config(), rng)
        self.stf = SensitivityFilter(cfg.dim, rng, refine=cfg.stf_refine)
        self.quantizer = Quantizer(QuantizerConfig(cfg.bits, cfg.alpha_init))
        self.decoder = Decoder(cfg.decoder_config(), rng, DecoderAblation.from_name(cfg.ablation),
                               use_snr=cfg.use_snr_embedding)

    def group(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return group_batch(points, self.cfg.tokens, self.cfg.patch_size)

    def receive(self, y: Tensor, gain: Tensor) -> Tensor:
        """Undo power normalisation and, if enabled, the quantiser scale."""
        y = y / gain
        return y / self.quantizer.alpha if self.cfg.dequantize else y

    def loss(self, points: np.ndarray, grouping, snr_db: float, rng: np.random.Generator,
             weights: L.LossWeights = L.LossWeights(),
             channel: Channel | None = None) -> tuple[L.LossBreakdown, Tensor]:
        """Soft-path forward and the full training objective for a (B, N, 3) batch."""
        centers, rel = grouping
        z = self.encoder(centers, rel)
        z_f, s = self.stf(z)
        zhat, _, _ = normalize(z_f)
        zq = self.quantizer.quantize(zhat)
        sym = L.symbol_usage_penalty(self.quantizer.symbol_histogram(zq))
        gain = power_gain(zq, self.cfg.bits)
        channel = Channel() if channel is None else channel
        y, real = channel(zq * gain, rng, snr_db=snr_db)
        x_hat = self.decoder(self.receive(y, gain), real.snr_estimate_db).x_hat
        cd = L.chamfer(Tensor(points), x_hat)
        br = L.total(cd, sym, L.sparsity_penalty(s, weights.tau), L.diversity_penalty(zhat), weights)
        return br, x_hat

    def transmit(self, points: np.ndarray, channel: Channel, rng: np.random.Generator,
                 keep_tokens: int | None = None, grouping=None) -> TransmitResult:
        """Hard-path transmission of a (B, N, 3) batch; no tape is recorded."""
        k = self.cfg.keep_tokens if keep_tokens is None else keep_tokens
        with tn.no_grad():
            centers, rel = self.group(points) if grouping is None else grouping
            z = self.encoder(centers, rel)
            z_f, s = self.stf(z)
            kept, idx = select_topk(z_f, s, k)
            zhat, mu, sd = normalize(kept)
            zq = self.quantizer.quantize(zhat)
            gain = power_gain(zq, self.cfg.bits)
            y, real = channel(zq * gain, rng)
            y_full = scatter_tokens(self.receive(y, gain), idx, self.cfg.tokens)
            x_hat = self.decoder(y_full, real.snr_estimate_db).x_hat
        x_out = np.clip(x_hat.data, 0.0, 1.0) if self.cfg.clip_output else x_hat.data
        payload = QuantizedPayload(zq.data.astype(np.int64), mu, sd, 1.0 / gain.data, idx)
        cbr = float(budget(k, self.cfg.dim, self.cfg.points, self.cfg.bits).cbr)
        return TransmitResult(x_out, payload, real, s.data[..., 0], cbr)
