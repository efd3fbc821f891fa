"""Per-token standardisation, learnable-scale integer quantisation, power normalisation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .layers import Module, param
from .tensor import Tensor

EPS = 1e-6


class ModeError(RuntimeError):
    pass


def inverse_softplus(y: float) -> float:
    if y <= 0:
        raise ValueError("softplus output must be positive")
    return y + math.log(-math.expm1(-y))


@dataclass
class QuantizerConfig:
    bits: int = 8
    alpha_init: float = 4.0

    def __post_init__(self):
        if not 2 <= self.bits <= 16:
            raise ValueError(f"quant.bits must lie in [2, 16], got {self.bits}")
        if self.alpha_init <= 0:
            raise ValueError("quant.alpha_init must be positive")

    @property
    def qmax(self) -> int:
        return 2 ** (self.bits - 1) - 1


def normalize(z: Tensor) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Standardise each token row across the feature axis: (z - mu) / (sigma + eps)."""
    mu = tn.mean(z, axis=-1, keepdims=True)
    sd = tn.std(z, axis=-1, keepdims=True)
    zhat = (z - mu) / (sd + EPS)
    return zhat, mu.data.copy(), sd.data.copy()


class Quantizer(Module):
    """``Z_q = clip(round(alpha * Z_hat))`` with alpha = softplus(alpha_raw).

    ``rounding=False`` replaces the rounding by the identity so the whole
    pipeline becomes smooth; gradient checks use it.
    """

    def __init__(self, cfg: QuantizerConfig):
        self.cfg = cfg
        self.alpha_raw = param(np.array(inverse_softplus(cfg.alpha_init)))
        self.training = True
        self.rounding = True

    @property
    def alpha(self) -> Tensor:
        return tn.softplus(self.alpha_raw)

    def quantize(self, zhat: Tensor) -> Tensor:
        q = self.cfg.qmax
        if self.rounding:
            return tn.ste_round_scaled(zhat, self.alpha, -q, q)
        return zhat * self.alpha

    def symbol_histogram(self, zq: Tensor) -> Tensor:
        """Soft symbol-usage distribution over the clip-range alphabet (training only)."""
        if not self.training:
            raise ModeError("symbol statistics are only computed in training mode")
        return symbol_histogram(zq, self.cfg.bits)


def symbol_histogram(zq: Tensor, bits: int) -> Tensor:
    q = 2 ** (bits - 1) - 1
    counts = tn.triangular_histogram(zq, -q, q)
    return counts / tn.tsum(counts)


# power normalisation ---------------------------------------------------------

def _gain_mantissa_bits(bits: int) -> int:
    # q * gain stays exact when the gain mantissa plus the symbol magnitude fit in 53 bits
    return 52 - (bits - 1)


def snap_gain(gain: np.ndarray, bits: int) -> np.ndarray:
    """Round ``gain`` to a short mantissa so ``q * gain`` is exact for b-bit integers."""
    m, e = np.frexp(np.asarray(gain, dtype=np.float64))
    mb = _gain_mantissa_bits(bits)
    return np.ldexp(np.round(m * 2.0**mb) / 2.0**mb, e)


def power_normalize(zq: Tensor, bits: int = 8) -> tuple[Tensor, np.ndarray]:
    """Scale each sample to unit mean-square power.

    Returns the channel symbols and the per-sample scale ``s`` (shape (B, 1, 1)),
    ``s = sqrt(mean(Z_q**2))`` or 1 for an all-zero payload. The symbols are
    formed as ``Z_q * g`` with ``g`` a short-mantissa approximation of ``1/s``
    (relative error < 2**-45 at 8 bits), which makes the product exact and
    the noiseless round trip bit-exact.
    """
    gain = power_gain(zq, bits)
    return zq * gain, 1.0 / gain.data


def power_gain(zq: Tensor, bits: int = 8) -> Tensor:
    """Per-sample snapped ``1/sqrt(mean(Z_q**2))`` (1 for all-zero samples), shape (B, 1, ...)."""
    axes = tuple(range(1, zq.ndim))
    ms = tn.mean(zq * zq, axis=axes, keepdims=True)
    ms = ms + Tensor((ms.data == 0).astype(np.float64))
    inv = 1.0 / tn.sqrt(ms)
    return tn.substitute(inv, snap_gain(inv.data, bits))


def power_denormalize(y: Tensor, s: np.ndarray | Tensor, bits: int = 8) -> Tensor:
    """Undo :func:`power_normalize`: divide by the same snapped gain (i.e. multiply by ``s``)."""
    if isinstance(s, Tensor):
        gain = tn.substitute(1.0 / s, snap_gain(1.0 / s.data, bits))
    else:
        gain = Tensor(snap_gain(1.0 / np.asarray(s, dtype=np.float64), bits))
    return y / gain


@dataclass
class QuantizedPayload:
    """Transmit-side record: integer symbols, normalisation stats, power scale, kept indices."""

    symbols: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    power_scale: np.ndarray
    indices: np.ndarray | None = None
